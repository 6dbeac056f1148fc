"""Singular-value spectra of task updates: imbalance statistics, smoothing, merging, NAI."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .errors import DegenerateBaseline, InvalidInput
from .linalg import as_matrix, thin_svd

EPS_NAI = 1e-9


@dataclass(frozen=True)
class SpectrumReport:
    """Descending singular values with imbalance statistics.

    ``variance`` and ``cv`` are computed on the raw values;
    ``normalized_variance`` on the values divided by the largest one.
    """

    sigma: np.ndarray
    normalized: np.ndarray
    variance: float
    normalized_variance: float
    cv: float

    @classmethod
    def from_sigma(cls, sigma) -> "SpectrumReport":
        sigma = np.sort(np.asarray(sigma, dtype=np.float64))[::-1]
        if sigma.size and sigma[0] > 0:
            normalized = sigma / sigma[0]
        else:
            normalized = np.zeros_like(sigma)
        variance = float(np.var(sigma)) if sigma.size else 0.0
        mean = float(np.mean(sigma)) if sigma.size else 0.0
        cv = float(np.std(sigma) / mean) if mean > 0 else 0.0
        nvar = float(np.var(normalized)) if sigma.size else 0.0
        return cls(sigma, normalized, variance, nvar, cv)


def spectrum(delta_w, rank: int | None = None) -> SpectrumReport:
    """Spectrum of a matrix; ``rank`` keeps only the leading values (a known rank-r product)."""
    sigma = thin_svd(delta_w).sigma
    if rank is not None:
        if not 1 <= rank <= sigma.size:
            raise InvalidInput(f"rank {rank} outside 1..{sigma.size}")
        sigma = sigma[:rank]
    return SpectrumReport.from_sigma(sigma)


def smooth(sigma, alpha: float) -> np.ndarray:
    """Pull each value toward the mean: ``(1 - alpha) * sigma + alpha * mean(sigma)``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0:
        raise InvalidInput("sigma must be a nonempty vector")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInput(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return sigma.copy()
    return (1.0 - alpha) * sigma + alpha * sigma.mean()


def rebuild(u, sigma, v) -> np.ndarray:
    """``u[:, :k] @ diag(sigma) @ v[:, :k].T`` with k = len(sigma)."""
    u = as_matrix(u, "u")
    v = as_matrix(v, "v")
    sigma = np.asarray(sigma, dtype=np.float64)
    k = sigma.size
    if sigma.ndim != 1 or k > u.shape[1] or k > v.shape[1]:
        raise InvalidInput(f"{k} singular values do not fit factors {u.shape}, {v.shape}")
    return (u[:, :k] * sigma) @ v[:, :k].T


def smooth_matrix(delta_w, alpha: float, rank: int | None = None) -> np.ndarray:
    """Smooth the leading ``rank`` singular values of a matrix, keeping its singular vectors.

    Values beyond ``rank`` are dropped, which is exact for a rank-r adapter
    product. ``rank=None`` smooths the full thin spectrum.
    """
    u, sigma, v = thin_svd(delta_w)
    if rank is not None:
        if not 1 <= rank <= sigma.size:
            raise InvalidInput(f"rank {rank} outside 1..{sigma.size}")
        sigma = sigma[:rank]
    return rebuild(u, smooth(sigma, alpha), v)


def merge(deltas: Sequence) -> np.ndarray:
    """Task-arithmetic merge: elementwise sum of same-shaped updates."""
    if len(deltas) == 0:
        raise InvalidInput("nothing to merge")
    mats = [as_matrix(d, "delta") for d in deltas]
    shape = mats[0].shape
    out = mats[0].copy()
    for m in mats[1:]:
        if m.shape != shape:
            raise InvalidInput(f"shape mismatch {m.shape} vs {shape}")
        out += m
    return out


def nai(a_merged: float, a_zero_shot: float, a_individual: float, eps: float = EPS_NAI) -> float:
    """Normalized accuracy improvement ``(merged - zero) / (individual - zero)``."""
    denom = a_individual - a_zero_shot
    if abs(denom) < eps:
        raise DegenerateBaseline(
            f"individual accuracy {a_individual} equals zero-shot {a_zero_shot}"
        )
    return (a_merged - a_zero_shot) / denom


def write_spectrum_csv(report: SpectrumReport, fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["index", "sigma", "normalized"])
    for i, (s, n) in enumerate(zip(report.sigma, report.normalized), start=1):
        writer.writerow([i, f"{s:.17g}", f"{n:.17g}"])
    fh.write(
        f"# variance={report.variance:.17g} normalized_variance={report.normalized_variance:.17g} "
        f"cv={report.cv:.17g}\n"
    )
