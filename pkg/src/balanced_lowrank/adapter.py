"""Structured task updates ``dW = s * U @ V.T`` with orthonormal U and V.

Every materialized update has all r singular values equal to ``|s|``, so the
adaptation energy is spread evenly across its rank-one components.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import IO

import numpy as np

from .errors import BalancedLowRankError, InvalidInput, ParseError, RankDeficient
from .linalg import NumberedLines, as_matrix, read_matrix, thin_svd, write_matrix
from .manifold import ConstraintBasis, RestrictedStiefelPoint, complement_project, random_feasible
from .optimizer import plain_point

logger = logging.getLogger(__name__)

S_MIN = 0.002
S_MAX = 0.010
RANK_TOL = 1e-10


@dataclass(frozen=True)
class TaskUpdate:
    s: float
    u: RestrictedStiefelPoint
    v: RestrictedStiefelPoint
    layer_index: int = 1

    def __post_init__(self):
        if self.u.r != self.v.r:
            raise InvalidInput(f"U rank {self.u.r} != V rank {self.v.r}")
        if self.v.constraint.k:
            raise InvalidInput("V must be a plain Stiefel point")
        if not np.isfinite(self.s):
            raise InvalidInput("scale must be finite")
        object.__setattr__(self, "s", float(self.s))

    @property
    def rank(self) -> int:
        return self.u.r

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.u.shape[0], self.v.u.shape[0]


def _basis_of(memory_or_basis, d: int) -> ConstraintBasis:
    if memory_or_basis is None:
        return ConstraintBasis.empty(d)
    return getattr(memory_or_basis, "basis", memory_or_basis)


def init_directions(snapshot, memory=None, r: int = 1, pad_random: bool = False, rng=None):
    """Leading singular directions of the snapshot after removing stored directions.

    Args:
        snapshot: d x n layer-gradient estimate.
        memory: a ``GradientMemory`` or ``ConstraintBasis`` (``None`` = empty).
        r: adapter rank.
        pad_random: when the projected snapshot has rank q < r, fill the
            remaining r - q columns with random feasible directions instead of
            raising.
        rng: seed or Generator for the padding.

    Returns:
        ``(u0, v0)`` as points; ``u0`` is feasible for the memory's basis.
    """
    snap = as_matrix(snapshot, "snapshot")
    d, n = snap.shape
    basis = _basis_of(memory, d)
    if r < 1 or r > n or r + basis.k > d:
        raise InvalidInput(f"rank {r} incompatible with snapshot {snap.shape} and k = {basis.k}")
    proj = complement_project(basis, snap)
    u, sigma, v = thin_svd(proj)
    q = int(np.count_nonzero(sigma > RANK_TOL * sigma[0]))
    if q >= r:
        return RestrictedStiefelPoint(u[:, :r], basis), plain_point(v[:, :r])
    if not pad_random:
        raise RankDeficient(f"projected snapshot has rank {q} < requested rank {r}")

    logger.info("projected snapshot rank %d < %d; padding with random feasible directions", q, r)
    rng = np.random.default_rng(rng)
    u_fixed, v_fixed = u[:, :q], v[:, :q]
    u_extra = random_feasible(
        ConstraintBasis(np.hstack([basis.g, u_fixed])), d, r - q, rng
    ).u
    v_extra = random_feasible(ConstraintBasis(v_fixed), n, r - q, rng).u
    u0 = RestrictedStiefelPoint(np.hstack([u_fixed, u_extra]), basis)
    return u0, plain_point(np.hstack([v_fixed, v_extra]))


def init_scale(layer: int, n_layers: int, s_min: float = S_MIN, s_max: float = S_MAX) -> float:
    """Depth-aware initial magnitude, linear from ``s_min`` (layer 1) to ``s_max`` (layer L)."""
    if n_layers < 1:
        raise InvalidInput(f"n_layers must be at least 1, got {n_layers}")
    if not 1 <= layer <= n_layers:
        raise InvalidInput(f"layer {layer} outside 1..{n_layers}")
    if n_layers == 1:
        return float(s_min)
    return s_min + (layer - 1) / (n_layers - 1) * (s_max - s_min)


def materialize(update: TaskUpdate) -> np.ndarray:
    return update.s * (update.u.u @ update.v.u.T)


def apply(w_prev, update: TaskUpdate) -> np.ndarray:
    w_prev = as_matrix(w_prev, "w_prev")
    if w_prev.shape != update.shape:
        raise InvalidInput(f"weight shape {w_prev.shape} != update shape {update.shape}")
    return w_prev + materialize(update)


# -- checkpoint format -------------------------------------------------------
#
# Per layer: a line "layer r s", then U and V in the repo matrix text format.


def write_updates(updates, fh: IO[str]) -> None:
    for upd in updates:
        fh.write(f"{upd.layer_index} {upd.rank} {upd.s:.17g}\n")
        write_matrix(upd.u.u, fh)
        write_matrix(upd.v.u, fh)


def read_updates(lines: NumberedLines, basis=None) -> list[TaskUpdate]:
    """Read every update block until end of input.

    Stored U frames are validated against ``basis`` (``None`` = orthonormality
    only), since the checkpoint does not carry the memory it was trained under.
    """
    out = []
    for lineno, header in lines:
        if not header.strip():
            continue
        try:
            layer_s, r_s, s_s = header.split()
            layer, r, s = int(layer_s), int(r_s), float(s_s)
        except ValueError:
            raise ParseError(f"bad update header {header.strip()!r}", lineno) from None
        u = read_matrix(lines)
        v = read_matrix(lines)
        if u.shape[1] != r or v.shape[1] != r:
            raise ParseError(f"factor ranks {u.shape[1]}, {v.shape[1]} != header rank {r}", lineno)
        b = basis if basis is not None else ConstraintBasis.empty(u.shape[0])
        try:
            out.append(TaskUpdate(s, RestrictedStiefelPoint(u, b), plain_point(v), layer))
        except BalancedLowRankError as exc:
            raise ParseError(str(exc), lineno) from None
    return out


def save_updates(path, updates) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_updates(updates, fh)


def load_updates(path, basis=None) -> list[TaskUpdate]:
    with open(path, encoding="utf-8") as fh:
        return read_updates(NumberedLines(fh), basis)
