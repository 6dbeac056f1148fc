"""Dense double-precision kernels used by every other module.

All functions are pure. Factorizations use a fixed sign convention so results
are reproducible bit for bit: within each column of the left factor, the entry
of largest magnitude is made nonnegative (first occurrence wins ties), and the
matching right-factor column is flipped with it.
"""

from __future__ import annotations

from typing import IO, Iterable, NamedTuple

import numpy as np

from .errors import InvalidInput, NearSingular, ParseError

EPS_WHITEN_REL = 1e-12


class ThinSvd(NamedTuple):
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array or raise :class:`InvalidInput`."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInput(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInput(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains NaN or Inf")
    return arr


def _require_square(a: np.ndarray, name: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise InvalidInput(f"{name} must be square, got {a.shape}")


def _fix_signs(left: np.ndarray, right: np.ndarray | None = None):
    idx = np.argmax(np.abs(left), axis=0)
    signs = np.sign(left[idx, np.arange(left.shape[1])])
    signs[signs == 0] = 1.0
    left = left * signs
    if right is not None:
        right = right * signs
    return left, right


def thin_svd(a) -> ThinSvd:
    """Compact SVD ``a = u @ diag(sigma) @ v.T`` with k = min(m, n) columns."""
    a = as_matrix(a)
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    u, v = _fix_signs(u, vt.T)
    return ThinSvd(np.ascontiguousarray(u), sigma, np.ascontiguousarray(v))


def sym_part(a) -> np.ndarray:
    """Symmetric part ``(a + a.T) / 2``; the result is exactly symmetric."""
    a = as_matrix(a)
    _require_square(a, "sym_part input")
    return 0.5 * (a + a.T)


def sym_eig(s):
    """Eigendecomposition of a symmetric matrix, eigenvalues in descending order.

    The input is symmetrized before factorizing, so tiny asymmetries from
    rounding are tolerated.
    """
    s = as_matrix(s)
    _require_square(s, "sym_eig input")
    lam, q = np.linalg.eigh(sym_part(s))
    lam = lam[::-1].copy()
    q, _ = _fix_signs(q[:, ::-1])
    return np.ascontiguousarray(q), lam


def eps_whiten(lambda_max: float) -> float:
    return EPS_WHITEN_REL * max(1.0, float(lambda_max))


def inv_sqrt_spd(s) -> np.ndarray:
    """Symmetric inverse square root M with ``M @ s @ M = I``.

    Raises:
        NearSingular: if the smallest eigenvalue is below the whitening floor
            ``1e-12 * max(1, lambda_max)``.
    """
    q, lam = sym_eig(s)
    floor = eps_whiten(lam[0])
    if lam[-1] < floor:
        raise NearSingular(
            f"smallest eigenvalue {lam[-1]:.3e} below whitening floor {floor:.3e}",
            eigenvalue=float(lam[-1]),
        )
    m = (q / np.sqrt(lam)) @ q.T
    return 0.5 * (m + m.T)


def fro_inner(a, b) -> float:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise InvalidInput(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def fro_norm(a) -> float:
    return float(np.linalg.norm(as_matrix(a)))


# -- matrix text format ------------------------------------------------------
#
# First line "rows cols", then `rows` lines of `cols` space-separated floats
# printed with 17 significant digits, which round-trips every finite double.


def format_matrix(a) -> str:
    a = as_matrix(a)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    lines.extend(" ".join(f"{x:.17g}" for x in row) for row in a)
    return "\n".join(lines) + "\n"


def write_matrix(a, fh: IO[str]) -> None:
    fh.write(format_matrix(a))


def read_matrix(lines, first_line: int = 1) -> np.ndarray:
    """Parse one matrix block from an iterator of lines.

    ``lines`` may be any iterable of strings or a :class:`NumberedLines`;
    passing the same ``NumberedLines`` repeatedly reads consecutive blocks
    from one stream and keeps error line numbers accurate.
    """
    it = lines if isinstance(lines, NumberedLines) else NumberedLines(lines, first_line)
    try:
        lineno, header = next(it)
    except StopIteration:
        raise ParseError("expected matrix header, found end of input") from None
    parts = header.split()
    try:
        rows, cols = (int(p) for p in parts)
    except ValueError:
        raise ParseError(f"bad matrix header {header.strip()!r}", lineno) from None
    if rows < 1 or cols < 1:
        raise ParseError(f"matrix dimensions must be positive, got {rows} {cols}", lineno)
    out = np.empty((rows, cols), dtype=np.float64)
    for i in range(rows):
        try:
            lineno, text = next(it)
        except StopIteration:
            raise ParseError(f"matrix truncated after {i} of {rows} rows") from None
        fields = text.split()
        if len(fields) != cols:
            raise ParseError(f"expected {cols} values, found {len(fields)}", lineno)
        try:
            out[i] = [float(f) for f in fields]
        except ValueError:
            raise ParseError(f"non-numeric entry in {text.strip()!r}", lineno) from None
    if not np.all(np.isfinite(out)):
        raise ParseError("matrix contains NaN or Inf", lineno)
    return out


class NumberedLines:
    """Iterator over ``(line_number, text)`` that remembers its position."""

    def __init__(self, lines: Iterable[str], start: int = 1):
        self._it = iter(lines)
        self.lineno = start - 1

    def __iter__(self):
        return self

    def __next__(self):
        text = next(self._it)
        self.lineno += 1
        return self.lineno, text


def load_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return read_matrix(NumberedLines(fh))


def save_matrix(path, a) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_matrix(a, fh)
