"""Gradient projection memory: an orthonormal basis of past-task gradient directions.

After each task the memory absorbs the leading left singular vectors of the
task's gradient snapshot (with the already-stored part removed) until the
stored subspace captures an ``epsilon`` fraction of the snapshot energy.
"""

from __future__ import annotations

from typing import IO

import numpy as np

from .errors import CapacityExhausted, InvalidInput, ParseError
from .linalg import NumberedLines, as_matrix, read_matrix, thin_svd, write_matrix
from .manifold import ConstraintBasis, complement_project

DEFAULT_EPSILON = 0.95


def energy_rank(captured: float, sigma, total: float, epsilon: float) -> int:
    """Smallest r with ``captured + sum(sigma[:r]**2) >= epsilon * total``.

    If rounding keeps the inclusive bound out of reach, every nonzero
    direction is taken.
    """
    target = epsilon * total
    if captured >= target:
        return 0
    energy = captured + np.cumsum(np.asarray(sigma, dtype=np.float64) ** 2)
    hits = np.nonzero(energy >= target)[0]
    if hits.size:
        return int(hits[0]) + 1
    return int(np.count_nonzero(sigma > 0))


class GradientMemory:
    """Per-layer memory of gradient directions, grown task by task.

    Args:
        d: ambient (output) dimension of the layer.
        epsilon: fraction of snapshot energy the memory must capture.
    """

    def __init__(self, d: int, epsilon: float = DEFAULT_EPSILON):
        if int(d) < 1:
            raise InvalidInput(f"d must be positive, got {d}")
        if not 0.0 < epsilon <= 1.0:
            raise InvalidInput(f"epsilon must lie in (0, 1], got {epsilon}")
        self.epsilon = float(epsilon)
        self.basis = ConstraintBasis.empty(int(d))
        self.history: list[int] = []

    def __repr__(self):
        return f"GradientMemory(d={self.d}, k={self.k}, epsilon={self.epsilon})"

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def k(self) -> int:
        return self.basis.k

    def project_out(self, z) -> np.ndarray:
        return complement_project(self.basis, z)

    def residual_energy(self, snapshot) -> float:
        """Energy of ``snapshot`` left outside the stored subspace."""
        return float(np.sum(self.project_out(snapshot) ** 2))

    def update(self, snapshot) -> int:
        """Absorb a d x m gradient snapshot; returns how many directions were added."""
        snap = as_matrix(snapshot, "snapshot")
        if snap.shape[0] != self.d:
            raise InvalidInput(f"snapshot has {snap.shape[0]} rows, memory expects {self.d}")
        total = float(np.sum(snap**2))
        if total == 0.0:
            raise InvalidInput("snapshot is identically zero")

        g = self.basis.g
        captured = float(np.sum((g.T @ snap) ** 2)) if self.k else 0.0
        residual = self.project_out(snap)
        u, sigma, _ = thin_svd(residual)
        r_t = energy_rank(captured, sigma, total, self.epsilon)
        if r_t == 0:
            self.history.append(0)
            return 0
        if self.k + r_t > self.d:
            raise CapacityExhausted(
                f"adding {r_t} directions to {self.k} would exceed dimension {self.d}"
            )
        self.basis = ConstraintBasis(_append_orthonormal(g, u[:, :r_t]))
        self.history.append(r_t)
        return r_t


def _append_orthonormal(g: np.ndarray, new: np.ndarray) -> np.ndarray:
    # Two Gram-Schmidt passes against the stored columns, then a sign-fixed QR
    # of the new block; stored columns are kept verbatim.
    for _ in range(2):
        if g.shape[1]:
            new = new - g @ (g.T @ new)
    q, r = np.linalg.qr(new)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return np.hstack([g, q * signs])


def project_out(memory: GradientMemory, z) -> np.ndarray:
    return memory.project_out(z)


# -- checkpoint format -------------------------------------------------------
#
# One block per layer: a line "epsilon k d", followed (when k > 0) by the d x k
# basis in the repo matrix text format.


def write_memory(memory: GradientMemory, fh: IO[str]) -> None:
    fh.write(f"{memory.epsilon:.17g} {memory.k} {memory.d}\n")
    if memory.k:
        write_matrix(memory.basis.g, fh)


def read_memory(lines: NumberedLines) -> GradientMemory | None:
    """Read one memory block; returns ``None`` at end of input."""
    try:
        lineno, header = next(lines)
    except StopIteration:
        return None
    try:
        eps_s, k_s, d_s = header.split()
        epsilon, k, d = float(eps_s), int(k_s), int(d_s)
        memory = GradientMemory(d, epsilon)
    except (ValueError, InvalidInput):
        raise ParseError(f"bad memory header {header.strip()!r}", lineno) from None
    if k:
        g = read_matrix(lines)
        if g.shape != (d, k):
            raise ParseError(f"basis shape {g.shape} does not match header ({d}, {k})", lineno)
        try:
            memory.basis = ConstraintBasis(g)
        except InvalidInput as exc:
            raise ParseError(str(exc), lineno) from None
    return memory


def save_memories(path, memories) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for memory in memories:
            write_memory(memory, fh)


def load_memories(path) -> list[GradientMemory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        lines = NumberedLines(fh)
        while (memory := read_memory(lines)) is not None:
            out.append(memory)
    return out
