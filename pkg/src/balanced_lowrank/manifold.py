"""Restricted Stiefel manifold: orthonormal d x r frames orthogonal to a stored basis.

The feasible set is ``{U : U.T @ U = I_r, G.T @ U = 0}`` for a basis G with
orthonormal columns. Its tangent space at U is
``{Z : U.T @ Z + Z.T @ U = 0, G.T @ Z = 0}``.

An empty basis (k = 0) is a first-class case: every G term is skipped and the
geometry reduces to the plain Stiefel manifold.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleDimensions, InfeasiblePoint, InvalidInput, NearSingular, RankDeficient
from .linalg import as_matrix, eps_whiten, inv_sqrt_spd, sym_part, thin_svd

logger = logging.getLogger(__name__)

TOL_FEAS = 1e-8
DRIFT_LIMIT = 1e-6
BASIS_TOL = 1e-10

# Whitening is used for small, well-conditioned frames; the SVD polar factor otherwise.
_WHITEN_MAX_RANK = 8
_WHITEN_MAX_COND = 1e4

drift_repairs = {"count": 0}


@dataclass(frozen=True)
class ConstraintBasis:
    """Orthonormal columns spanning directions a new update must avoid."""

    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] < 1:
            raise InvalidInput(f"basis must be d x k with d >= 1, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise InvalidInput("basis contains NaN or Inf")
        if g.shape[1] > g.shape[0]:
            raise InvalidInput(f"basis has more columns ({g.shape[1]}) than rows ({g.shape[0]})")
        if g.shape[1]:
            err = np.linalg.norm(g.T @ g - np.eye(g.shape[1]))
            if err > BASIS_TOL:
                raise InvalidInput(f"basis columns not orthonormal (residual {err:.3e})")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @classmethod
    def empty(cls, d: int) -> "ConstraintBasis":
        return cls(np.zeros((d, 0)))

    @property
    def d(self) -> int:
        return self.g.shape[0]

    @property
    def k(self) -> int:
        return self.g.shape[1]


@dataclass(frozen=True)
class RestrictedStiefelPoint:
    """A feasible frame, validated against the basis it is stored with."""

    u: np.ndarray
    constraint: ConstraintBasis = field(repr=False)

    def __post_init__(self):
        u = as_matrix(self.u, "u")
        if u.shape[0] != self.constraint.d:
            raise InvalidInput(f"u has {u.shape[0]} rows, basis expects {self.constraint.d}")
        r = u.shape[1]
        if r + self.constraint.k > self.constraint.d:
            raise InfeasibleDimensions(
                f"r + k = {r + self.constraint.k} exceeds d = {self.constraint.d}"
            )
        ortho, cons = feasibility_residuals(self.constraint, u)
        if max(ortho, cons) > TOL_FEAS:
            raise InfeasiblePoint(
                f"point violates constraints: |U'U - I| = {ortho:.3e}, |G'U| = {cons:.3e}"
            )
        u = u.copy()
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def shape(self):
        return self.u.shape

    @property
    def r(self) -> int:
        return self.u.shape[1]


def _check_rows(basis: ConstraintBasis, z: np.ndarray) -> None:
    if z.shape[0] != basis.d:
        raise InvalidInput(f"expected {basis.d} rows, got {z.shape[0]}")


def complement_project(basis: ConstraintBasis, z) -> np.ndarray:
    """Apply ``I - G G^T`` to ``z``."""
    z = as_matrix(z, "z")
    _check_rows(basis, z)
    if basis.k == 0:
        return z.copy()
    g = basis.g
    return z - g @ (g.T @ z)


def feasibility_residuals(basis: ConstraintBasis, u) -> tuple[float, float]:
    """Frobenius residuals ``(|U^T U - I|, |G^T U|)``."""
    u = np.asarray(u, dtype=np.float64)
    ortho = float(np.linalg.norm(u.T @ u - np.eye(u.shape[1])))
    cons = float(np.linalg.norm(basis.g.T @ u)) if basis.k else 0.0
    return ortho, cons


def is_feasible(basis: ConstraintBasis, u, tol: float = TOL_FEAS) -> bool:
    u = as_matrix(u, "u")
    if u.shape[0] != basis.d:
        raise InvalidInput(f"expected {basis.d} rows, got {u.shape[0]}")
    return max(feasibility_residuals(basis, u)) <= tol


def tangent_residuals(point: RestrictedStiefelPoint, z) -> tuple[float, float]:
    z = np.asarray(z, dtype=np.float64)
    u = point.u
    skew = float(np.linalg.norm(u.T @ z + z.T @ u))
    cons = float(np.linalg.norm(point.constraint.g.T @ z)) if point.constraint.k else 0.0
    return skew, cons


def is_tangent(point: RestrictedStiefelPoint, z, tol: float = TOL_FEAS) -> bool:
    z = as_matrix(z, "z")
    if z.shape != point.shape:
        raise InvalidInput(f"tangent candidate shape {z.shape} != point shape {point.shape}")
    return max(tangent_residuals(point, z)) <= tol


def tangent_project(point: RestrictedStiefelPoint, z) -> np.ndarray:
    """Frobenius-orthogonal projection of ``z`` onto the tangent space at ``point``.

    First removes the component along the stored basis, then the symmetric
    part of ``U^T Z0`` along U.
    """
    z = as_matrix(z, "z")
    if z.shape != point.shape:
        raise InvalidInput(f"z shape {z.shape} != point shape {point.shape}")
    z0 = complement_project(point.constraint, z)
    u = point.u
    return z0 - u @ sym_part(u.T @ z0)


def _polar_svd(y: np.ndarray) -> np.ndarray:
    q, sigma, p = thin_svd(y)
    if sigma[-1] ** 2 < eps_whiten(sigma[0] ** 2):
        raise RankDeficient(
            f"projected iterate lost rank (sigma_min = {sigma[-1]:.3e}); "
            "it collapsed into the constrained subspace"
        )
    return q @ p.T


def _polar_whiten(y: np.ndarray) -> np.ndarray:
    try:
        return y @ inv_sqrt_spd(y.T @ y)
    except NearSingular as exc:
        raise RankDeficient(f"projected iterate lost rank: {exc}") from exc


def retract_frame(basis: ConstraintBasis, u_tilde, method: str = "auto") -> np.ndarray:
    """Return the nearest feasible frame to ``u_tilde`` as a bare array.

    ``method`` selects ``"svd"`` (polar factor ``Q P^T`` of the thin SVD),
    ``"whiten"`` (``Y (Y^T Y)^{-1/2}``) or ``"auto"``. The two routes agree to
    rounding; auto whitens small well-conditioned frames and falls back to the
    SVD otherwise.
    """
    u_tilde = as_matrix(u_tilde, "u_tilde")
    y = complement_project(basis, u_tilde)
    if method == "svd":
        return _polar_svd(y)
    if method == "whiten":
        return _polar_whiten(y)
    if method != "auto":
        raise InvalidInput(f"unknown retraction method {method!r}")
    if y.shape[1] <= _WHITEN_MAX_RANK:
        gram = y.T @ y
        eig = np.linalg.eigvalsh(gram)
        if eig[0] > 0 and eig[-1] / eig[0] < _WHITEN_MAX_COND:
            return _polar_whiten(y)
    return _polar_svd(y)


def retract(basis: ConstraintBasis, u_tilde, method: str = "auto") -> RestrictedStiefelPoint:
    """Map an ambient iterate to the closest point of the restricted manifold."""
    return RestrictedStiefelPoint(retract_frame(basis, u_tilde, method), basis)


def as_point(basis: ConstraintBasis, u, limit: float = DRIFT_LIMIT) -> RestrictedStiefelPoint:
    """Validate a raw frame, repairing small drift by re-retraction.

    Residuals up to ``TOL_FEAS`` pass unchanged; up to ``limit`` the frame is
    retracted again and the repair is counted in ``drift_repairs``; anything
    larger is rejected.
    """
    u = as_matrix(u, "u")
    if u.shape[0] != basis.d:
        raise InvalidInput(f"expected {basis.d} rows, got {u.shape[0]}")
    worst = max(feasibility_residuals(basis, u))
    if worst <= TOL_FEAS:
        return RestrictedStiefelPoint(u, basis)
    if worst > limit:
        raise InfeasiblePoint(f"point drifted beyond repair (residual {worst:.3e})")
    drift_repairs["count"] += 1
    logger.warning("repairing feasibility drift %.3e by re-retraction", worst)
    return retract(basis, u)


def random_feasible(basis: ConstraintBasis, d: int, r: int, rng_seed) -> RestrictedStiefelPoint:
    """Draw a feasible frame, deterministic in ``rng_seed``."""
    if d != basis.d:
        raise InvalidInput(f"d = {d} does not match basis dimension {basis.d}")
    if r < 1:
        raise InvalidInput(f"rank must be positive, got {r}")
    if r + basis.k > d:
        raise InfeasibleDimensions(f"r + k = {r + basis.k} exceeds d = {d}")
    if r + basis.k == d:
        warnings.warn(
            f"r + k = d = {d}: the feasible set is a finite orthogonal completion "
            "and the tangent space may be trivial",
            stacklevel=2,
        )
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    z = rng.standard_normal((d, r))
    return retract(basis, z, method="svd")
