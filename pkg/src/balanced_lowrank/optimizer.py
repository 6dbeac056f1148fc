"""Projected first-order steps on the restricted Stiefel manifold.

A constrained step projects the Euclidean gradient onto the tangent space,
hands it to an ordinary inner optimizer (SGD-momentum or Adam), projects the
resulting increment back onto the tangent space, applies it and retracts.
Optimizer moments live in ambient coordinates and are not transported between
steps unless ``project_moments`` is set.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidInput
from .linalg import as_matrix
from .manifold import ConstraintBasis, RestrictedStiefelPoint, retract, tangent_project

KINDS = ("sgd_momentum", "adam")


@dataclass(frozen=True)
class InnerOptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-2
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 0.0
    project_moments: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"optimizer kind must be one of {KINDS}, got {self.kind!r}")
        if not self.learning_rate > 0:
            raise InvalidInput(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("momentum", "beta1", "beta2"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise InvalidInput(f"{name} must lie in [0, 1), got {val}")
        if not self.eps_adam > 0:
            raise InvalidInput(f"eps_adam must be positive, got {self.eps_adam}")
        if self.weight_decay < 0:
            raise InvalidInput(f"weight_decay must be nonnegative, got {self.weight_decay}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OptState:
    """Moment buffers for one parameter; ``None`` buffers mean all zeros."""

    step_count: int = 0
    first: np.ndarray | None = field(default=None, repr=False)
    second: np.ndarray | None = field(default=None, repr=False)


def inner_step(g, state: OptState, cfg: InnerOptimizerConfig):
    """One Euclidean optimizer update; returns ``(delta, new_state)``."""
    g = as_matrix(g, "gradient")
    m = np.zeros_like(g) if state.first is None else state.first
    if m.shape != g.shape:
        raise InvalidInput(f"gradient shape {g.shape} does not match state {m.shape}")
    t = state.step_count + 1
    if cfg.kind == "sgd_momentum":
        m = cfg.momentum * m + g
        return -cfg.learning_rate * m, OptState(t, m, None)

    v = np.zeros_like(g) if state.second is None else state.second
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    delta = -cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
    return delta, OptState(t, m, v)


def step_constrained(point: RestrictedStiefelPoint, euclid_grad, state: OptState, cfg: InnerOptimizerConfig):
    """One projected step for a frame on the restricted manifold.

    Returns ``(new_point, new_state)``. Raises ``RankDeficient`` if the
    updated frame collapses into the stored subspace.
    """
    grad = as_matrix(euclid_grad, "gradient")
    if grad.shape != point.shape:
        raise InvalidInput(f"gradient shape {grad.shape} != point shape {point.shape}")
    g = tangent_project(point, grad)
    delta, state = inner_step(g, state, cfg)
    if cfg.project_moments:
        state = replace(state, first=tangent_project(point, state.first))
    delta = tangent_project(point, delta)
    return retract(point.constraint, point.u + delta), state


def step_v(v: RestrictedStiefelPoint, euclid_grad, state: OptState, cfg: InnerOptimizerConfig):
    """Plain Stiefel step for the right factor (empty constraint)."""
    if v.constraint.k:
        raise InvalidInput("step_v expects a point with an empty constraint basis")
    return step_constrained(v, euclid_grad, state, cfg)


def step_scale(s: float, grad: float, state: OptState, cfg: InnerOptimizerConfig):
    """Euclidean step for the scalar magnitude, with optional decoupled decay."""
    s = float(s)
    grad = float(grad)
    if not (np.isfinite(s) and np.isfinite(grad)):
        raise InvalidInput("scale and its gradient must be finite")
    delta, state = inner_step(np.array([[grad]]), state, cfg)
    s_new = s + float(delta[0, 0])
    if cfg.weight_decay:
        s_new -= cfg.learning_rate * cfg.weight_decay * s
    return s_new, state


def plain_point(v) -> RestrictedStiefelPoint:
    """Wrap an orthonormal frame as a point with no stored constraint."""
    v = as_matrix(v, "v")
    return RestrictedStiefelPoint(v, ConstraintBasis.empty(v.shape[0]))
