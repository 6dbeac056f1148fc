"""Sequential low-rank adaptation of a deep linear network, with an sklearn interface.

Each ``partial_fit(X, Y)`` call is one task of a continual-learning stream.
``BalancedLowRankRegressor`` learns every task as ``s * U @ V.T`` per layer,
with U kept orthogonal to a per-layer gradient memory; ``LowRankFinetuneRegressor``
is the unconstrained ``B @ A`` counterpart trained with the same optimizer
settings.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adapter import S_MAX, S_MIN, TaskUpdate, init_directions, init_scale, materialize
from .errors import BalancedLowRankError, InvalidInput, TaskAborted
from .gpm import DEFAULT_EPSILON, GradientMemory
from .linear_net import adapter_grads, check_stack, factor_grads, forward, loss_and_grads, random_stack
from .optimizer import InnerOptimizerConfig, OptState, inner_step, step_constrained, step_scale, step_v
from .streams import stream


def gradient_snapshots(weights, x, y, n_batches: int, batch_size: int, rng) -> list[np.ndarray]:
    """Per-layer stacks of minibatch gradients, each scaled to unit Frobenius norm.

    Returns one array of shape ``(n_batches, d_l, n_l)`` per layer.
    """
    n = x.shape[0]
    size = min(batch_size, n)
    per_layer = [[] for _ in weights]
    for _ in range(n_batches):
        idx = rng.choice(n, size=size, replace=False)
        _, grads = loss_and_grads(weights, x[idx], y[idx])
        for store, g in zip(per_layer, grads):
            norm = np.linalg.norm(g)
            store.append(g / norm if norm > 0 else g)
    return [np.stack(s) for s in per_layer]


def train_balanced_task(
    weights: Sequence[np.ndarray],
    memories: Sequence[GradientMemory] | None,
    x: np.ndarray,
    y: np.ndarray,
    snapshots: Sequence[np.ndarray],
    *,
    rank: int,
    cfg: InnerOptimizerConfig,
    n_steps: int,
    scales: Sequence[float],
    pad_random: bool = True,
    rng=None,
    task: int = 1,
) -> list[TaskUpdate]:
    """Learn one task as a structured update per layer.

    Directions start from the averaged snapshot with stored directions removed;
    U, V and s then take simultaneous projected steps on the full-batch loss.
    """
    updates = []
    for i, (snap, s0) in enumerate(zip(snapshots, scales)):
        mem = memories[i] if memories is not None else None
        try:
            u0, v0 = init_directions(snap.mean(axis=0), mem, rank, pad_random=pad_random, rng=rng)
        except BalancedLowRankError as exc:
            raise TaskAborted(task, i + 1, 0, exc) from exc
        updates.append(TaskUpdate(s0, u0, v0, i + 1))

    states = [(OptState(), OptState(), OptState()) for _ in updates]
    for step in range(1, n_steps + 1):
        current = [w + materialize(upd) for w, upd in zip(weights, updates)]
        _, grads = loss_and_grads(current, x, y)
        for i, (upd, g) in enumerate(zip(updates, grads)):
            su, sv, ss = states[i]
            try:
                du, dv, ds = adapter_grads(g, upd.s, upd.u.u, upd.v.u)
                u, su = step_constrained(upd.u, du, su, cfg)
                v, sv = step_v(upd.v, dv, sv, cfg)
                s, ss = step_scale(upd.s, ds, ss, cfg)
                updates[i] = TaskUpdate(s, u, v, upd.layer_index)
            except BalancedLowRankError as exc:
                raise TaskAborted(task, i + 1, step, exc) from exc
            states[i] = (su, sv, ss)
    return updates


def train_lowrank_task(
    weights: Sequence[np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    *,
    rank: int,
    cfg: InnerOptimizerConfig,
    n_steps: int,
    rng,
    task: int = 1,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Learn one task as an unconstrained ``B @ A`` per layer (B = 0, A Gaussian)."""
    factors = []
    for w in weights:
        d, n = w.shape
        if not 1 <= rank <= min(d, n):
            raise InvalidInput(f"rank {rank} incompatible with layer shape {w.shape}")
        factors.append([np.zeros((d, rank)), rng.standard_normal((rank, n)) / np.sqrt(n)])

    states = [[OptState(), OptState()] for _ in factors]
    for step in range(1, n_steps + 1):
        current = [w + b @ a for w, (b, a) in zip(weights, factors)]
        _, grads = loss_and_grads(current, x, y)
        for i, ((b, a), g) in enumerate(zip(factors, grads)):
            db, da = factor_grads(g, b, a)
            new = []
            for j, (p, dp) in enumerate(((b, db), (a, da))):
                delta, states[i][j] = inner_step(dp, states[i][j], cfg)
                p_new = p + delta
                if cfg.weight_decay:
                    p_new -= cfg.learning_rate * cfg.weight_decay * p
                new.append(p_new)
            if not all(np.all(np.isfinite(p)) for p in new):
                raise TaskAborted(task, i + 1, step, InvalidInput("factors diverged"))
            factors[i] = new
    return [(b, a) for b, a in factors]


class _SequentialLowRankBase(RegressorMixin, BaseEstimator):
    """Shared plumbing: validation, the base stack, and the per-task loop."""

    def _optimizer_config(self) -> InnerOptimizerConfig:
        return InnerOptimizerConfig(
            kind=self.optimizer,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            beta1=self.beta1,
            beta2=self.beta2,
            eps_adam=self.eps_adam,
            weight_decay=self.weight_decay,
            project_moments=self.project_moments,
        )

    def _validate_xy(self, X, Y):
        X, Y = check_X_y(X, Y, multi_output=True, y_numeric=True, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        return X, Y

    def _start(self, X, Y):
        if self.random_state is None:
            self.seed_ = int(np.random.default_rng().integers(0, 2**63 - 1))
        else:
            self.seed_ = int(self.random_state)
        if self.base_weights is None:
            base = random_stack(stream(self.seed_, "base"), X.shape[1], Y.shape[1], self.n_layers)
        else:
            base = [w.copy() for w in check_stack(self.base_weights)]
        if base[0].shape[1] != X.shape[1] or base[-1].shape[0] != Y.shape[1]:
            raise InvalidInput(
                f"stack maps {base[0].shape[1]} -> {base[-1].shape[0]}, data is "
                f"{X.shape[1]} -> {Y.shape[1]}"
            )
        self.base_weights_ = base
        self.weights_ = [w.copy() for w in base]
        self.n_features_in_ = X.shape[1]
        self.n_tasks_seen_ = 0
        self.deltas_ = []

    def partial_fit(self, X, Y):
        """Learn one more task from ``(X, Y)`` on top of everything learned so far."""
        X, Y = self._validate_xy(X, Y)
        if not hasattr(self, "weights_"):
            self._start(X, Y)
        elif X.shape[1] != self.n_features_in_:
            raise InvalidInput(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        task = self.n_tasks_seen_ + 1
        deltas = self._learn_task(X, Y, task)
        self.weights_ = [w + dw for w, dw in zip(self.weights_, deltas)]
        self.deltas_.append(deltas)
        self.n_tasks_seen_ = task
        return self

    def fit(self, X, Y):
        """Forget any previous tasks and learn ``(X, Y)`` as the first one."""
        for attr in ("weights_", "memories_", "updates_", "factors_"):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.partial_fit(X, Y)

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInput(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return forward(self.weights_, X)


class BalancedLowRankRegressor(_SequentialLowRankBase):
    """Continual learner whose per-task update has r equal singular values.

    Args:
        base_weights: list of layer matrices (layer 1 is d x n); ``None`` draws a
            random well-conditioned stack of ``n_layers`` layers.
        rank: r, the rank of every task update.
        optimizer, learning_rate, momentum, beta1, beta2, eps_adam,
            weight_decay, project_moments: inner optimizer settings, shared by
            U, V and s.
        epsilon: energy fraction the gradient memory must capture per task.
        s_min, s_max: initial scale of the first and last layer.
        n_steps: full-batch steps per task.
        n_snapshot, snapshot_batch: minibatches (and their size) behind the
            gradient snapshot.
        use_memory: constrain U against past-task gradient directions.
        depth_init: interpolate the initial scale across depth; when off every
            layer starts at ``(s_min + s_max) / 2``.
        pad_random: pad a rank-deficient initialization with random feasible
            directions instead of failing.
        random_state: seed of all named random streams.

    Attributes:
        weights_: current layer stack.
        memories_: one ``GradientMemory`` per layer.
        updates_: per task, the list of per-layer ``TaskUpdate``.
        deltas_: per task, the materialized per-layer updates.
    """

    def __init__(
        self,
        base_weights=None,
        n_layers=2,
        rank=4,
        optimizer="adam",
        learning_rate=1e-2,
        momentum=0.0,
        beta1=0.9,
        beta2=0.999,
        eps_adam=1e-8,
        weight_decay=0.0,
        project_moments=False,
        epsilon=DEFAULT_EPSILON,
        s_min=S_MIN,
        s_max=S_MAX,
        n_steps=500,
        n_snapshot=8,
        snapshot_batch=128,
        use_memory=True,
        depth_init=True,
        pad_random=True,
        random_state=None,
    ):
        self.base_weights = base_weights
        self.n_layers = n_layers
        self.rank = rank
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps_adam = eps_adam
        self.weight_decay = weight_decay
        self.project_moments = project_moments
        self.epsilon = epsilon
        self.s_min = s_min
        self.s_max = s_max
        self.n_steps = n_steps
        self.n_snapshot = n_snapshot
        self.snapshot_batch = snapshot_batch
        self.use_memory = use_memory
        self.depth_init = depth_init
        self.pad_random = pad_random
        self.random_state = random_state

    def _start(self, X, Y):
        super()._start(X, Y)
        self.memories_ = [GradientMemory(w.shape[0], self.epsilon) for w in self.weights_]
        self.updates_ = []

    def _scales(self) -> list[float]:
        n_layers = len(self.weights_)
        if self.depth_init:
            return [init_scale(i, n_layers, self.s_min, self.s_max) for i in range(1, n_layers + 1)]
        return [0.5 * (self.s_min + self.s_max)] * n_layers

    def _learn_task(self, X, Y, task):
        snapshots = gradient_snapshots(
            self.weights_, X, Y, self.n_snapshot, self.snapshot_batch,
            stream(self.seed_, f"snapshot/{task}"),
        )
        updates = train_balanced_task(
            self.weights_,
            self.memories_ if self.use_memory else None,
            X,
            Y,
            snapshots,
            rank=self.rank,
            cfg=self._optimizer_config(),
            n_steps=self.n_steps,
            scales=self._scales(),
            pad_random=self.pad_random,
            rng=stream(self.seed_, f"init/{task}"),
            task=task,
        )
        if self.use_memory:
            for i, (mem, snap) in enumerate(zip(self.memories_, snapshots)):
                try:
                    mem.update(np.hstack(list(snap)))
                except BalancedLowRankError as exc:
                    raise TaskAborted(task, i + 1, self.n_steps, exc) from exc
        self.updates_.append(updates)
        return [materialize(u) for u in updates]


class LowRankFinetuneRegressor(_SequentialLowRankBase):
    """Unconstrained ``B @ A`` adapter per layer and task, merged after each task.

    Takes the same optimizer settings as ``BalancedLowRankRegressor``; there is
    no projection, no memory and no scale parameter.

    Attributes:
        weights_: current layer stack.
        factors_: per task, the list of per-layer ``(B, A)``.
        deltas_: per task, the materialized per-layer updates.
    """

    def __init__(
        self,
        base_weights=None,
        n_layers=2,
        rank=4,
        optimizer="adam",
        learning_rate=1e-2,
        momentum=0.0,
        beta1=0.9,
        beta2=0.999,
        eps_adam=1e-8,
        weight_decay=0.0,
        project_moments=False,
        n_steps=500,
        random_state=None,
    ):
        self.base_weights = base_weights
        self.n_layers = n_layers
        self.rank = rank
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps_adam = eps_adam
        self.weight_decay = weight_decay
        self.project_moments = project_moments
        self.n_steps = n_steps
        self.random_state = random_state

    def _start(self, X, Y):
        super()._start(X, Y)
        self.factors_ = []

    def _learn_task(self, X, Y, task):
        factors = train_lowrank_task(
            self.weights_, X, Y,
            rank=self.rank,
            cfg=self._optimizer_config(),
            n_steps=self.n_steps,
            rng=stream(self.seed_, f"init/{task}"),
            task=task,
        )
        self.factors_.append(factors)
        return [b @ a for b, a in factors]
