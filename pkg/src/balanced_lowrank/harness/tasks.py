"""Synthetic sequential regression tasks for the deep linear model.

Every task shares a base stack W0. Its teacher adds, in every layer, a planted
rank-``r_plant`` perturbation with geometrically decaying singular values.
Output directions of the perturbations are orthogonal across tasks (the
``overlap`` knob blends in a shared block). Task inputs mix isotropic noise
with a task-specific subspace; ``input_overlap = 1`` gives plain standard
normal inputs for every task.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InvalidInput
from ..linear_net import forward, random_stack
from ..streams import stream

MIN_EVAL = 32


@dataclass(frozen=True)
class SyntheticTask:
    task_id: int
    teacher: list
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray
    noise_std: float

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]

    @property
    def n_eval(self) -> int:
        return self.x_eval.shape[0]


@dataclass(frozen=True)
class TaskSequence:
    """The shared base stack and the ordered tasks built on it."""

    base: list
    tasks: list

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]


def _orthonormal(rng, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def _orth(a: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(a)
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def make_task_sequence(
    seed: int,
    T: int,
    dims: tuple[int, int, int],
    r_plant: int,
    noise_std: float = 0.0,
    *,
    mu: float = 1.0,
    plant_decay: float = 0.6,
    overlap: float = 0.0,
    input_overlap: float = 1.0,
    n_train: int = 1024,
    n_eval: int = 256,
) -> TaskSequence:
    """Build ``T`` tasks deterministically from ``seed``.

    Args:
        dims: ``(d, n, n_layers)``; layer 1 is d x n, later layers d x d.
        r_plant: rank of each planted perturbation.
        noise_std: standard deviation of additive target noise.
        mu: magnitude of the largest planted singular value.
        plant_decay: ratio between consecutive planted singular values.
        overlap: in [0, 1]; weight of a block of output directions shared by
            all tasks.
        input_overlap: in [0, 1]; share of input variance that is isotropic.
    """
    d, n, n_layers = (int(v) for v in dims)
    if T < 2:
        raise InvalidInput(f"a task sequence needs T >= 2, got {T}")
    if min(d, n, n_layers, r_plant) < 1:
        raise InvalidInput(f"degenerate dims {dims} or r_plant {r_plant}")
    block_in = n // T
    if (T + 1) * r_plant > d or r_plant > block_in:
        raise InvalidInput(
            f"dims {dims} cannot hold {T} disjoint rank-{r_plant} perturbations"
        )
    if not (0.0 <= overlap <= 1.0 and 0.0 <= input_overlap <= 1.0):
        raise InvalidInput("overlap and input_overlap must lie in [0, 1]")
    if noise_std < 0 or n_eval < MIN_EVAL or n_train < 1:
        raise InvalidInput(f"need noise_std >= 0, n_train >= 1 and n_eval >= {MIN_EVAL}")

    rng = stream(seed, "task-gen")
    base = random_stack(rng, n, d, n_layers)
    gains = mu * plant_decay ** np.arange(r_plant)
    out_bases = [_orthonormal(rng, d, d) for _ in range(n_layers)]
    in_basis = _orthonormal(rng, n, n)

    # Input side of layer l > 1 follows the task subspace through the base stack.
    subspaces, in_dirs = [], []
    for t in range(T):
        sub = in_basis[:, t * block_in:(t + 1) * block_in]
        subspaces.append(sub)
        dirs = [sub[:, :r_plant]]
        h = sub[:, :r_plant]
        for w in base[:-1]:
            h = w @ h
            dirs.append(_orth(h))
        in_dirs.append(dirs)

    teachers = []
    for t in range(T):
        layers = []
        for l, w0 in enumerate(base):
            own = out_bases[l][:, t * r_plant:(t + 1) * r_plant]
            shared = out_bases[l][:, T * r_plant:(T + 1) * r_plant]
            a = _orth(np.sqrt(1.0 - overlap) * own + np.sqrt(overlap) * shared)
            layers.append(w0 + (a * gains) @ in_dirs[t][l].T)
        teachers.append(layers)

    data = stream(seed, "data")
    scale_sub = np.sqrt((1.0 - input_overlap) * n / block_in)
    scale_iso = np.sqrt(input_overlap)
    tasks = []
    for t in range(T):
        sets = []
        for count in (n_train, n_eval):
            x = scale_iso * data.standard_normal((count, n))
            x += scale_sub * data.standard_normal((count, block_in)) @ subspaces[t].T
            y = forward(teachers[t], x)
            if noise_std:
                y = y + noise_std * data.standard_normal(y.shape)
            sets.append((x, y))
        (xt, yt), (xe, ye) = sets
        tasks.append(SyntheticTask(t + 1, teachers[t], xt, yt, xe, ye, float(noise_std)))
    return TaskSequence(base, tasks)


def explained_accuracy(pred: np.ndarray, y: np.ndarray) -> float:
    """``100 * max(0, 1 - MSE / Var)`` with Var the mean squared deviation from column means."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] == 0:
        raise InvalidInput("empty evaluation set")
    mse = float(np.mean((pred - y) ** 2))
    var = float(np.mean((y - y.mean(axis=0)) ** 2))
    if var == 0.0:
        return 100.0 if mse == 0.0 else 0.0
    return 100.0 * max(0.0, 1.0 - mse / var)


def accuracy(model, task: SyntheticTask) -> float:
    """Accuracy proxy of a layer stack (or a fitted estimator) on a task's eval set."""
    if task.n_eval == 0:
        raise InvalidInput("task has no evaluation samples")
    if hasattr(model, "predict"):
        pred = model.predict(task.x_eval)
    else:
        pred = forward(model, task.x_eval)
    return explained_accuracy(pred, task.y_eval)


def zero_shot(base: Sequence[np.ndarray], tasks: Sequence[SyntheticTask]) -> list[float]:
    return [accuracy(base, t) for t in tasks]
