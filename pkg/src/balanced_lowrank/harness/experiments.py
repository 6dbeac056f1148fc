"""End-to-end runs on the synthetic benchmark and their on-disk artifacts."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .. import __version__
from ..adapter import save_updates
from ..errors import ConfigError, InvalidInput
from ..estimators import BalancedLowRankRegressor, LowRankFinetuneRegressor
from ..gpm import save_memories
from ..manifold import drift_repairs
from ..spectral import nai, smooth_matrix, spectrum
from .config import ExperimentConfig
from .metrics import AccuracyMatrix, MetricsReport, save_accuracy, write_metrics_csv
from .tasks import TaskSequence, accuracy, make_task_sequence, zero_shot


@dataclass
class RunArtifacts:
    estimator: object
    tasks: TaskSequence
    zero_shot: list
    manifest: dict = field(default_factory=dict)

    def spectra_cv(self) -> list[float]:
        """Coefficient of variation of every per-task, per-layer update spectrum."""
        r = self.estimator.rank
        return [spectrum(dw, rank=r).cv for task in self.estimator.deltas_ for dw in task]


class RunResult(NamedTuple):
    accuracy: AccuracyMatrix
    artifacts: RunArtifacts


def build_tasks(config: ExperimentConfig) -> TaskSequence:
    _require_seed(config)
    return make_task_sequence(
        config.seed, config.T, config.dims, config.r_plant, config.noise_std,
        mu=config.mu, plant_decay=config.plant_decay, overlap=config.overlap,
        input_overlap=config.input_overlap, n_train=config.n_train, n_eval=config.n_eval,
    )


def _require_seed(config: ExperimentConfig) -> None:
    if config.seed is None:
        raise ConfigError("missing required field: seed")


def _optimizer_params(config: ExperimentConfig) -> dict:
    o = config.optimizer
    return dict(
        optimizer=o.kind, learning_rate=o.learning_rate, momentum=o.momentum, beta1=o.beta1,
        beta2=o.beta2, eps_adam=o.eps_adam, weight_decay=o.weight_decay,
        project_moments=o.project_moments,
    )


def method_estimator(config: ExperimentConfig, base) -> BalancedLowRankRegressor:
    return BalancedLowRankRegressor(
        base_weights=base, n_layers=config.n_layers, rank=config.rank,
        epsilon=config.epsilon, s_min=config.s_min, s_max=config.s_max,
        n_steps=config.steps_per_task, n_snapshot=config.n_snapshot,
        snapshot_batch=config.snapshot_batch, use_memory=config.use_memory,
        depth_init=config.depth_init, pad_random=config.pad_random,
        random_state=config.seed, **_optimizer_params(config),
    )


def baseline_estimator(config: ExperimentConfig, base) -> LowRankFinetuneRegressor:
    return LowRankFinetuneRegressor(
        base_weights=base, n_layers=config.n_layers, rank=config.rank,
        n_steps=config.steps_per_task, random_state=config.seed,
        **_optimizer_params(config),
    )


def _sequential(estimator, tasks: TaskSequence) -> AccuracyMatrix:
    T = len(tasks)
    acc = AccuracyMatrix.empty(T)
    for j, task in enumerate(tasks):
        estimator.partial_fit(task.x_train, task.y_train)
        for i, other in enumerate(tasks):
            acc[j, i] = accuracy(estimator.weights_, other)
    return acc


def run_sequence(config: ExperimentConfig, tasks: TaskSequence | None = None) -> RunResult:
    """Train the structured learner through every task, evaluating all tasks after each."""
    tasks = tasks if tasks is not None else build_tasks(config)
    repairs_before = drift_repairs["count"]
    est = method_estimator(config, tasks.base)
    acc = _sequential(est, tasks)
    notes = {
        "model": "structured",
        "drift_repairs": drift_repairs["count"] - repairs_before,
        "memory_ranks": [m.history for m in est.memories_],
    }
    arts = RunArtifacts(est, tasks, zero_shot(tasks.base, tasks.tasks))
    arts.manifest = manifest(config, notes)
    return RunResult(acc, arts)


def baseline_run(config: ExperimentConfig, tasks: TaskSequence | None = None) -> RunResult:
    """The same task stream learned with unconstrained ``B @ A`` adapters."""
    tasks = tasks if tasks is not None else build_tasks(config)
    est = baseline_estimator(config, tasks.base)
    acc = _sequential(est, tasks)
    arts = RunArtifacts(est, tasks, zero_shot(tasks.base, tasks.tasks))
    arts.manifest = manifest(config, {"model": "baseline"})
    return RunResult(acc, arts)


@dataclass(frozen=True)
class MergeReport:
    """``nai[a][i]``: normalized improvement on task i at smoothing level ``alphas[a]``."""

    alphas: tuple
    nai: np.ndarray
    zero_shot: list
    individual: list

    @property
    def mean_nai(self) -> np.ndarray:
        return self.nai.mean(axis=1)

    def write_csv(self, fh) -> None:
        T = self.nai.shape[1]
        fh.write("alpha,mean_nai," + ",".join(f"task{i}" for i in range(1, T + 1)) + "\n")
        for a, row, m in zip(self.alphas, self.nai, self.mean_nai):
            fh.write(f"{a:g},{m:.6f}," + ",".join(f"{v:.6f}" for v in row) + "\n")


def merge_nai(base, deltas: Sequence, tasks: Sequence, alphas: Sequence[float], rank: int | None = None) -> MergeReport:
    """NAI of each task after adding every other task's smoothed update to its own.

    ``deltas[i]`` is the per-layer update trained on ``tasks[i]`` alone from
    ``base``. The target's own update is kept as trained; the others act as
    interference and have their leading ``rank`` singular values pulled toward
    their mean by ``alpha``. With a single task there is no interference and
    every NAI is 1.
    """
    if len(deltas) != len(tasks) or not tasks:
        raise InvalidInput("need one trained update per task")
    zs = zero_shot(base, tasks)
    individual = [
        accuracy([w + dw for w, dw in zip(base, deltas[i])], t) for i, t in enumerate(tasks)
    ]
    table = np.zeros((len(alphas), len(tasks)))
    for a_idx, alpha in enumerate(alphas):
        smoothed = [[smooth_matrix(dw, alpha, rank) for dw in task] for task in deltas]
        for i, task in enumerate(tasks):
            merged = []
            for l, w in enumerate(base):
                others = sum(smoothed[j][l] for j in range(len(tasks)) if j != i)
                merged.append(w + deltas[i][l] + others)
            table[a_idx, i] = nai(accuracy(merged, task), zs[i], individual[i])
    return MergeReport(tuple(alphas), table, zs, individual)


def merge_experiment(config: ExperimentConfig, tasks: TaskSequence | None = None) -> MergeReport:
    """Train one low-rank adapter per task from the base stack, then sweep smoothing."""
    if config.T < 2:
        raise InvalidInput("the merging experiment needs at least two tasks")
    tasks = tasks if tasks is not None else build_tasks(config)
    deltas = []
    for task in tasks:
        est = baseline_estimator(config, tasks.base).fit(task.x_train, task.y_train)
        deltas.append(est.deltas_[0])
    return merge_nai(tasks.base, deltas, tasks.tasks, config.alpha_grid, config.rank)


def manifest(config: ExperimentConfig, notes: dict | None = None) -> dict:
    return {
        "config": config.to_dict(),
        "version": __version__,
        "numpy": np.__version__,
        "notes": {
            "rng_streams": ["task-gen", "data", "base", "init/{task}", "snapshot/{task}"],
            "snapshot": "per-minibatch layer gradients scaled to unit Frobenius norm; "
                        "memory update uses them side by side, initialization uses their mean",
            "v_optimizer": "same settings as U",
            "evaluation": "materialized weights after each task",
            **(notes or {}),
        },
    }


# -- artifacts ---------------------------------------------------------------


def _dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_run(out_dir, result: RunResult) -> list[str]:
    """Write accuracy, metrics, checkpoints and manifest; returns the file names."""
    os.makedirs(out_dir, exist_ok=True)
    acc, arts = result
    written = ["accuracy.csv", "metrics.csv", "manifest.json"]
    save_accuracy(os.path.join(out_dir, "accuracy.csv"), acc)
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        write_metrics_csv(MetricsReport.from_matrix(acc), fh)
    est = arts.estimator
    if hasattr(est, "updates_"):
        for t, updates in enumerate(est.updates_, start=1):
            name = f"adapters_task{t}.txt"
            save_updates(os.path.join(out_dir, name), updates)
            written.append(name)
        save_memories(os.path.join(out_dir, "memory.txt"), est.memories_)
        written.append("memory.txt")
    _dump_json(os.path.join(out_dir, "manifest.json"), arts.manifest)
    return written


def write_merge(out_dir, report: MergeReport, config: ExperimentConfig) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "nai.csv"), "w", encoding="utf-8") as fh:
        report.write_csv(fh)
    notes = {
        "model": "baseline adapters trained per task from the base stack",
        "merge": "target update kept as trained; other tasks' updates smoothed",
        "zero_shot": report.zero_shot,
        "individual": report.individual,
    }
    _dump_json(os.path.join(out_dir, "manifest.json"), manifest(config, notes))
    return ["nai.csv", "manifest.json"]
