"""Access to the shipped accuracy-matrix fixtures."""

from __future__ import annotations

from importlib import resources

from .metrics import AccuracyMatrix, read_accuracy_csv


def fixture_names() -> list[str]:
    root = resources.files("balanced_lowrank") / "fixtures"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".csv"))


def fixture_path(name: str):
    return resources.files("balanced_lowrank") / "fixtures" / f"{name}.csv"


def load_fixture(name: str) -> AccuracyMatrix:
    with fixture_path(name).open(encoding="utf-8") as fh:
        return read_accuracy_csv(fh)
