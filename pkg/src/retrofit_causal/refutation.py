"""Placebo-treatment and subsample refutation of the average treatment effect."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .data import DiscreteDataset
from .estimation import ate_value
from .graph import CausalGraph
from .inference import fit_model

KINDS = ("placebo", "subsample")


class RefutationError(RuntimeError):
    def __init__(self, message: str, repetition: int | None = None):
        super().__init__(message if repetition is None else f"repetition {repetition}: {message}")
        self.repetition = repetition


@dataclass(frozen=True)
class AtePipeline:
    """Fit a model on a dataset and return its ATE. Picklable for worker pools."""

    graph: CausalGraph
    smoothing: float = 1.0
    treatment: str = "X"

    def __call__(self, data: DiscreteDataset) -> float:
        return ate_value(fit_model(self.graph, data, self.smoothing))


@dataclass
class RefutationReport:
    kind: str
    n: int
    effects: list[float]
    mean: float
    median: float
    ci_low_1pct: float
    ci_high_99pct: float
    p_value: float
    baseline_ate: float
    seed: int
    fraction: float | None = None

    def __post_init__(self):
        if len(self.effects) != self.n:
            raise ValueError("one effect per repetition required")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def effects_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["effect"])
        for e in self.effects:
            writer.writerow([repr(float(e))])
        return buf.getvalue()


def placebo_p_value(effects, baseline: float) -> float:
    """(1 + #{|e_i| >= |baseline|}) / (1 + n)."""
    effects = np.asarray(effects, dtype=float)
    return (1 + int(np.sum(np.abs(effects) >= abs(baseline)))) / (1 + len(effects))


def subsample_p_value(effects, baseline: float) -> float:
    """(1 + #{|e_i - m| >= |baseline - m|}) / (1 + n), m the mean effect."""
    effects = np.asarray(effects, dtype=float)
    m = effects.mean()
    return (1 + int(np.sum(np.abs(effects - m) >= abs(baseline - m)))) / (1 + len(effects))


def repetition_rng(seed: int, i: int) -> np.random.Generator:
    """Generator for repetition ``i``; independent of scheduling order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(i)]))


# per-process state so the dataset is shipped to each worker once, not per task
_SHARED: dict = {}


def _share(pipeline, data) -> None:
    _SHARED["pipeline"], _SHARED["data"] = pipeline, data


def _placebo_one(seed: int, i: int) -> float:
    pipeline, data = _SHARED["pipeline"], _SHARED["data"]
    rng = repetition_rng(seed, i)
    column = getattr(pipeline, "treatment", "X")
    return pipeline(data.with_column(column, rng.permutation(data.columns[column])))


def _subsample_one(seed: int, i: int, size: int) -> float:
    pipeline, data = _SHARED["pipeline"], _SHARED["data"]
    rng = repetition_rng(seed, i)
    rows = np.sort(rng.choice(len(data), size=size, replace=False))
    return pipeline(data.take(rows))


def _run(fn: Callable, pipeline, data, tasks: list[tuple], jobs: int) -> list[float]:
    out: list[float] = []
    if jobs <= 1 or len(tasks) <= 1:
        _share(pipeline, data)
        try:
            for i, t in enumerate(tasks):
                try:
                    out.append(float(fn(*t)))
                except Exception as exc:  # noqa: BLE001 - re-raised with the index
                    raise RefutationError(str(exc), i) from exc
        finally:
            _SHARED.clear()
        return out
    with ProcessPoolExecutor(max_workers=jobs, initializer=_share, initargs=(pipeline, data)) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        for i, fut in enumerate(futures):
            try:
                out.append(float(fut.result()))
            except Exception as exc:  # noqa: BLE001
                for f in futures:
                    f.cancel()
                raise RefutationError(str(exc), i) from exc
    return out


def _summarize(kind, effects, p, baseline, seed, fraction=None) -> RefutationReport:
    arr = np.asarray(effects, dtype=float)
    return RefutationReport(
        kind=kind,
        n=len(effects),
        effects=[float(e) for e in effects],
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        ci_low_1pct=float(np.percentile(arr, 1)),
        ci_high_99pct=float(np.percentile(arr, 99)),
        p_value=float(p),
        baseline_ate=float(baseline),
        seed=int(seed),
        fraction=fraction,
    )


def placebo_test(pipeline, data: DiscreteDataset, n: int, seed: int, jobs: int = 1,
                 baseline: float | None = None) -> RefutationReport:
    """Re-estimate the ATE ``n`` times with the treatment column shuffled."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if baseline is None:
        baseline = pipeline(data)
    effects = _run(_placebo_one, pipeline, data, [(seed, i) for i in range(n)], jobs)
    return _summarize("placebo", effects, placebo_p_value(effects, baseline), baseline, seed)


def subsample_test(pipeline, data: DiscreteDataset, n: int, fraction: float, seed: int, jobs: int = 1,
                   baseline: float | None = None) -> RefutationReport:
    """Re-estimate the ATE on ``n`` random subsets of floor(fraction * rows) rows."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    size = int(np.floor(fraction * len(data)))
    if size < 1:
        raise ValueError("subsample would be empty")
    if baseline is None:
        baseline = pipeline(data)
    effects = _run(_subsample_one, pipeline, data, [(seed, i, size) for i in range(n)], jobs)
    return _summarize("subsample", effects, subsample_p_value(effects, baseline), baseline, seed, fraction)
