"""K-fold cross-validation and randomized hyperparameter search."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..gacore import rng_stream
from .metrics import METRICS, evaluate_metrics, score
from .models import KINDS, RegressorSpec, fit

SEARCH_SPACE = {
    "max_depth": (3, 5, 7, 9, 11, 13, 15),
    "learning_rate": (0.0001, 0.001, 0.1),
    "n_estimators": tuple(range(20, 201)),
    "subsample": (0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0),
}
N_ITER_CHOICES = (50, 100, 150, 200)


def kfold_split(n_rows: int, k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Random partition of range(n_rows) into k folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if n_rows < k:
        raise ValueError(f"cannot split {n_rows} rows into {k} folds")
    perm = rng_stream(seed, "folds").permutation(n_rows)
    return [np.sort(f) for f in np.array_split(perm, k)]


def sample_spec(kind: str, rng: np.random.Generator, space=SEARCH_SPACE, seed: int = 0) -> RegressorSpec:
    if kind == "LR":
        return RegressorSpec(kind="LR", seed=seed)
    draw = {name: values[int(rng.integers(len(values)))] for name, values in space.items()}
    return RegressorSpec(kind=kind, seed=seed, **draw)


@dataclass
class Candidate:
    spec: RegressorSpec
    folds: list[dict[str, float]]

    @property
    def mean(self) -> dict[str, float]:
        return {m: float(np.mean([f[m] for f in self.folds])) for m in METRICS}


@dataclass
class CVReport:
    kind: str
    scoring: str
    candidates: list[Candidate] = field(default_factory=list)

    def ranking(self, metric: str) -> list[int]:
        """Candidate indices, best first; ties keep draw order."""
        keys = [-score(c.mean, metric) for c in self.candidates]
        return sorted(range(len(self.candidates)), key=lambda i: (keys[i], i))

    def top(self, metric: str, n: int = 10) -> list[Candidate]:
        return [self.candidates[i] for i in self.ranking(metric)[:n]]

    @property
    def best(self) -> Candidate:
        return self.candidates[self.ranking(self.scoring)[0]]

    def to_csv(self, path: str | Path) -> None:
        params = list(SEARCH_SPACE) + ["reg_lambda"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["table", "rank", "candidate", "kind"] + params + [f"mean_{m}" for m in METRICS]
                       + [f"fold{i}_{m}" for i in range(5) for m in METRICS])

            def row(table, rank, i):
                c = self.candidates[i]
                hp = c.spec.hyperparameters() if c.spec.kind != "LR" else {}
                fold_cells = [repr(f[m]) for f in c.folds for m in METRICS]
                w.writerow([table, rank, i, c.spec.kind] + [hp.get(p, "") for p in params]
                           + [repr(c.mean[m]) for m in METRICS] + fold_cells)

            for i in range(len(self.candidates)):
                row("all", "", i)
            for m in METRICS:
                for r, i in enumerate(self.ranking(m)[:10], start=1):
                    row(f"top10_{m}", r, i)


def cross_validate(spec: RegressorSpec, X, y, folds: list[np.ndarray]) -> list[dict[str, float]]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    out = []
    for test in folds:
        mask = np.ones(len(y), dtype=bool)
        mask[test] = False
        model = fit(spec, X[mask], y[mask])
        out.append(evaluate_metrics(model.predict(X[test]), y[test]))
    return out


def random_search(
    kind: str,
    X,
    y,
    n_iter: int = 50,
    scoring: str = "R2",
    seed: int = 0,
    space=SEARCH_SPACE,
    k: int = 5,
    map_fn: Callable = map,
) -> CVReport:
    """Score ``n_iter`` random draws from ``space`` by k-fold CV.

    LR has no hyperparameters, so it yields a single candidate whatever
    ``n_iter`` is.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if scoring not in METRICS:
        raise ValueError(f"unknown scoring {scoring!r}; expected one of {METRICS}")
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    folds = kfold_split(len(y), k, seed)
    rng = rng_stream(seed, "search")
    count = 1 if kind == "LR" else n_iter
    specs = [sample_spec(kind, rng, space, seed=seed + i) for i in range(count)]
    results = list(map_fn(lambda s: cross_validate(s, X, y, folds), specs))
    return CVReport(kind, scoring, [Candidate(s, r) for s, r in zip(specs, results)])


def holdout_split(n_rows: int, fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train, test) index split with ``fraction`` of rows held out."""
    if not 0 < fraction < 1:
        raise ValueError("holdout fraction must lie in (0, 1)")
    perm = rng_stream(seed, "holdout").permutation(n_rows)
    n_test = max(1, int(round(fraction * n_rows)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
