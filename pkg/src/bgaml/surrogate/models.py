"""Regression models: least squares, random forest and two boosted-tree flavours.

Trees are grown level by level with an exact greedy split search. Feature
values are replaced by their rank among the training rows' unique values, so
each level needs one stable sort of (node, rank) per feature and a cumulative
sum of the gradients. Candidates are scored with the second-order gain

    G_L^2/(H_L + lam) + G_R^2/(H_R + lam) - G^2/(H + lam)

where G is the sum of residuals and H the number of rows. With lam = 0 this
is plain variance reduction; leaves hold G / (H + lam).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("LR", "RF", "GBDT", "XGBT")


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = "XGBT"
    max_depth: int = 7
    learning_rate: float = 0.1
    n_estimators: int = 190
    subsample: float = 0.6
    reg_lambda: float = 1.0
    base_score: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.max_depth < 0 or self.n_estimators < 0:
            raise ValueError("max_depth and n_estimators must be nonnegative")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if self.learning_rate < 0 or self.reg_lambda < 0:
            raise ValueError("learning_rate and reg_lambda must be nonnegative")

    def hyperparameters(self) -> dict:
        out = {"max_depth": self.max_depth, "learning_rate": self.learning_rate,
               "n_estimators": self.n_estimators, "subsample": self.subsample}
        if self.kind == "XGBT":
            out["reg_lambda"] = self.reg_lambda
        return out


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf. Rows with x <= threshold go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            go_left = X[rows, np.where(inner, f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=float),
        )


class _Ranked:
    """Training matrix as per-feature rank codes plus the split thresholds between ranks."""

    def __init__(self, X: np.ndarray):
        self.n, self.d = X.shape
        self.codes = np.empty(X.shape, dtype=np.int64)
        self.uniques = []
        for j in range(self.d):
            u, inv = np.unique(X[:, j], return_inverse=True)
            self.uniques.append(u)
            self.codes[:, j] = inv
        self.n_unique = np.array([len(u) for u in self.uniques])
        # only features with at least two distinct values can ever split
        self.splittable = np.flatnonzero(self.n_unique > 1)

    def threshold(self, feature: int, low: int, high: int) -> float:
        u = self.uniques[feature]
        return 0.5 * (u[low] + u[high])


def grow_tree(
    ranked: _Ranked,
    rows: np.ndarray,
    residual: np.ndarray,
    max_depth: int,
    reg_lambda: float,
    features_per_split: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Fit one regression tree to ``residual[rows]`` (rows may repeat)."""
    feats = ranked.splittable
    codes = ranked.codes[rows][:, feats]
    g = residual[rows].astype(float)
    n, d = codes.shape
    radix = int(ranked.n_unique.max()) if len(ranked.n_unique) else 1

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    level_ids = [new_node()]
    node = np.zeros(n, dtype=np.int64)  # position within the current level, -1 once settled
    for depth in range(max_depth + 1):
        m = len(level_ids)
        live = node >= 0
        G = np.bincount(node[live], weights=g[live], minlength=m)
        H = np.bincount(node[live], minlength=m).astype(float)
        for k, nid in enumerate(level_ids):
            value[nid] = G[k] / (H[k] + reg_lambda) if H[k] + reg_lambda > 0 else 0.0
        if depth == max_depth or d == 0:
            break

        idx = np.flatnonzero(live)
        nl = node[idx]
        order_nodes = np.argsort(nl, kind="stable")
        idx, nl = idx[order_nodes], nl[order_nodes]
        key = nl[:, None] * radix + codes[idx]
        order = np.argsort(key, axis=0, kind="stable")
        skey = np.take_along_axis(key, order, axis=0)
        sg = g[idx][order]
        cg = np.cumsum(sg, axis=0)
        starts = np.concatenate(([0], np.cumsum(H.astype(np.int64))[:-1]))
        sorted_node = skey // radix
        before = np.vstack([np.zeros((1, d)), cg])[starts[sorted_node], np.arange(d)[None, :]]
        GL = cg - before
        rank = np.arange(len(idx))[:, None] - starts[sorted_node]
        HL = (rank + 1).astype(float)
        Gn, Hn = G[sorted_node], H[sorted_node]
        GR, HR = Gn - GL, Hn - HL

        nxt = np.vstack([skey[1:], np.full((1, d), -1)])
        valid = (nxt // radix == sorted_node) & (nxt != skey)
        if features_per_split is not None and features_per_split < d:
            allowed = np.zeros((m, d), dtype=bool)
            picks = np.argsort(rng.random((m, d)), axis=1)[:, :features_per_split]
            np.put_along_axis(allowed, picks, True, axis=1)
            valid &= allowed[sorted_node, np.arange(d)[None, :]]
        parent = Gn**2 / (Hn + reg_lambda)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = GL**2 / (HL + reg_lambda) + GR**2 / (HR + reg_lambda) - parent
        gain = np.where(valid, gain, -np.inf)

        best_col = np.argmax(gain, axis=1)
        row_gain = gain[np.arange(len(idx)), best_col]
        node_of_row = sorted_node[:, 0]
        node_best = np.full(m, -np.inf)
        np.maximum.at(node_best, node_of_row, row_gain)
        scale = np.maximum(np.abs(G**2 / (H + reg_lambda)), 1.0)
        hit = np.flatnonzero(row_gain == node_best[node_of_row])
        _, first = np.unique(node_of_row[hit], return_index=True)
        winners = hit[first]

        next_ids = []
        next_pos = np.full(m, -1)
        go_left_code = np.full(m, -1)
        split_feat = np.full(m, -1)
        for r in winners:
            k = int(node_of_row[r])
            if not node_best[k] > 1e-12 * scale[k]:
                continue
            c = int(best_col[r])
            f = int(feats[c])
            low = int(skey[r, c] % radix)
            high = int(nxt[r, c] % radix)
            nid = level_ids[k]
            feature[nid] = f
            threshold[nid] = ranked.threshold(f, low, high)
            left[nid] = new_node()
            right[nid] = new_node()
            next_pos[k] = len(next_ids)
            next_ids += [left[nid], right[nid]]
            go_left_code[k] = low
            split_feat[k] = c
        if not next_ids:
            break
        live_idx = np.flatnonzero(live)
        k = node[live_idx]
        splits = next_pos[k] >= 0
        moved = live_idx[splits]
        ks = k[splits]
        goes_left = codes[moved, split_feat[ks]] <= go_left_code[ks]
        new_node_pos = np.full(n, -1)
        new_node_pos[moved] = next_pos[ks] + np.where(goes_left, 0, 1)
        node = new_node_pos
        level_ids = next_ids

    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
    )


def _check_X(X, n_features=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError("features must be a 2-D array")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X


@dataclass
class LinearModel:
    coef: np.ndarray
    intercept: float
    kind: str = "LR"
    spec: RegressorSpec = field(default_factory=lambda: RegressorSpec(kind="LR"))

    @property
    def n_features(self) -> int:
        return len(self.coef)

    def predict(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        return X @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {"kind": "LR", "spec": asdict(self.spec), "coef": [float(c) for c in self.coef],
                "intercept": float(self.intercept)}


@dataclass
class TreeEnsemble:
    kind: str
    base_score: float
    learning_rate: float
    trees: list[Tree]
    n_features: int
    spec: RegressorSpec

    def predict(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        if self.kind == "RF":
            if not self.trees:
                return np.full(len(X), self.base_score)
            return np.mean([t.predict(X) for t in self.trees], axis=0)
        out = np.full(len(X), self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def staged_predict(self, X):
        """Boosted prediction after each stage, starting from the base score."""
        X = _check_X(X, self.n_features)
        out = np.full(len(X), self.base_score)
        yield out.copy()
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
            yield out.copy()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "spec": asdict(self.spec),
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }


Model = LinearModel | TreeEnsemble


def fit(spec: RegressorSpec, X, y) -> Model:
    X = _check_X(X)
    y = np.asarray(y, dtype=float)
    if len(X) != len(y) or len(y) == 0:
        raise ValueError("features and targets must be nonempty and of equal length")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    if spec.kind == "LR":
        return _fit_linear(spec, X, y)
    if len(y) < 2:
        raise ValueError("tree models need at least two rows")
    rng = np.random.default_rng(spec.seed)
    ranked = _Ranked(X)
    n = len(y)
    trees = []
    if spec.kind == "RF":
        k = math.ceil(math.sqrt(len(ranked.splittable))) if len(ranked.splittable) else None
        for _ in range(spec.n_estimators):
            rows = rng.integers(0, n, size=n)
            trees.append(grow_tree(ranked, rows, y, spec.max_depth, 0.0, k, rng))
        base = float(y.mean())
        return TreeEnsemble("RF", base, 1.0, trees, X.shape[1], spec)

    lam = spec.reg_lambda if spec.kind == "XGBT" else 0.0
    base = float(y.mean()) if spec.base_score is None else float(spec.base_score)
    pred = np.full(n, base)
    size = max(1, int(round(spec.subsample * n)))
    for _ in range(spec.n_estimators):
        residual = y - pred
        rows = np.arange(n) if size >= n else np.sort(rng.choice(n, size=size, replace=False))
        tree = grow_tree(ranked, rows, residual, spec.max_depth, lam)
        trees.append(tree)
        pred += spec.learning_rate * tree.predict(X)
    return TreeEnsemble(spec.kind, base, spec.learning_rate, trees, X.shape[1], spec)


def _fit_linear(spec, X, y) -> LinearModel:
    A = np.hstack([X, np.ones((len(X), 1))])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    return LinearModel(sol[:-1], float(sol[-1]), "LR", spec)


def predict(model: Model, X) -> np.ndarray:
    return model.predict(X)


def model_from_dict(d: dict) -> Model:
    spec = RegressorSpec(**d["spec"])
    if d["kind"] == "LR":
        return LinearModel(np.array(d["coef"], dtype=float), float(d["intercept"]), "LR", spec)
    return TreeEnsemble(
        d["kind"],
        float(d["base_score"]),
        float(d["learning_rate"]),
        [Tree.from_dict(t) for t in d["trees"]],
        int(d["n_features"]),
        spec,
    )


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))


def load_model(path: str | Path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))
