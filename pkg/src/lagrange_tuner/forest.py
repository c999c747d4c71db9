"""Random-forest regression (bagged CART, variance-reduction splits).

Trees are flat arrays: ``feature[i] == -1`` marks a leaf whose prediction is
``value[i]``; otherwise rows with ``x[feature] <= threshold`` go to ``left``.
Each tree draws its randomness from its own child of one SeedSequence, so a
forest is identical whatever the worker count.

Model files::

    b"LTRF"  magic
    u16      format version (little endian)
    u32      header length
    header   UTF-8 JSON (config, feature ordering hash, scores, tree sizes)
    payload  .npz archive of the concatenated tree arrays
"""

from __future__ import annotations

import io
import itertools
import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ModelVersionMismatch
from .features import FEATURE_VERSION, N_FEATURES, FeatureVector, ordering_hash
from .optimizer import K_MAX, K_MIN, KMultiplier

log = logging.getLogger(__name__)

MAGIC = b"LTRF"
FORMAT_VERSION = 1
K_EPS = 1e-3  # predictions are clamped to [K_MIN + K_EPS, K_MAX - K_EPS]


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features: int = 7  # ceil(sqrt(49))
    min_leaf: int = 5
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1  # runtime only; not saved with the model


@dataclass(frozen=True)
class TrainConfig:
    forest: ForestConfig = ForestConfig()
    folds: int = 5
    holdout: float = 0.1
    # CV candidates; each entry overrides ForestConfig fields
    grid: tuple[dict, ...] = ({"max_features": 7}, {"max_features": 16}, {"max_features": 49})
    cv_trees: int | None = 40  # trees per CV fit (None: forest.n_trees)
    seed: int = 0

    @staticmethod
    def product_grid(**axes) -> tuple[dict, ...]:
        keys = sorted(axes)
        return tuple(dict(zip(keys, vals)) for vals in itertools.product(*(axes[k] for k in keys)))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


def leaf_tree(value: float) -> Tree:
    return Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(value)]))


def _best_split(Xn: np.ndarray, yn: np.ndarray, min_leaf: int):
    """Best (column, threshold, score) over the columns of ``Xn``; None if no valid cut."""
    n = len(yn)
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    cs = np.cumsum(yn[order], axis=0)
    total = cs[-1]
    # split after sorted position i (left has i + 1 rows)
    lo, hi = min_leaf - 1, n - min_leaf
    if hi <= lo:
        return None
    nl = np.arange(lo + 1, hi + 1, dtype=float)[:, None]
    left = cs[lo:hi]
    score = left**2 / nl + (total - left) ** 2 / (n - nl)
    score[xs[lo:hi] >= xs[lo + 1 : hi + 1]] = -np.inf
    flat = int(np.argmax(score))
    i, col = divmod(flat, Xn.shape[1])
    if not np.isfinite(score[i, col]):
        return None
    a, b = xs[lo + i, col], xs[lo + i + 1, col]
    thr = a + (b - a) / 2
    if not a <= thr < b:
        thr = a
    return col, float(thr), float(score[i, col])


def build_tree(X: np.ndarray, y: np.ndarray, config: ForestConfig, rng: np.random.Generator) -> Tree:
    n_features = X.shape[1]
    mtry = min(config.max_features, n_features)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            arr.append(v)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        value[node] = float(yn.mean())
        if (
            len(idx) < 2 * config.min_leaf
            or (config.max_depth is not None and depth >= config.max_depth)
            or yn.max() - yn.min() <= 1e-12
        ):
            continue
        cols = rng.choice(n_features, size=mtry, replace=False)
        found = _best_split(X[np.ix_(idx, cols)], yn, config.min_leaf)
        if found is None or found[2] <= yn.sum() ** 2 / len(yn) * (1 + 1e-12):
            continue
        col, thr, _ = found
        f = int(cols[col])
        go_left = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], idx[~go_left], depth + 1))
        stack.append((left[node], idx[go_left], depth + 1))

    return Tree(
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(value, dtype=float),
    )


@dataclass
class ForestModel:
    trees: list[Tree]
    config: ForestConfig = ForestConfig()
    feature_version: int = FEATURE_VERSION
    feature_hash: str = field(default_factory=ordering_hash)
    n_features: int = N_FEATURES
    cv_score: float | None = None
    metrics: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got {X.shape[1]}")
        out = np.zeros(len(X))
        for t in self.trees:
            out += t.predict(X)
        return np.clip(out / len(self.trees), K_MIN + K_EPS, K_MAX - K_EPS)

    # persistence

    def to_bytes(self) -> bytes:
        header = {
            "feature_version": self.feature_version,
            "feature_hash": self.feature_hash,
            "n_features": self.n_features,
            "config": {k: v for k, v in asdict(self.config).items() if k != "n_jobs"},
            "cv_score": self.cv_score,
            "metrics": self.metrics,
            "tree_sizes": [t.n_nodes for t in self.trees],
        }
        buf = io.BytesIO()
        np.savez(buf, **{name: np.concatenate([getattr(t, name) for t in self.trees]) for name in _ARRAYS})
        head = json.dumps(header, sort_keys=True).encode()
        return MAGIC + struct.pack("<HI", FORMAT_VERSION, len(head)) + head + buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ForestModel":
        if data[:4] != MAGIC:
            raise ModelVersionMismatch("not a model file (bad magic bytes)")
        version, n = struct.unpack("<HI", data[4:10])
        if version != FORMAT_VERSION:
            raise ModelVersionMismatch(f"model format v{version}, this build reads v{FORMAT_VERSION}")
        header = json.loads(data[10 : 10 + n])
        arrays = np.load(io.BytesIO(data[10 + n :]))
        cuts = np.cumsum([0, *header["tree_sizes"]])
        cols = {name: arrays[name] for name in _ARRAYS}
        trees = [Tree(*(cols[name][a:b] for name in _ARRAYS)) for a, b in zip(cuts[:-1], cuts[1:])]
        return cls(
            trees,
            ForestConfig(**header["config"]),
            header["feature_version"],
            header["feature_hash"],
            header["n_features"],
            header["cv_score"],
            header["metrics"],
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ForestModel":
        return cls.from_bytes(Path(path).read_bytes())


_ARRAYS = ("feature", "threshold", "left", "right", "value")


def fit_forest(X, y, config: ForestConfig = ForestConfig()) -> ForestModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) != len(y) or len(y) == 0:
        raise ValueError("X and y must be non-empty and aligned")
    if np.ptp(y) <= 1e-12:
        log.warning("all labels equal (%.4g); fitting a single-leaf model", y[0])
        return ForestModel([leaf_tree(y[0])], config, n_features=X.shape[1])
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)

    def one(seq) -> Tree:
        rng = np.random.default_rng(seq)
        rows = rng.integers(0, len(y), len(y)) if config.bootstrap else np.arange(len(y))
        return build_tree(X[rows], y[rows], config, rng)

    if config.n_jobs > 1:
        with ThreadPoolExecutor(config.n_jobs) as pool:
            trees = list(pool.map(one, seeds))
    else:
        trees = [one(s) for s in seeds]
    return ForestModel(trees, config, n_features=X.shape[1])


def r2_score(y, pred) -> float:
    y, pred = np.asarray(y, float), np.asarray(pred, float)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(((y - pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)


def kfold_indices(n: int, folds: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for part in np.array_split(perm, folds):
        mask = np.ones(n, dtype=bool)
        mask[part] = False
        yield np.flatnonzero(mask), part


@dataclass
class TrainSet:
    X: np.ndarray
    y: np.ndarray
    clip_ids: list[str]
    codecs: list[str]
    split: np.ndarray = None  # "train" / "holdout"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("features must be an (n, d) array aligned with labels")
        if not np.all((self.y > K_MIN) & (self.y < K_MAX)):
            raise ValueError(f"labels must lie in ({K_MIN}, {K_MAX})")
        if self.split is None:
            self.split = np.full(len(self.y), "train", dtype=object)

    def assign_holdout(self, fraction: float, seed: int) -> "TrainSet":
        n_hold = int(round(fraction * len(self.y)))
        perm = np.random.default_rng(seed).permutation(len(self.y))
        split = np.full(len(self.y), "train", dtype=object)
        split[perm[:n_hold]] = "holdout"
        return replace(self, split=split)

    def part(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        m = self.split == tag
        return self.X[m], self.y[m]


def cross_validate(X, y, config: ForestConfig, folds: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    scores = []
    for tr, te in kfold_indices(len(y), folds, rng):
        model = fit_forest(X[tr], y[tr], config)
        scores.append(r2_score(y[te], model.predict(X[te])))
    return float(np.mean(scores))


def train_forest(data: TrainSet, config: TrainConfig = TrainConfig()) -> ForestModel:
    """Select hyperparameters by k-fold CV on the training rows, then refit.

    The holdout rows (``config.holdout`` of the data) are only used for the
    final score stored in ``model.metrics``.
    """
    data = data.assign_holdout(config.holdout, config.seed)
    X, y = data.part("train")
    if len(y) < 50:
        raise ValueError(f"need at least 50 training rows, got {len(y)}")
    best_cfg, best_score = config.forest, None
    if np.ptp(y) > 1e-12 and len(config.grid) > 1:
        for overrides in config.grid:
            cand = replace(config.forest, **overrides)
            cv_cfg = cand if config.cv_trees is None else replace(cand, n_trees=min(cand.n_trees, config.cv_trees))
            score = cross_validate(X, y, cv_cfg, config.folds, config.seed)
            log.info("cv %s: r2=%.4f", overrides, score)
            if best_score is None or score > best_score:
                best_cfg, best_score = cand, score
    model = fit_forest(X, y, best_cfg)
    model.cv_score = best_score
    model.metrics = {"n_train": int(len(y)), "n_holdout": int((data.split == "holdout").sum())}
    Xh, yh = data.part("holdout")
    if len(yh):
        pred = model.predict(Xh)
        model.metrics["holdout_r2"] = r2_score(yh, pred)
        model.metrics["holdout_rmse"] = float(np.sqrt(np.mean((pred - yh) ** 2)))
    model.metrics["train_rmse"] = float(np.sqrt(np.mean((model.predict(X) - y) ** 2)))
    return model


def predict_k(model: ForestModel, features: FeatureVector) -> KMultiplier:
    if features.version != model.feature_version or model.feature_hash != ordering_hash():
        raise ModelVersionMismatch(
            f"model trained on feature ordering v{model.feature_version}/{model.feature_hash}, "
            f"features are v{features.version}/{ordering_hash()}"
        )
    k = float(model.predict(features.as_array())[0])
    assert math.isfinite(k)
    return KMultiplier(k)
