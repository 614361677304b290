"""Gradient-boosted regression trees, from scratch on numpy.

Two losses are supported: squared error for continuous targets and
multinomial log-loss for discrete treatments. Split search is exhaustive
over sorted unique thresholds (no histogram binning; the study tables are
small enough that exactness is affordable). Fitting is deterministic for
a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import EstimationError
from .rng import Xorshift64Star, derive_seed

_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class GbmParams:
    """Hyperparameters for one boosted model.

    Defaults follow common GBM practice; every run manifest records the
    values actually used.
    """

    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_leaf: int = 5
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")


@dataclass
class RegressionTree:
    """Binary regression tree in flat-array form.

    ``feature[i] == -1`` marks node i as a leaf whose prediction is
    ``value[i]``. Internal nodes send rows with x[feature] <= threshold to
    ``left[i]`` and the rest to ``right[i]``. Predictions are piecewise
    constant over feature space.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    max_depth: int
    min_leaf: int
    # leaf id of every training row, populated by fit_tree; not serialized
    leaf_of_row_cache: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row of X."""
        node = np.zeros(len(X), dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                continue
            here = node == i
            if not here.any():
                continue
            goes_left = X[:, self.feature[i]] <= self.threshold[i]
            node[here & goes_left] = self.left[i]
            node[here & ~goes_left] = self.right[i]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_samples=np.asarray(d["n_samples"], dtype=np.int64),
            max_depth=int(d["max_depth"]),
            min_leaf=int(d["min_leaf"]),
        )


def _presort(X: np.ndarray) -> list[np.ndarray]:
    """Stable argsort of every feature column, computed once per fit."""
    return [np.argsort(X[:, j], kind="stable") for j in range(X.shape[1])]


class _TreeBuilder:
    """Grows one tree on (X, y, w) using presorted column indices."""

    def __init__(self, X, y, w, max_depth, min_leaf, presort, columns=None):
        self.X = X
        self.columns = columns or [np.ascontiguousarray(X[:, j]) for j in range(X.shape[1])]
        self.y = y
        self.w = w
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.presort = presort
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.n_samples: list[int] = []
        self.leaf_of_row = np.zeros(len(y), dtype=np.int64)

    def _best_split(self, cols):
        """(gain_score, feature, threshold) of the best split, or None.

        The score is sum over children of (sum w*y)^2 / (sum w); bigger is
        better. Ties break toward the lowest feature index and then the
        lowest threshold (np.argmax keeps the first maximum, and
        thresholds are scanned in ascending order).
        """
        best = None
        for j, idx in enumerate(cols):
            xs = self.columns[j][idx]
            ok = xs[1:] > xs[:-1]
            ok[: self.min_leaf - 1] = False
            ok[len(ok) - self.min_leaf + 1 :] = False
            if not ok.any():
                continue
            ys = self.y[idx]
            if self.w is None:
                cw = np.arange(1.0, len(idx) + 1.0)
                cs = np.cumsum(ys)
            else:
                ws = self.w[idx]
                cw = np.cumsum(ws)
                cs = np.cumsum(ws * ys)
            total_w = cw[-1]
            total_s = cs[-1]
            lw = cw[:-1]
            ls = cs[:-1]
            rw = total_w - lw
            rs = total_s - ls
            with np.errstate(divide="ignore", invalid="ignore"):
                score = ls * ls / lw + rs * rs / rw
            score[~ok] = -np.inf
            k = int(np.argmax(score))
            if best is None or score[k] > best[0]:
                thr = 0.5 * (xs[k] + xs[k + 1])
                best = (float(score[k]), j, thr)
        return best

    def build(self):
        n = len(self.y)
        # stack entries: (node_id, depth, per-feature sorted row indices)
        self._new_node(np.arange(n), self.presort)
        stack = [(0, 0, self.presort)]
        while stack:
            node_id, depth, cols = stack.pop()
            n_node = len(cols[0])
            if depth >= self.max_depth or n_node < 2 * self.min_leaf:
                continue
            if self.w is None:
                parent_w = float(n_node)
                parent_s = float(self.y[cols[0]].sum())
            else:
                ws = self.w[cols[0]]
                parent_w = float(ws.sum())
                parent_s = float((ws * self.y[cols[0]]).sum())
            parent_score = parent_s * parent_s / parent_w
            best = self._best_split(cols)
            if best is None:
                continue
            score, j, thr = best
            if score <= parent_score + _GAIN_EPS * max(1.0, abs(parent_score)):
                continue
            go_left = np.zeros(len(self.y), dtype=bool)
            go_left[cols[j][self.columns[j][cols[j]] <= thr]] = True
            left_cols = [c[go_left[c]] for c in cols]
            right_cols = [c[~go_left[c]] for c in cols]
            left_id = self._new_node(left_cols[0], left_cols)
            right_id = self._new_node(right_cols[0], right_cols)
            self.feature[node_id] = j
            self.threshold[node_id] = thr
            self.left[node_id] = left_id
            self.right[node_id] = right_id
            stack.append((left_id, depth + 1, left_cols))
            stack.append((right_id, depth + 1, right_cols))
        return self._finish()

    def _new_node(self, rows, _cols) -> int:
        node_id = len(self.feature)
        if self.w is None:
            mean = float(self.y[rows].mean()) if len(rows) else 0.0
        else:
            ws = self.w[rows]
            mean = float((ws * self.y[rows]).sum() / ws.sum()) if len(rows) else 0.0
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(mean)
        self.n_samples.append(len(rows))
        self.leaf_of_row[rows] = node_id
        return node_id

    def _finish(self) -> RegressionTree:
        return RegressionTree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=np.float64),
            n_samples=np.asarray(self.n_samples, dtype=np.int64),
            max_depth=self.max_depth,
            min_leaf=self.min_leaf,
        )


def fit_tree(
    X: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    max_depth: int = 3,
    min_leaf: int = 5,
    presort: list[np.ndarray] | None = None,
    columns: list[np.ndarray] | None = None,
) -> RegressionTree:
    """Greedy CART least-squares tree.

    Splits maximise weighted squared-error reduction with an exhaustive
    threshold scan; leaves predict the weighted mean of their rows.
    ``presort``/``columns`` let a boosting loop reuse per-feature sort
    orders and contiguous column copies across trees.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be n x p and aligned with targets")
    if len(y) < 2 * min_leaf:
        raise EstimationError(
            f"need at least {2 * min_leaf} rows to split with min_leaf={min_leaf}"
        )
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise EstimationError("non-finite values in tree training data")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if not np.isfinite(weights).all() or (weights < 0).any():
            raise EstimationError("weights must be finite and non-negative")
    if presort is None:
        presort = _presort(X)
    builder = _TreeBuilder(X, y, weights, max_depth, min_leaf, presort, columns)
    tree = builder.build()
    tree.leaf_of_row_cache = builder.leaf_of_row
    return tree


@dataclass
class GbmModel:
    """A fitted gradient-boosted ensemble.

    For regression, predict(X) = base + learning_rate * sum of tree
    outputs. For classification, ``trees`` holds one tree per class per
    boosting round and predictions are softmax class probabilities.
    """

    loss: str  # "squared-error" | "multinomial-log-loss"
    base_prediction: np.ndarray  # scalar array () or per-class log-odds (k,)
    trees: list  # list[RegressionTree] or list[list[RegressionTree]]
    params: GbmParams
    n_features: int
    classes: list | None = None

    def _check_width(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise EstimationError(
                f"feature width {X.shape[1] if X.ndim == 2 else 'n/a'} does not "
                f"match training width {self.n_features}"
            )
        return X

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        X = self._check_width(X)
        lr = self.params.learning_rate
        if self.loss == "squared-error":
            out = np.full(len(X), float(self.base_prediction))
            for tree in self.trees:
                out += lr * tree.predict(X)
            return out
        k = len(self.classes)
        out = np.tile(np.asarray(self.base_prediction, dtype=np.float64), (len(X), 1))
        for round_trees in self.trees:
            for c in range(k):
                out[:, c] += lr * round_trees[c].predict(X)
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Point predictions (regression) or probability rows (classification)."""
        scores = self.raw_scores(X)
        if self.loss == "squared-error":
            return scores
        return _softmax(scores)

    def to_json(self) -> str:
        d = {
            "loss": self.loss,
            "base_prediction": np.asarray(self.base_prediction).tolist(),
            "params": asdict(self.params),
            "n_features": self.n_features,
            "classes": self.classes,
        }
        if self.loss == "squared-error":
            d["trees"] = [t.to_dict() for t in self.trees]
        else:
            d["trees"] = [[t.to_dict() for t in row] for row in self.trees]
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "GbmModel":
        d = json.loads(text)
        params = GbmParams(**d["params"])
        if d["loss"] == "squared-error":
            trees = [RegressionTree.from_dict(t) for t in d["trees"]]
            base = np.float64(d["base_prediction"])
        else:
            trees = [[RegressionTree.from_dict(t) for t in row] for row in d["trees"]]
            base = np.asarray(d["base_prediction"], dtype=np.float64)
        return cls(
            loss=d["loss"],
            base_prediction=base,
            trees=trees,
            params=params,
            n_features=d["n_features"],
            classes=d["classes"],
        )


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _subsample_rows(n: int, params: GbmParams, stream: Xorshift64Star) -> np.ndarray | None:
    if params.subsample >= 1.0:
        return None
    m = max(int(np.floor(params.subsample * n)), 2 * params.min_leaf)
    m = min(m, n)
    return stream.sample_indices(n, m)


def fit_gbm(X: np.ndarray, y: np.ndarray, params: GbmParams) -> GbmModel:
    """Stagewise gradient boosting on squared error (continuous targets).

    Each round fits a tree to the current residuals and shrinks its
    contribution by the learning rate.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 10:
        raise EstimationError("need at least 10 rows to boost")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise EstimationError("non-finite values in boosting data")
    presort = _presort(X)
    columns = [np.ascontiguousarray(X[:, j]) for j in range(X.shape[1])]
    stream = Xorshift64Star(derive_seed(params.seed, "gbm-subsample"))
    base = float(y.mean())
    fitted = np.full(len(y), base)
    trees = []
    for _ in range(params.n_estimators):
        resid = y - fitted
        rows = _subsample_rows(len(y), params, stream)
        if rows is None:
            tree = fit_tree(
                X, resid, None, params.max_depth, params.min_leaf,
                presort=presort, columns=columns,
            )
            fitted += params.learning_rate * tree.value[tree.leaf_of_row_cache]
        else:
            tree = fit_tree(
                X[rows], resid[rows], None, params.max_depth, params.min_leaf
            )
            fitted += params.learning_rate * tree.predict(X)
        trees.append(tree)
    return GbmModel(
        loss="squared-error",
        base_prediction=np.float64(base),
        trees=trees,
        params=params,
        n_features=X.shape[1],
    )


def fit_gbm_classifier(X: np.ndarray, y: np.ndarray, params: GbmParams) -> GbmModel:
    """Multinomial gradient boosting for discrete treatments.

    Per round, one tree per class is fit to the (one-hot minus softmax)
    pseudo-residuals; leaf values are replaced by the standard one-step
    Newton estimate for multinomial deviance.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(y) < 10:
        raise EstimationError("need at least 10 rows to boost")
    classes = sorted(set(y.tolist()))
    k = len(classes)
    if k < 2:
        raise EstimationError("classification needs at least two classes")
    class_index = {c: i for i, c in enumerate(classes)}
    yi = np.asarray([class_index[v] for v in y.tolist()], dtype=np.int64)
    onehot = np.zeros((len(y), k))
    onehot[np.arange(len(y)), yi] = 1.0
    priors = onehot.mean(axis=0)
    base = np.log(priors)
    scores = np.tile(base, (len(y), 1))
    presort = _presort(X)
    columns = [np.ascontiguousarray(X[:, j]) for j in range(X.shape[1])]
    stream = Xorshift64Star(derive_seed(params.seed, "gbm-subsample"))
    rounds = []
    newton_scale = (k - 1.0) / k
    for _ in range(params.n_estimators):
        probs = _softmax(scores)
        resid = onehot - probs
        rows = _subsample_rows(len(y), params, stream)
        round_trees = []
        for c in range(k):
            rc = resid[:, c]
            if rows is None:
                tree = fit_tree(
                    X, rc, None, params.max_depth, params.min_leaf,
                    presort=presort, columns=columns,
                )
                leaf_of_row = tree.leaf_of_row_cache
            else:
                tree = fit_tree(
                    X[rows], rc[rows], None, params.max_depth, params.min_leaf
                )
                leaf_of_row = tree.apply(X)
            # Newton step per leaf: (k-1)/k * sum(r) / sum(|r| (1-|r|))
            num = np.bincount(leaf_of_row, weights=rc, minlength=tree.n_nodes)
            ar = np.abs(rc) * (1.0 - np.abs(rc))
            den = np.bincount(leaf_of_row, weights=ar, minlength=tree.n_nodes)
            values = np.zeros(tree.n_nodes)
            good = den > 1e-12
            values[good] = newton_scale * num[good] / den[good]
            tree.value = values
            scores[:, c] += params.learning_rate * values[leaf_of_row]
            round_trees.append(tree)
        rounds.append(round_trees)
    return GbmModel(
        loss="multinomial-log-loss",
        base_prediction=base,
        trees=rounds,
        params=params,
        n_features=X.shape[1],
        classes=classes,
    )


def predict(model: GbmModel, X: np.ndarray) -> np.ndarray:
    """Deterministic prediction; classification rows are softmax probabilities."""
    return model.predict(X)
