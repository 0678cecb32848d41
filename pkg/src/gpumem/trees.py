"""Tree baselines: CART, random forest, AdaBoost.R2, second-order boosted trees.

All four share one greedy builder driven by per-sample gradient/hessian
statistics. With ``g = -y``, ``h = 1`` and no regularization the split score
``G_L^2/H_L + G_R^2/H_R - G^2/H`` is exactly the squared-error reduction and
the leaf value ``-G/H`` is the sample mean, i.e. plain CART.

Fits first put the rows in a canonical order (lexicographic on features,
then target), so every random draw is keyed by position in that order and
the fitted model does not depend on how the caller ordered the rows.
Equal-gain splits go to the lowest feature index, then the smallest threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import ConfigError, make_rng


class FitError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass
class Tree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf.

    Internal node ``i`` sends ``x[feature[i]] <= threshold[i]`` to
    ``left[i]``, otherwise to ``right[i]``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))
        return d(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


class _Builder:
    def __init__(self, X, g, h, max_depth, min_samples_leaf, lam, gamma, leaf_scale,
                 n_features_per_split=None, rng=None, stop_on_constant_target=None):
        self.X, self.g, self.h = X, g, h
        self.max_depth = math.inf if max_depth is None else max_depth
        self.min_leaf = min_samples_leaf
        self.lam, self.gamma = lam, gamma
        self.leaf_scale = leaf_scale
        self.k = n_features_per_split
        self.rng = rng
        self.y_const = stop_on_constant_target
        self.nodes: list[list] = []

    def _leaf(self, G, H):
        return -G / (H + self.lam) * self.leaf_scale

    def build(self) -> Tree:
        self._grow(np.arange(len(self.X)), 0)
        arr = np.array(self.nodes, dtype=object)
        return Tree(feature=arr[:, 0].astype(np.int64), threshold=arr[:, 1].astype(np.float64),
                    left=arr[:, 2].astype(np.int64), right=arr[:, 3].astype(np.int64),
                    value=arr[:, 4].astype(np.float64))

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        g, h = self.g[rows], self.h[rows]
        G, H = g.sum(), h.sum()
        me = len(self.nodes)
        self.nodes.append([-1, 0.0, -1, -1, self._leaf(G, H)])
        if depth >= self.max_depth or len(rows) < 2 * self.min_leaf:
            return me
        if self.y_const is not None:
            yv = self.y_const[rows]
            if yv.max() == yv.min():
                # exact mean; summing then dividing can drift by an ulp
                self.nodes[me][4] = float(yv[0])
                return me
        best = self._best_split(rows, G, H)
        if best is None:
            return me
        j, thr = best
        mask = self.X[rows, j] <= thr
        left = self._grow(rows[mask], depth + 1)
        right = self._grow(rows[~mask], depth + 1)
        self.nodes[me][:4] = [j, thr, left, right]
        return me

    def _best_split(self, rows, G, H):
        n_feat = self.X.shape[1]
        if self.k is not None and self.k < n_feat:
            feats = np.sort(self.rng.choice(n_feat, size=self.k, replace=False))
        else:
            feats = range(n_feat)
        g, h = self.g[rows], self.h[rows]
        parent = G * G / (H + self.lam)
        # noise floor: gains below this are floating-point residue, not structure
        tol = 1e-12 * (float((g * g / np.maximum(h, 1e-300)).sum()) + abs(parent) + 1e-300)
        best_gain, best = -math.inf, None
        n = len(rows)
        for j in feats:
            x = self.X[rows, j]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            GL = np.cumsum(g[order])[:-1]
            HL = np.cumsum(h[order])[:-1]
            pos = np.arange(1, n)
            ok = (xs[:-1] < xs[1:]) & (pos >= self.min_leaf) & (n - pos >= self.min_leaf)
            if not ok.any():
                continue
            GL, HL = GL[ok], HL[ok]
            GR, HR = G - GL, H - HL
            gain = 0.5 * (GL * GL / (HL + self.lam) + GR * GR / (HR + self.lam) - parent) - self.gamma
            i = int(np.argmax(gain))
            if gain[i] > tol and gain[i] > best_gain + tol:
                cut = np.nonzero(ok)[0][i]
                best_gain, best = gain[i], (int(j), 0.5 * (xs[cut] + xs[cut + 1]))
        return best


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise FitError(f"need a non-empty 2-D X with matching y, got X {X.shape}, y {y.shape}")
    return X, y


def _cart(X, y, max_depth, min_samples_leaf, k=None, rng=None) -> Tree:
    return _Builder(X, -y, np.ones_like(y), max_depth, min_samples_leaf, 0.0, 0.0, 1.0,
                    n_features_per_split=k, rng=rng, stop_on_constant_target=y).build()


@dataclass
class CartModel:
    tree: Tree
    n_features: int
    kind: str = "cart"

    def predict(self, X) -> np.ndarray:
        return self.tree.predict(_check_width(X, self.n_features))


def cart_fit(X, y, max_depth: int | None = 8, min_samples_leaf: int = 2) -> CartModel:
    X, y = _check_xy(X, y)
    if min_samples_leaf < 1:
        raise ConfigError("min_samples_leaf must be >= 1")
    o = canonical_order(X, y)
    return CartModel(_cart(X[o], y[o], max_depth, min_samples_leaf), X.shape[1])


@dataclass
class ForestModel:
    trees: list[Tree]
    n_features: int
    seeds: list[int] = field(default_factory=list)
    feature_fraction: float = 1.0
    kind: str = "rf"

    def predict_each(self, X) -> np.ndarray:
        X = _check_width(X, self.n_features)
        return np.stack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return self.predict_each(X).mean(axis=0)


def rf_fit(X, y, n_trees: int = 100, max_depth: int | None = 8, feature_fraction: float | None = None,
           seed: int = 0, min_samples_leaf: int = 2, bootstrap: bool = True) -> ForestModel:
    """Bagged CART trees; tree ``i`` draws its bootstrap and feature subsets from ``seed + i``.

    ``feature_fraction`` defaults to ``1/sqrt(F)``; each split considers
    ``ceil(feature_fraction * F)`` features.
    """
    X, y = _check_xy(X, y)
    if n_trees < 1:
        raise ConfigError("n_trees must be >= 1")
    F = X.shape[1]
    if feature_fraction is None:
        feature_fraction = 1.0 / math.sqrt(F)
    if not 0.0 < feature_fraction <= 1.0:
        raise ConfigError(f"feature_fraction must be in (0, 1], got {feature_fraction}")
    k = math.ceil(feature_fraction * F - 1e-12)
    o = canonical_order(X, y)
    X, y = X[o], y[o]
    n = len(y)
    trees, seeds = [], []
    for i in range(n_trees):
        rng = make_rng(seed + i)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(_cart(X[rows], y[rows], max_depth, min_samples_leaf, k=k, rng=rng))
        seeds.append(seed + i)
    return ForestModel(trees, F, seeds, feature_fraction)


def weighted_median(preds: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-column weighted median of ``preds`` [n_models, n_samples].

    Returns the smallest prediction whose cumulative weight reaches half
    the total.
    """
    order = np.argsort(preds, axis=0, kind="stable")
    sorted_w = weights[order]
    cum = np.cumsum(sorted_w, axis=0)
    pick = np.argmax(cum >= 0.5 * cum[-1], axis=0)
    cols = np.arange(preds.shape[1])
    return preds[order[pick, cols], cols]


@dataclass
class AdaBoostModel:
    trees: list[Tree]
    weights: list[float]
    n_features: int
    mean_losses: list[float] = field(default_factory=list)
    fallback: float = 0.0
    kind: str = "adaboost"

    def predict(self, X) -> np.ndarray:
        X = _check_width(X, self.n_features)
        if not self.trees:
            return np.full(len(X), self.fallback)
        preds = np.stack([t.predict(X) for t in self.trees])
        return weighted_median(preds, np.asarray(self.weights))


def adaboost_r2_fit(X, y, n_rounds: int = 50, max_depth: int | None = 3, seed: int = 0,
                    min_samples_leaf: int = 1) -> AdaBoostModel:
    """Drucker's AdaBoost.R2 with linear loss.

    Each round fits a tree to a weighted resample (``make_rng(seed, round)``),
    scores ``L_i = |residual_i| / max|residual|``, and keeps the tree only
    if the weighted mean loss is below 0.5. Tree weight is ``ln(1/beta)``
    with ``beta = Lbar / (1 - Lbar)``. A round with zero residuals is kept
    with weight 1 and ends boosting. If no round qualifies the model
    predicts the training mean.
    """
    X, y = _check_xy(X, y)
    if n_rounds < 1:
        raise ConfigError("n_rounds must be >= 1")
    o = canonical_order(X, y)
    X, y = X[o], y[o]
    n = len(y)
    w = np.full(n, 1.0 / n)
    model = AdaBoostModel([], [], X.shape[1], fallback=float(y.mean()))
    for r in range(n_rounds):
        rows = make_rng(seed, r).choice(n, size=n, replace=True, p=w)
        tree = _cart(X[rows], y[rows], max_depth, min_samples_leaf)
        err = np.abs(y - tree.predict(X))
        top = err.max()
        if top == 0.0:
            model.trees.append(tree)
            model.weights.append(1.0)
            model.mean_losses.append(0.0)
            break
        loss = err / top
        lbar = float((w * loss).sum())
        if lbar >= 0.5:
            break
        beta = lbar / (1.0 - lbar)
        model.trees.append(tree)
        model.weights.append(math.log(1.0 / beta))
        model.mean_losses.append(lbar)
        w = w * beta ** (1.0 - loss)
        w /= w.sum()
    return model


@dataclass
class BoostModel:
    trees: list[Tree]
    base: float
    eta: float
    n_features: int
    kind: str = "gbt"

    def staged_predict(self, X):
        X = _check_width(X, self.n_features)
        pred = np.full(len(X), self.base)
        yield pred.copy()
        for t in self.trees:
            pred += self.eta * t.predict(X)
            yield pred.copy()

    def predict(self, X) -> np.ndarray:
        *_, last = self.staged_predict(X)
        return last


def gbt_fit(X, y, n_rounds: int = 100, max_depth: int | None = 4, eta: float = 0.1,
            lam: float = 1.0, gamma: float = 0.0, min_samples_leaf: int = 1) -> BoostModel:
    """Second-order boosting on squared loss (``g = pred - y``, ``h = 1``).

    Leaf weight ``-G/(H + lam)``; a split is taken only when
    ``0.5 * [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)] - gamma > 0``.
    Starts from the target mean and adds ``eta * tree`` per round.
    """
    X, y = _check_xy(X, y)
    if n_rounds < 1 or lam < 0 or gamma < 0 or not 0 < eta <= 1:
        raise ConfigError("need n_rounds >= 1, lam >= 0, gamma >= 0, 0 < eta <= 1")
    o = canonical_order(X, y)
    X, y = X[o], y[o]
    base = float(y.mean())
    pred = np.full(len(y), base)
    model = BoostModel([], base, eta, X.shape[1])
    ones = np.ones_like(y)
    for _ in range(n_rounds):
        tree = _Builder(X, pred - y, ones, max_depth, min_samples_leaf, lam, gamma, 1.0).build()
        model.trees.append(tree)
        pred = pred + eta * tree.predict(X)
    return model


def _check_width(X, width: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != width:
        raise SchemaError(f"expected {width} feature columns, got shape {X.shape}")
    return X


def tree_predict(model, X) -> np.ndarray:
    return model.predict(X)


TREE_KINDS = ("cart", "rf", "adaboost", "gbt")
