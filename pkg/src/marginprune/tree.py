"""Weighted CART classification trees (Gini impurity, axis-aligned splits)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

LEAF = -1


class WeightsInvalid(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TreeConfig:
    """Tree growth policy.

    ``max_depth=None`` grows until nodes are pure or no valid split remains.
    ``mtry=None`` considers every feature at every
    split. ``n_thresholds`` switches to a fixed grid of candidate thresholds
    on [0, 1] (for normalized features) instead of data midpoints.
    """

    max_depth: int | None = 1
    min_leaf_weight: float = 0.0
    mtry: int | None = None
    rng_seed: int = 0
    n_thresholds: int | None = None

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")
        if self.min_leaf_weight < 0:
            raise ValueError("min_leaf_weight must be >= 0")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive or None")

    def topology(self) -> str:
        return {1: "stump", 2: "depth2", None: "full"}.get(self.max_depth, f"depth{self.max_depth}")

    def with_seed(self, seed: int) -> "TreeConfig":
        return TreeConfig(self.max_depth, self.min_leaf_weight, self.mtry, seed, self.n_thresholds)


STUMP = TreeConfig(max_depth=1)
DEPTH2 = TreeConfig(max_depth=2)
FULL = TreeConfig(max_depth=None)


def config_for(topology: str, **kw) -> TreeConfig:
    depth = {"stump": 1, "1": 1, "depth2": 2, "2": 2, "full": None}[str(topology)]
    return TreeConfig(max_depth=depth, **kw)


def default_mtry(p: int) -> int:
    return max(1, math.ceil(math.sqrt(p)))


def threshold_grid(k: int) -> np.ndarray:
    """``k`` thresholds at the centres of ``k`` equal bins of [0, 1]."""
    return (np.arange(k) + 0.5) / k


@dataclass(frozen=True)
class Tree:
    """Node arrays in preorder; leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] != LEAF
        return self.label[node]

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "nodes": [
                {"feature": int(f), "threshold": float(t), "left": int(l),
                 "right": int(r), "label": int(c)}
                for f, t, l, r, c in zip(self.feature, self.threshold, self.left, self.right, self.label)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        nodes = d["nodes"]
        return cls(
            feature=np.array([n["feature"] for n in nodes], dtype=int),
            threshold=np.array([n["threshold"] for n in nodes], dtype=float),
            left=np.array([n["left"] for n in nodes], dtype=int),
            right=np.array([n["right"] for n in nodes], dtype=int),
            label=np.array([n["label"] for n in nodes], dtype=int),
            n_features=int(d["n_features"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, s: str) -> "Tree":
        return cls.from_dict(json.loads(s))


def predict_tree(t: Tree, x) -> int:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("predict_tree takes a single feature vector")
    return int(t.predict(x)[0])


def _best_split_midpoints(xs, wp, wn, W, min_leaf):
    """Score every midpoint split per column of the presorted block ``xs``."""
    Lp = np.cumsum(wp, axis=0)[:-1]
    Ln = np.cumsum(wn, axis=0)[:-1]
    P, N = Lp[-1] + wp[-1], Ln[-1] + wn[-1]
    Rp, Rn = P - Lp, N - Ln
    WL, WR = Lp + Ln, Rp + Rn
    valid = (xs[1:] > xs[:-1]) & (WL > 0) & (WR > 0) & (WL >= min_leaf) & (WR >= min_leaf)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (Lp**2 + Ln**2) / WL + (Rp**2 + Rn**2) / WR
    score = np.where(valid, score, -np.inf)
    thr = (xs[1:] + xs[:-1]) / 2.0
    return score, thr


def _best_split_grid(xs, wp, wn, W, min_leaf, grid):
    m = xs.shape[0]
    cp = np.vstack([np.zeros((1, xs.shape[1])), np.cumsum(wp, axis=0)])
    cn = np.vstack([np.zeros((1, xs.shape[1])), np.cumsum(wn, axis=0)])
    # count of rows with x <= t, per (threshold, feature)
    cnt = np.stack([np.searchsorted(xs[:, j], grid, side="right") for j in range(xs.shape[1])], axis=1)
    cols = np.arange(xs.shape[1])[None, :]
    Lp, Ln = cp[cnt, cols], cn[cnt, cols]
    P, N = cp[-1][None, :], cn[-1][None, :]
    Rp, Rn = P - Lp, N - Ln
    WL, WR = Lp + Ln, Rp + Rn
    valid = (cnt > 0) & (cnt < m) & (WL > 0) & (WR > 0) & (WL >= min_leaf) & (WR >= min_leaf)
    # identical partitions from neighbouring grid points: keep the lowest threshold
    valid[1:] &= cnt[1:] != cnt[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (Lp**2 + Ln**2) / WL + (Rp**2 + Rn**2) / WR
    score = np.where(valid, score, -np.inf)
    thr = np.broadcast_to(grid[:, None], score.shape)
    return score, thr


class _Builder:
    def __init__(self, X, y, w, cfg: TreeConfig):
        self.X, self.y, self.w, self.cfg = X, y, w, cfg
        self.wp = np.where(y == 1, w, 0.0)
        self.wn = np.where(y == -1, w, 0.0)
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.grid = threshold_grid(cfg.n_thresholds) if cfg.n_thresholds else None
        self.nodes = []  # [feature, threshold, left, right, label]

    def leaf_label(self, idx):
        diff = self.wp[idx].sum() - self.wn[idx].sum()
        if diff > 0:
            return 1
        if diff < 0:
            return -1
        return int(self.rng.choice((-1, 1)))

    def find_split(self, idx):
        p = self.X.shape[1]
        mtry = self.cfg.mtry
        feats = np.arange(p) if mtry is None or mtry >= p else np.sort(self.rng.choice(p, mtry, replace=False))
        Xn = self.X[np.ix_(idx, feats)]
        order = np.argsort(Xn, axis=0, kind="stable")
        xs = np.take_along_axis(Xn, order, axis=0)
        wp = self.wp[idx][order]
        wn = self.wn[idx][order]
        W = self.wp[idx].sum() + self.wn[idx].sum()
        if self.grid is None:
            score, thr = _best_split_midpoints(xs, wp, wn, W, self.cfg.min_leaf_weight)
        else:
            score, thr = _best_split_grid(xs, wp, wn, W, self.cfg.min_leaf_weight, self.grid)
        best = score.max() if score.size else -np.inf
        P, N = wp.sum(axis=0)[0], wn.sum(axis=0)[0]
        parent = (P**2 + N**2) / W if W > 0 else 0.0
        # a split that leaves the impurity unchanged is still taken (XOR needs one)
        if not np.isfinite(best) or best < parent * (1 - 1e-12):
            return None
        tied = score >= best - 1e-12 * abs(best)
        # lowest feature index, then lowest threshold
        cands = [(feats[j], thr[k, j]) for k, j in zip(*np.nonzero(tied))]
        f, t = min(cands)
        return int(f), float(t)

    def build(self, idx, depth):
        node_id = len(self.nodes)
        self.nodes.append([LEAF, 0.0, LEAF, LEAF, self.leaf_label(idx)])
        if self.cfg.max_depth is not None and depth >= self.cfg.max_depth:
            return node_id
        yy = self.y[idx][self.w[idx] > 0]
        if len(yy) == 0 or (yy == yy[0]).all():
            return node_id
        split = self.find_split(idx)
        if split is None:
            return node_id
        f, t = split
        go_left = self.X[idx, f] <= t
        self.nodes[node_id][0:2] = [f, t]
        self.nodes[node_id][2] = self.build(idx[go_left], depth + 1)
        self.nodes[node_id][3] = self.build(idx[~go_left], depth + 1)
        return node_id


def fit_tree(X, y, obs_weights, cfg: TreeConfig) -> Tree:
    """Greedy weighted-Gini CART fit; ``obs_weights`` must sum to 1."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    w = np.asarray(obs_weights, dtype=float)
    if w.shape != (X.shape[0],):
        raise WeightsInvalid(f"expected {X.shape[0]} weights, got shape {w.shape}")
    if (w < 0).any() or not np.isfinite(w).all() or abs(w.sum() - 1.0) > 1e-9:
        raise WeightsInvalid("weights must be nonnegative and sum to 1")
    b = _Builder(X, y, w, cfg)
    b.build(np.arange(X.shape[0]), 0)
    cols = list(zip(*b.nodes))
    return Tree(
        feature=np.array(cols[0], dtype=int),
        threshold=np.array(cols[1], dtype=float),
        left=np.array(cols[2], dtype=int),
        right=np.array(cols[3], dtype=int),
        label=np.array(cols[4], dtype=int),
        n_features=X.shape[1],
    )


def weighted_error(t: Tree, X, y, w) -> float:
    return float(np.sum(np.asarray(w)[t.predict(X) != np.asarray(y)]))
