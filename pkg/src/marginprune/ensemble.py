"""AdaBoost and random forest ensembles with normalized voting weights."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .tree import DimensionMismatch, Tree, TreeConfig, default_mtry, fit_tree

EPS_FLOOR = 1e-10
MAX_RESETS = 25
TIE_TOL = 1e-12


class NoRoundsCompleted(RuntimeError):
    pass


@dataclass(frozen=True)
class Ensemble:
    learners: list
    alpha: np.ndarray
    kind: str
    tree_config: TreeConfig = field(default_factory=TreeConfig)
    history: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if len(self.learners) < 1 or a.shape != (len(self.learners),):
            raise ValueError("need one weight per learner and at least one learner")
        if (a < 0).any() or abs(a.sum() - 1.0) > 1e-9:
            raise ValueError("alpha must be nonnegative and sum to 1")
        if self.kind not in ("adaboost", "rf"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        object.__setattr__(self, "alpha", a)

    @property
    def T(self) -> int:
        return len(self.learners)

    def predictions(self, X) -> np.ndarray:
        """n x T matrix of learner votes."""
        X = np.asarray(X, dtype=float)
        return np.column_stack([t.predict(X) for t in self.learners])

    def predict(self, X, seed: int = 0) -> np.ndarray:
        return weighted_vote(self.predictions(X), self.alpha, seed)

    def prefix(self, T: int) -> "Ensemble":
        """The first ``T`` learners with their weights renormalized.

        For AdaBoost this is the ensemble after ``T`` rounds; for a random
        forest it is a forest of ``T`` trees.
        """
        if not 1 <= T <= self.T:
            raise ValueError(f"prefix size {T} outside 1..{self.T}")
        a = self.alpha[:T]
        return Ensemble(self.learners[:T], a / a.sum(), self.kind, self.tree_config, self.history[:T])

    def reweighted(self, w) -> "Ensemble":
        """Keep learners with positive weight in ``w`` (renormalized)."""
        w = np.asarray(w, dtype=float)
        keep = np.flatnonzero(w > 0)
        return Ensemble([self.learners[i] for i in keep], w[keep] / w[keep].sum(),
                        self.kind, self.tree_config)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for t, tree in enumerate(self.learners):
            name = f"tree_{t:04d}.json"
            (directory / name).write_text(tree.dumps())
            files.append(name)
        cfg = self.tree_config
        manifest = {
            "kind": self.kind,
            "T": self.T,
            "alpha": [float(a) for a in self.alpha],
            "tree_config": {"max_depth": cfg.max_depth, "min_leaf_weight": cfg.min_leaf_weight,
                            "mtry": cfg.mtry, "rng_seed": cfg.rng_seed,
                            "n_thresholds": cfg.n_thresholds},
            "trees": files,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "Ensemble":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        trees = [Tree.loads((directory / f).read_text()) for f in manifest["trees"]]
        return cls(trees, np.array(manifest["alpha"]), manifest["kind"],
                   TreeConfig(**manifest["tree_config"]))


def weighted_vote(H, w, seed: int = 0) -> np.ndarray:
    """sign(H w) per row; exact ties are broken by a seeded coin flip."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    w = np.asarray(w, dtype=float)
    if H.shape[1] != w.shape[0]:
        raise DimensionMismatch(f"{H.shape[1]} votes but {w.shape[0]} weights")
    s = H @ w
    out = np.sign(s).astype(int)
    ties = np.abs(s) <= TIE_TOL
    if ties.any():
        out[ties] = np.random.default_rng(seed).choice((-1, 1), size=int(ties.sum()))
    return out


def predict_ensemble(e_or_H, x_or_w, seed: int = 0):
    """Combined vote for an Ensemble on features, or for a precomputed H with weights."""
    if isinstance(e_or_H, Ensemble):
        x = np.asarray(x_or_w, dtype=float)
        single = x.ndim == 1
        out = e_or_H.predict(x[None, :] if single else x, seed)
        return int(out[0]) if single else out
    H = np.asarray(e_or_H)
    out = weighted_vote(H, x_or_w, seed)
    return int(out[0]) if H.ndim == 1 else out


def test_error(e_or_H, data: Dataset, w=None, seed: int = 0) -> float:
    """Misclassification rate of the weighted vote on ``data``."""
    if data.n == 0:
        raise ValueError("empty dataset")
    if isinstance(e_or_H, Ensemble):
        pred = e_or_H.predict(data.features, seed)
    else:
        pred = weighted_vote(e_or_H, w, seed)
    return float(np.mean(pred != data.labels))


test_error.__test__ = False


def fit_adaboost(train: Dataset, T: int, cfg: TreeConfig, boosting: str = "reweight",
                 seed: int = 0, keep_weights: bool = False) -> Ensemble:
    """Discrete AdaBoost.

    Each round fits a tree to the current observation weights, stops on a
    perfect (eps = 0) or useless (eps >= 1/2) learner, and reweights the
    sample by exp(-alpha * y * h). A perfect learner is kept with eps floored
    at 1e-10. With ``boosting="resample"`` each tree is instead fit on a
    weighted bootstrap sample; eps is still measured on the full sample.
    A resampled learner with eps >= 1/2 is discarded rather than ending the
    run: the weights are reset to uniform and a fresh sample is drawn, up
    to ``MAX_RESETS`` times in a row.

    ``history`` records eps_t and the raw alpha_t per round. With
    ``keep_weights`` it also holds the weights used to fit round t and the
    updated weights that follow it.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if boosting not in ("reweight", "resample"):
        raise ValueError(f"unknown boosting mode {boosting!r}")
    X, y = train.features, train.labels
    n = train.n
    D = np.full(n, 1.0 / n)
    seeds = np.random.SeedSequence(seed).generate_state(T)
    rng = np.random.default_rng(seed)
    learners, alphas, history = [], [], []

    resets = 0
    while len(learners) < T:
        t = len(learners)
        tcfg = cfg.with_seed(int(seeds[t]) + resets)
        if boosting == "reweight":
            tree = fit_tree(X, y, D, tcfg)
        else:
            idx = rng.choice(n, size=n, replace=True, p=D)
            tree = fit_tree(X[idx], y[idx], np.full(n, 1.0 / n), tcfg)
        h = tree.predict(X)
        eps = float(D[h != y].sum())
        if eps >= 0.5 and boosting == "resample" and resets < MAX_RESETS:
            resets += 1
            D = np.full(n, 1.0 / n)
            continue
        if eps >= 0.5:
            if not learners:
                raise NoRoundsCompleted(f"first learner has weighted error {eps:.4f} >= 1/2")
            break
        resets = 0
        perfect = eps <= 0.0
        a = 0.5 * math.log((1.0 - max(eps, EPS_FLOOR)) / max(eps, EPS_FLOOR))
        rec = {"eps": eps, "alpha": a}
        if keep_weights:
            rec["weights"] = D.copy()
        history.append(rec)
        learners.append(tree)
        alphas.append(a)
        if perfect:
            break
        D = D * np.exp(-a * y * h)
        D /= D.sum()
        if keep_weights:
            rec["next_weights"] = D.copy()

    alpha = np.array(alphas)
    return Ensemble(learners, alpha / alpha.sum(), "adaboost", cfg, history)


def fit_random_forest(train: Dataset, T: int, cfg: TreeConfig, seed: int = 0) -> Ensemble:
    """Bootstrap-aggregated trees with per-split feature subsampling and uniform votes.

    ``cfg.mtry=None`` is replaced by ceil(sqrt(p)); pass ``mtry=p`` to use
    every feature.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    n = train.n
    if cfg.mtry is None:
        cfg = TreeConfig(cfg.max_depth, cfg.min_leaf_weight, default_mtry(train.p),
                         cfg.rng_seed, cfg.n_thresholds)
    children = np.random.SeedSequence(seed).spawn(T)
    learners = []
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.integers(0, n, size=n)
        tree_seed = int(child.generate_state(1)[0])
        learners.append(fit_tree(train.features[idx], train.labels[idx], np.full(n, 1.0 / n),
                                 cfg.with_seed(tree_seed)))
    return Ensemble(learners, np.full(T, 1.0 / T), "rf", cfg)
