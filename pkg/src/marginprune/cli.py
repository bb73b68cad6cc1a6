"""Command line entry point: train, prune and sweep."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import qpsolver
from .baselines import diversity, drep_prune, kappa_prune
from .dataset import (Dataset, DatasetError, SplitSpec, UnitScaler, load_bundled, load_csv,
                      split, synth_diagonal)
from .ensemble import Ensemble, fit_adaboost, fit_random_forest, test_error
from .margins import cmd, hypothesis_space_log, prediction_matrix
from .qmm import default_ladder, emargin_ladder, qmm_weights

log = logging.getLogger("marginprune")

OUT_ENV = "MARGINPRUNE_OUT"
RESULT_HEADER = ["kind", "seed", "T", "method", "test_error", "train_error", "survivors",
                 "diversity", "upsilon_used", "pruning_rate", "status"]
SWEEP_HEADER = ["upsilon", "status", "survivors", "fraction_used", "test_error"]
METHODS = ("full", "qmm", "drep", "kappa")


class UsageError(Exception):
    pass


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "marginprune_out"))


# ---------------------------------------------------------------- data

@dataclass
class DataSource:
    """Where the train/test sets come from.

    ``source`` is a CSV path, ``bundled:NAME`` or ``synth:N:FLIPS[:TEST_N]``.
    Synthetic data gets a clean test set of its own; everything else is split.
    """
    source: str
    label: str | None = None
    positive: str | None = None
    drop: tuple = ()
    train_fraction: float = 0.7

    def to_dict(self) -> dict:
        return {"source": self.source, "label": self.label, "positive": self.positive,
                "drop": list(self.drop), "train_fraction": self.train_fraction}

    @classmethod
    def from_dict(cls, d: dict) -> "DataSource":
        return cls(d["source"], d.get("label"), d.get("positive"), tuple(d.get("drop", ())),
                   d.get("train_fraction", 0.7))

    def load(self, seed: int) -> tuple[Dataset, Dataset]:
        if self.source.startswith("synth:"):
            parts = self.source.split(":")[1:]
            try:
                nums = [int(v) for v in parts]
            except ValueError:
                raise UsageError(f"bad synthetic source {self.source!r}") from None
            if len(nums) not in (2, 3):
                raise UsageError("synthetic source is synth:N:FLIPS[:TEST_N]")
            n, flips = nums[:2]
            n_test = nums[2] if len(nums) == 3 else n
            # the test seed is offset so it never coincides with a training draw
            return synth_diagonal(n, flips, seed), synth_diagonal(n_test, 0, seed + 100_000)
        if self.source.startswith("bundled:"):
            d = load_bundled(self.source.split(":", 1)[1])
        else:
            if not self.label or self.positive is None:
                raise UsageError("--label and --positive are required for CSV data")
            d = load_csv(self.source, self.label, self.positive, self.drop)
        train, test = split(d, SplitSpec(self.train_fraction, seed))
        scaler = UnitScaler.fit(train)
        return scaler.transform(train), scaler.transform(test)


# ---------------------------------------------------------------- training

def tree_config(depth: str):
    from .tree import config_for
    topo = {"1": "stump", "2": "depth2", "full": "full", "stump": "stump", "depth2": "depth2"}.get(depth)
    if topo is None:
        raise UsageError(f"--depth must be 1, 2 or full, got {depth!r}")
    return config_for(topo)


def boosting_mode(mode: str, cfg) -> str:
    if mode == "auto":
        # a fully grown tree fits reweighted data perfectly, so boosting would stop at once
        return "resample" if cfg.max_depth is None else "reweight"
    return mode


def train_ensemble(train: Dataset, kind: str, trees: int, depth: str, seed: int,
                   boosting: str = "auto") -> Ensemble:
    cfg = tree_config(depth)
    if kind == "adaboost":
        return fit_adaboost(train, trees, cfg, boosting=boosting_mode(boosting, cfg), seed=seed)
    if kind == "rf":
        return fit_random_forest(train, trees, cfg, seed=seed)
    raise UsageError(f"unknown ensemble kind {kind!r}")


# ---------------------------------------------------------------- pruning

def parse_ladder(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad upsilon ladder {text!r}") from None
    if not vals:
        raise UsageError("empty upsilon ladder")
    return vals


def run_method(method: str, e: Ensemble, train: Dataset, H, *, ladder=None, emargin=False,
               hyp_thresholds=100, keep_fraction=0.2, rho=0.4):
    if method == "qmm":
        if emargin:
            depth = e.tree_config.max_depth
            if depth not in (1, 2):
                raise UsageError("EMargin needs stumps or depth-2 trees")
            ln_hyp = hypothesis_space_log(train.p, hyp_thresholds, depth)
            ladder = emargin_ladder(H, train.labels, e.alpha, ln_hyp,
                                    fallback=default_ladder(e.kind))
        elif ladder is None:
            ladder = default_ladder(e.kind)
        return qmm_weights(H, train.labels, e.alpha, ladder)
    if method == "kappa":
        keep = max(1, math.ceil(keep_fraction * e.T - 1e-9))
        return kappa_prune(e, train, keep=min(keep, e.T), H=H)
    if method == "drep":
        return drep_prune(e, train, rho=rho, H=H)
    raise UsageError(f"unknown method {method!r}")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


# ---------------------------------------------------------------- commands

def add_data_args(p, required=True):
    p.add_argument("--data", required=required, help="CSV path, bundled:NAME or synth:N:FLIPS[:TEST_N]")
    p.add_argument("--label", help="label column name")
    p.add_argument("--positive", help="label value mapped to +1")
    p.add_argument("--drop-columns", default="", help="comma separated columns to ignore")
    p.add_argument("--train-fraction", type=float, default=None)


def data_from_args(args, fallback: dict | None = None) -> DataSource:
    base = DataSource.from_dict(fallback) if fallback else None
    if args.data is None:
        if base is None:
            raise UsageError("--data is required")
        return base
    drop = tuple(c for c in args.drop_columns.split(",") if c)
    frac = args.train_fraction if args.train_fraction is not None else 0.7
    return DataSource(args.data, args.label, args.positive, drop, frac)


def cmd_train(args) -> int:
    out = Path(args.out) if args.out else default_out_dir() / "ensemble"
    src = data_from_args(args)
    train, test = src.load(args.seed)
    e = train_ensemble(train, args.kind, args.trees, args.depth, args.seed, args.boosting)
    e.save(out)
    meta = {"data": src.to_dict(), "seed": args.seed, "boosting": args.boosting, "depth": args.depth}
    (out / "data.json").write_text(json.dumps(meta, indent=2))
    print(f"{e.kind}: {e.T} trees written to {out}")
    print(f"train error {test_error(e, train):.4f}  test error {test_error(e, test):.4f}")
    return 0


def cmd_prune(args) -> int:
    ens_dir = Path(args.ensemble)
    if not (ens_dir / "manifest.json").exists():
        raise UsageError(f"no ensemble manifest in {ens_dir}")
    e = Ensemble.load(ens_dir)
    meta_path = ens_dir / "data.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    src = data_from_args(args, meta.get("data"))
    seed = args.seed if args.seed is not None else meta.get("seed", 0)
    train, test = src.load(seed)
    if train.p != e.learners[0].n_features:
        raise UsageError(f"data has {train.p} features but the ensemble expects {e.learners[0].n_features}")

    H = prediction_matrix(e.learners, train.features)
    emargin = args.upsilon == "emargin"
    ladder = None
    if args.upsilon_ladder:
        ladder = parse_ladder(args.upsilon_ladder)
    elif args.upsilon and not emargin:
        ladder = parse_ladder(args.upsilon)
    res = run_method(args.method, e, train, H, ladder=ladder, emargin=emargin,
                     hyp_thresholds=args.hyp_thresholds, keep_fraction=args.keep_fraction, rho=args.rho)

    out = Path(args.out) if args.out else default_out_dir() / f"prune_{args.method}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(res.dumps())
    Ht = prediction_matrix(e.learners, test.features)
    keep = res.survivors
    lines = [
        f"method          {res.method}",
        f"status          {res.solver_status}",
        f"upsilon_used    {fmt(res.upsilon_used)}",
        f"survivors       {len(keep)} of {e.T}",
        f"pruning_rate    {res.pruning_rate:.4f}",
        f"train_error     {test_error(H, train, e.alpha):.4f} -> {test_error(H, train, res.weights):.4f}",
        f"test_error      {test_error(Ht, test, e.alpha):.4f} -> {test_error(Ht, test, res.weights):.4f}",
        f"diversity       {diversity(Ht):.5f} -> {diversity(Ht[:, keep]):.5f}",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if res.diagnostics.get("fallback"):
        log.warning("every upsilon on the ladder failed; kept the original weights")
    return 0


# ---------------------------------------------------------------- sweep

LIST_KEYS = {"checkpoints", "methods", "seeds", "kinds", "upsilon", "sweep_checkpoints", "drop"}


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, lists are comma separated."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file {path} not found")
    cfg = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        cfg[key] = [v.strip() for v in val.split(",") if v.strip()] if key in LIST_KEYS else val
    return cfg


@dataclass
class ExperimentConfig:
    data: DataSource
    kinds: list
    checkpoints: list
    depth: str = "1"
    ladder: list | None = None
    emargin: bool = False
    methods: list = field(default_factory=lambda: ["full", "qmm"])
    seeds: list = field(default_factory=lambda: [0])
    output: Path = field(default_factory=default_out_dir)
    workers: int = 1
    boosting: str = "auto"
    hyp_thresholds: int = 100
    keep_fraction: float = 0.2
    rho: float = 0.4
    cmd_curves: bool = True
    sweep_checkpoints: list = field(default_factory=list)

    def __post_init__(self):
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise UsageError(f"methods must be a nonempty subset of {METHODS}")
        if not self.checkpoints or any(a >= b for a, b in zip(self.checkpoints, self.checkpoints[1:])):
            raise UsageError("checkpoints must be ascending")
        if any(k not in ("adaboost", "rf") for k in self.kinds):
            raise UsageError("kinds must be adaboost and/or rf")

    @classmethod
    def from_dict(cls, c: dict) -> "ExperimentConfig":
        c = dict(c)
        try:
            data = DataSource(c.pop("data"), c.pop("label", None), c.pop("positive", None),
                              tuple(c.pop("drop", ())), float(c.pop("train_fraction", 0.7)))
            kinds = c.pop("kinds", None) or [c.pop("kind", "adaboost")]
            c.pop("kind", None)
            upsilon = c.pop("upsilon", None)
            out = cls(
                data=data, kinds=kinds,
                checkpoints=[int(v) for v in c.pop("checkpoints")],
                depth=c.pop("depth", "1"),
                ladder=None if not upsilon or upsilon == ["emargin"] else [float(v) for v in upsilon],
                emargin=upsilon == ["emargin"],
                methods=c.pop("methods", ["full", "qmm"]),
                seeds=[int(v) for v in c.pop("seeds", ["0"])],
                output=Path(c.pop("output", default_out_dir())),
                workers=int(c.pop("workers", 1)),
                boosting=c.pop("boosting", "auto"),
                hyp_thresholds=int(c.pop("hyp_thresholds", 100)),
                keep_fraction=float(c.pop("keep_fraction", 0.2)),
                rho=float(c.pop("rho", 0.4)),
                cmd_curves=c.pop("cmd_curves", "yes").lower() in ("yes", "true", "1"),
                sweep_checkpoints=[int(v) for v in c.pop("sweep_checkpoints", [])],
            )
        except KeyError as err:
            raise UsageError(f"config is missing {err.args[0]!r}") from None
        except ValueError as err:
            raise UsageError(f"bad config value: {err}") from None
        if c:
            raise UsageError(f"unknown config keys: {', '.join(sorted(c))}")
        return out


def run_cell(cfg: ExperimentConfig, kind: str, seed: int) -> dict:
    """Train one ensemble and evaluate every checkpoint and method on it."""
    rows, curves, sweeps, errors = [], {}, {}, []
    out = {"kind": kind, "seed": seed, "rows": rows, "curves": curves, "sweeps": sweeps, "errors": errors}
    try:
        train, test = cfg.data.load(seed)
        e_all = train_ensemble(train, kind, cfg.checkpoints[-1], cfg.depth, seed, cfg.boosting)
    except Exception as err:
        errors.append(f"{kind} seed {seed}: training failed: {type(err).__name__}: {err}")
        return out
    H_all = prediction_matrix(e_all.learners, train.features)
    Ht_all = prediction_matrix(e_all.learners, test.features)

    for T in cfg.checkpoints:
        if T > e_all.T:
            errors.append(f"{kind} seed {seed} T={T}: boosting stopped after {e_all.T} rounds")
            continue
        e = e_all.prefix(T)
        H, Ht = H_all[:, :T], Ht_all[:, :T]
        for method in cfg.methods:
            try:
                if method == "full":
                    w, surv, ups, status = e.alpha, np.arange(T), None, "Full"
                else:
                    res = run_method(method, e, train, H, ladder=cfg.ladder, emargin=cfg.emargin,
                                     hyp_thresholds=cfg.hyp_thresholds,
                                     keep_fraction=cfg.keep_fraction, rho=cfg.rho)
                    w, surv, ups, status = res.weights, res.survivors, res.upsilon_used, res.solver_status
                    if cfg.cmd_curves:
                        curves[(T, method)] = cmd(error_margins(H, train.labels, w))
                if method == "full" and cfg.cmd_curves:
                    curves[(T, method)] = cmd(error_margins(H, train.labels, w))
                rows.append([kind, seed, T, method, test_error(Ht, test, w), test_error(H, train, w),
                             len(surv), diversity(Ht[:, surv]), ups, 1.0 - len(surv) / T, status])
            except Exception as err:  # one failing cell must not sink the sweep
                errors.append(f"{kind} seed {seed} T={T} {method}: {type(err).__name__}: {err}")
        if T in cfg.sweep_checkpoints:
            sweeps[T] = upsilon_sweep(e, train, test, H, Ht)
    return out


def error_margins(H, y, w):
    return (H * y[:, None]) @ w


def upsilon_sweep(e: Ensemble, train: Dataset, test: Dataset, H, Ht) -> list:
    out = []
    for k in range(1, 101):
        u = k / 100
        res = qmm_weights(H, train.labels, e.alpha, [u])
        ok = res.solver_status == qpsolver.OPTIMAL
        surv = len(res.survivors) if ok else None
        out.append([u, res.solver_status, surv, None if surv is None else surv / e.T,
                    test_error(Ht, test, res.weights) if ok else None])
    return out


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def run_sweep(cfg: ExperimentConfig) -> int:
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    cells = [(k, s) for k in cfg.kinds for s in cfg.seeds]
    if cfg.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(cells))) as pool:
            results = list(pool.map(run_cell, [cfg] * len(cells), *zip(*cells)))
    else:
        results = [run_cell(cfg, k, s) for k, s in cells]

    rows, errors = [], []
    for r in results:
        rows.extend(r["rows"])
        errors.extend(r["errors"])
        tag = f"{r['kind']}_seed{r['seed']}"
        for (T, method), curve in r["curves"].items():
            write_csv(out / f"cmd_{tag}_T{T}_{method}.csv", ["theta", "fraction"], curve)
        for T, table in r["sweeps"].items():
            write_csv(out / f"upsilon_sweep_{tag}_T{T}.csv", SWEEP_HEADER, table)
    write_csv(out / "results.csv", RESULT_HEADER, rows)
    for msg in errors:
        log.error(msg)
    print(f"{len(rows)} result rows written to {out / 'results.csv'}")
    if errors:
        print(f"{len(errors)} cells failed; see log", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.from_dict(read_config(args.config))
    if args.out:
        cfg.output = Path(args.out)
    if args.workers:
        cfg.workers = args.workers
    return run_sweep(cfg)


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marginprune", description="Train and prune voting ensembles.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an ensemble and save it")
    add_data_args(t)
    t.add_argument("--kind", choices=("adaboost", "rf"), default="adaboost")
    t.add_argument("--trees", type=int, default=500)
    t.add_argument("--depth", default="1", help="1, 2 or full")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--boosting", choices=("auto", "reweight", "resample"), default="auto")
    t.add_argument("--out", help=f"ensemble directory (default ${OUT_ENV}/ensemble)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("prune", help="prune a saved ensemble")
    r.add_argument("--ensemble", required=True, help="directory written by train")
    add_data_args(r, required=False)
    r.add_argument("--seed", type=int, default=None, help="split seed (default: the one used to train)")
    r.add_argument("--method", choices=("qmm", "kappa", "drep"), default="qmm")
    r.add_argument("--upsilon-ladder", help="comma separated upsilon values tried in order")
    r.add_argument("--upsilon", help="a single upsilon value, or 'emargin'")
    r.add_argument("--hyp-thresholds", type=int, default=100)
    r.add_argument("--keep-fraction", type=float, default=0.2)
    r.add_argument("--rho", type=float, default=0.4)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV}/prune_METHOD)")
    r.set_defaults(func=cmd_prune)

    s = sub.add_parser("sweep", help="run an experiment grid from a config file")
    s.add_argument("config")
    s.add_argument("--out")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, DatasetError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
