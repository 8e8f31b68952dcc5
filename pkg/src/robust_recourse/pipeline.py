"""Desk-scale experiment runner: train a base model per fold, build the
certificate ellipsoid, tune epsilon on the validation split, generate
counterfactuals per method, and score them against evaluator ensembles.

Results are written incrementally as JSONL keyed by a config hash (rerunning
with ``resume`` skips finished cells), then flattened to JSON + CSV.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from threading import Lock
from typing import Optional

import numpy as np

from .data import (Dataset, SplitPlan, balance_classes, load_csv,
                   schema_from_json, stratified_folds, preprocess)
from .ellipsoid import build_ellipsoid, epsilon_from_relative, robust_logits
from .evaluators import EnsembleSpec, build_ensemble
from .metrics import report as metric_report
from .models import TrainConfig, regularized_objective, train
from .recourse import (ContinuousGenConfig, NoRobustCandidateError,
                       RecourseConstraints, generate_continuous,
                       generate_data_supported, generate_sparse_continuous)

CONFIG_FORMAT_VERSION = 1


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    dataset: dict                       # {"csv": path, "schema": path|list} or {"synthetic": {...}}
    version: int = CONFIG_FORMAT_VERSION
    label: str = "label"
    model: dict = field(default_factory=dict)           # TrainConfig overrides
    epsilon_grid: Optional[list] = None                 # absolute values
    epsilon_grid_relative: Optional[list] = None        # fractions of L(base)
    epsilon_targets: Optional[list] = None
    epsilon_targets_relative: Optional[list] = None
    methods: list = field(default_factory=lambda: ["data-supported"])
    evaluators: list = field(default_factory=lambda: [{"kind": "retrain", "size": 5}])
    folds: dict = field(default_factory=dict)           # SplitPlan overrides
    seed: int = 0
    time_budget: float = 120.0                          # seconds per method per fold
    max_test_instances: Optional[int] = None
    gen: dict = field(default_factory=dict)             # ContinuousGenConfig overrides
    workers: int = 1

    def __post_init__(self):
        if self.version != CONFIG_FORMAT_VERSION:
            raise ValueError(f"unsupported config version {self.version!r}")
        if not (self.epsilon_grid or self.epsilon_grid_relative):
            raise ValueError("an epsilon grid is required")
        if not (self.epsilon_targets or self.epsilon_targets_relative):
            raise ValueError("epsilon targets are required")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        if self.time_budget <= 0:
            raise ValueError("time_budget must be > 0")

    @staticmethod
    def from_json(text):
        return ExperimentConfig(**json.loads(text))

    def content_hash(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _load_dataset(cfg):
    spec = cfg.dataset
    if "synthetic" in spec:
        from .datasets import synthetic_credit_dataset
        return synthetic_credit_dataset(**spec["synthetic"])
    schema = spec["schema"]
    if isinstance(schema, str):
        schema = schema_from_json(Path(schema).read_text())
    else:
        schema = schema_from_json(json.dumps(schema))
    return load_csv(spec["csv"], schema, label=cfg.label)


def tune_epsilon(grid, score_fn):
    """Smallest epsilon achieving the lexicographically maximal
    (validity, robustness, -mean_l2) on the validation split; exits early on a
    perfect (1, 1) score. Falls back to the grid maximum when scoring fails
    everywhere."""
    grid = sorted(grid)
    best_eps, best_score = None, None
    trace = []
    for eps in grid:
        v, r, mean_l2 = score_fn(eps)
        trace.append({"epsilon": eps, "validity": v, "robustness": r,
                      "mean_l2": mean_l2})
        score = (v, r, -mean_l2)
        if best_score is None or score > best_score:
            best_eps, best_score = eps, score
        if v >= 1.0 and r >= 1.0:
            return eps, trace
    return (best_eps if best_eps is not None else grid[-1]), trace


def _gen_config(cfg):
    return ContinuousGenConfig(**cfg.gen) if cfg.gen else ContinuousGenConfig()


def _generate_for(method, ell, model, train_ds, x0, t, cons, gen_cfg, specs):
    if method == "data-supported":
        return generate_data_supported(ell, model, train_ds, x0, t, cons=cons)
    if method == "continuous":
        return generate_continuous(ell, model, x0, t, cfg=gen_cfg, cons=cons,
                                   specs=specs)
    if method == "sparse":
        return generate_sparse_continuous(ell, model, x0, t, cfg=gen_cfg,
                                          cons=cons, specs=specs)
    raise ValueError(f"unknown method {method!r}")


def _batch(method, model, train_ds, X0, t, epsilon, gen_cfg, deadline):
    """Generate one counterfactual per query row; flagged failures become
    None entries (scored as invalid/non-robust)."""
    ell = build_ellipsoid(model, train_ds, epsilon=epsilon)
    specs = train_ds.specs
    out = []
    for x0 in X0:
        if deadline is not None and time.perf_counter() > deadline:
            raise BudgetExceeded()
        try:
            cf = _generate_for(method, ell, model, train_ds, x0, t, None,
                               gen_cfg, specs)
        except NoRobustCandidateError:
            cf = None
        out.append(cf)
    return ell, out


class _FailedCf:
    """Placeholder scored as invalid and non-robust."""

    def __init__(self, x0):
        self.x_c = np.asarray(x0, dtype=float)
        self.robust = False


def _score(model, ensemble, ces, x0s, specs):
    ces = [c if c is not None else _FailedCf(x) for c, x in zip(ces, x0s)]
    rep = metric_report(model, ces, x0s, specs, ensemble=ensemble)
    return rep


def run(cfg, out_dir, resume=False):
    """Execute the experiment grid; returns (results, partial_flag).

    Cells are (fold x method x evaluator x epsilon_target). Results are
    appended to ``cells_<hash>.jsonl`` as they finish; a resumed run skips
    cell keys already present. Budget overruns mark the cell partial and the
    run continues.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.content_hash()
    cells_path = out / f"cells_{chash}.jsonl"

    done_keys = set()
    if resume and cells_path.exists():
        with cells_path.open() as fh:
            for line in fh:
                done_keys.add(json.loads(line)["key"])
    elif cells_path.exists() and not resume:
        cells_path.unlink()

    raw = _load_dataset(cfg)
    balanced = balance_classes(raw, seed=cfg.seed)
    plan = SplitPlan(**{"seed": cfg.seed, **cfg.folds})
    folds = stratified_folds(balanced, plan)
    tcfg = TrainConfig(**{"seed": cfg.seed, **cfg.model})
    gen_cfg = _gen_config(cfg)

    write_lock = Lock()
    results = []
    partial = False

    def write_cell(record):
        with write_lock:
            with cells_path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")
            results.append(record)

    def run_cell(fold_i, train_idx, val_idx, test_idx):
        nonlocal partial
        t_pre0 = time.perf_counter()
        ds = preprocess(balanced, fit_rows=train_idx, balance=False)
        train_ds = ds.subset(train_idx)
        val_ds = ds.subset(val_idx)
        test_ds = ds.subset(test_idx)
        base = train(train_ds, tcfg,
                     val=(val_ds.X, val_ds.y) if tcfg.hidden_sizes else None)
        base_obj = regularized_objective(base, train_ds)
        preprocess_seconds = time.perf_counter() - t_pre0

        grid = cfg.epsilon_grid or [
            epsilon_from_relative(base_obj, r) for r in cfg.epsilon_grid_relative]
        targets = cfg.epsilon_targets or [
            epsilon_from_relative(base_obj, r) for r in cfg.epsilon_targets_relative]

        denied_val = val_ds.X[base.predict(val_ds.X) == 0]
        denied_test = test_ds.X[base.predict(test_ds.X) == 0]
        if cfg.max_test_instances:
            denied_test = denied_test[:cfg.max_test_instances]

        for ev in cfg.evaluators:
            for eps_t in targets:
                spec = EnsembleSpec(**{**ev, "epsilon_target": eps_t,
                                       "seed": cfg.seed + fold_i})
                ell_t = build_ellipsoid(base, train_ds, epsilon=eps_t) \
                    if spec.kind == "ellipsoid-boundary" else None
                ensemble = build_ensemble(spec.kind, base, train_ds, spec,
                                          cfg=tcfg, ell=ell_t)
                for method in cfg.methods:
                    key = f"fold{fold_i}|{method}|{spec.kind}|{eps_t:.6g}"
                    if key in done_keys:
                        continue
                    deadline = time.perf_counter() + cfg.time_budget
                    record = {"key": key, "fold": fold_i, "method": method,
                              "evaluator": spec.kind, "epsilon_target": eps_t,
                              "base_objective": base_obj, "seed": cfg.seed,
                              "config_hash": chash,
                              "preprocess_seconds": preprocess_seconds}
                    try:
                        def score_fn(eps, _m=method):
                            _, ces = _batch(_m, base, train_ds, denied_val,
                                            base.threshold, eps, gen_cfg, deadline)
                            rep = _score(base, ensemble, ces, denied_val,
                                         train_ds.specs)
                            return rep.validity, rep.robustness, rep.mean_l2

                        eps_star, trace = tune_epsilon(grid, score_fn)
                        t_gen0 = time.perf_counter()
                        _, ces = _batch(method, base, train_ds, denied_test,
                                        base.threshold, eps_star, gen_cfg,
                                        deadline)
                        gen_seconds = time.perf_counter() - t_gen0
                        rep = _score(base, ensemble, ces, denied_test,
                                     train_ds.specs)
                        record.update({
                            "epsilon": eps_star, "tuning": trace,
                            "validity": rep.validity,
                            "robustness": rep.robustness,
                            "mean_l2": rep.mean_l2,
                            "mean_l_mix": rep.mean_l_mix,
                            "n": rep.n,
                            "generation_seconds": gen_seconds,
                            "per_instance_seconds": (gen_seconds / max(rep.n, 1)),
                            "status": "ok",
                        })
                    except BudgetExceeded:
                        record["status"] = "budget_exceeded"
                        partial = True
                    write_cell(record)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(run_cell, i, *fold)
                       for i, fold in enumerate(folds)]
            for f in futures:
                f.result()
    else:
        for i, fold in enumerate(folds):
            run_cell(i, *fold)

    summary = {"config_hash": chash, "config": asdict(cfg), "cells": results,
               "partial": partial}
    (out / f"results_{chash}.json").write_text(json.dumps(summary, indent=2))
    _write_csv(out / f"results_{chash}.csv", results)
    return summary, partial


def _write_csv(path, cells):
    fields = ["key", "fold", "method", "evaluator", "epsilon_target", "epsilon",
              "validity", "robustness", "mean_l2", "mean_l_mix", "n",
              "preprocess_seconds", "generation_seconds",
              "per_instance_seconds", "status"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for cell in cells:
            writer.writerow(cell)
