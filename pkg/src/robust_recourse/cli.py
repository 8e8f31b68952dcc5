"""Command-line front end: experiment runs, certificate checks of external
counterfactuals, and ensemble construction.

Exit codes: 0 full success, 2 partial completion (some cells hit the time
budget), 1 usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_run(args):
    from .pipeline import ExperimentConfig, run
    cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    if args.folds is not None:
        cfg.folds["fold_count"] = args.folds
    if args.seed is not None:
        cfg.seed = args.seed
    summary, partial = run(cfg, args.out, resume=args.resume)
    ok = sum(1 for c in summary["cells"] if c.get("status") == "ok")
    print(f"cells: {len(summary['cells'])} ok: {ok} hash: {summary['config_hash']}")
    return 2 if partial else 0


def _cmd_certify(args):
    from .ellipsoid import ellipsoid_from_json, worst_case_logit
    ell = ellipsoid_from_json(Path(args.ellipsoid).read_text())
    point = json.loads(Path(args.point).read_text()
                       if Path(args.point).exists() else args.point)
    if isinstance(point, dict):
        point = point["x"]
    x = np.asarray(point, dtype=float)
    if x.shape[0] == ell.p - 1:     # raw feature vector: append the bias slot
        x = np.append(x, 1.0)
    wc = worst_case_logit(ell, x)
    out = {"robust": bool(wc.robust_logit >= args.t),
           "robust_logit": wc.robust_logit, "threshold": args.t}
    print(json.dumps(out))
    return 0


def _cmd_ensemble(args):
    from .evaluators import EnsembleSpec, build_ensemble, verify_ensemble
    from .ellipsoid import build_ellipsoid, epsilon_from_relative
    from .models import TrainConfig, regularized_objective, train
    from .pipeline import ExperimentConfig, _load_dataset
    from .data import balance_classes, preprocess

    spec_doc = json.loads(Path(args.spec).read_text())
    cfg = ExperimentConfig(
        dataset=spec_doc["dataset"], model=spec_doc.get("model", {}),
        epsilon_grid=[1.0], epsilon_targets=[1.0],
        label=spec_doc.get("label", "label"), seed=spec_doc.get("seed", 0))
    balanced = balance_classes(_load_dataset(cfg), seed=cfg.seed)
    ds = preprocess(balanced, fit_rows=np.arange(balanced.n), balance=False)
    tcfg = TrainConfig(**{"seed": cfg.seed, **cfg.model})
    base = train(ds, tcfg)
    eps_t = spec_doc.get("epsilon_target")
    if eps_t is None:
        eps_t = epsilon_from_relative(regularized_objective(base, ds),
                                      spec_doc["epsilon_target_relative"])
    spec = EnsembleSpec(kind=spec_doc["kind"], size=spec_doc.get("size", 10),
                        epsilon_target=eps_t, seed=cfg.seed)
    ell = build_ellipsoid(base, ds, epsilon=eps_t) \
        if spec.kind == "ellipsoid-boundary" else None
    ens = build_ensemble(spec.kind, base, ds, spec, cfg=tcfg, ell=ell)
    check = verify_ensemble(ens, ds, ell=ell)
    manifest = ens.manifest()
    manifest["verification"] = check
    text = json.dumps(manifest, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out} ({len(ens.members)} members)")
    else:
        print(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="robust-recourse",
        description="certified counterfactual recourse over a set of near-optimal models")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--folds", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--resume", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_cert = sub.add_parser("certify",
                            help="worst-case certificate for an external point")
    p_cert.add_argument("--ellipsoid", required=True)
    p_cert.add_argument("--point", required=True,
                        help="JSON file or literal: [..] or {\"x\": [..]}")
    p_cert.add_argument("--t", type=float, required=True)
    p_cert.set_defaults(func=_cmd_certify)

    p_ens = sub.add_parser("ensemble", help="build an evaluator ensemble")
    p_ens.add_argument("--spec", required=True)
    p_ens.add_argument("--out", default=None)
    p_ens.set_defaults(func=_cmd_ensemble)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
