"""Proxy ensembles of near-optimal models used to score counterfactual
robustness empirically: independent retrains, multiplicative weight noise,
adversarial weight ascent, and boundary samples of the certificate ellipsoid.

Every emitted member satisfies the objective bound
L(member) <= L(base) + epsilon_target; ``verify_ensemble`` re-checks that
independently after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import Dataset
from .ellipsoid import alignment_spectrum, membership
from .models import (LinearModel, MlpModel, TrainConfig, flatten_params,
                     linear_objective_grad, mlp_objective_grad,
                     regularized_objective, set_params, train)


class EmptyEnsembleError(RuntimeError):
    pass


class TuningFailureError(RuntimeError):
    """No dropout variance on the grid admitted enough samples; carries the grid."""

    def __init__(self, message, grid_report=None):
        super().__init__(message)
        self.grid_report = grid_report or {}


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str                          # retrain | dropout | awp | ellipsoid-boundary
    size: int = 10
    epsilon_target: float = 0.0
    seed: int = 0
    dropout_grid: tuple = tuple(1e-4 * 2 ** i for i in range(15))   # geometric up to ~1.6
    dropout_probes: int = 40
    dropout_min_admit: float = 0.05
    dropout_additive: bool = False
    awp_step: Optional[float] = None   # default 0.01 * ||theta|| / sqrt(p)
    awp_max_iters: int = 500

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("ensemble size must be >= 1")
        if self.epsilon_target < 0:
            raise ValueError("epsilon_target must be >= 0")


@dataclass
class ModelEnsemble:
    members: list
    base: object
    admitted_objective: list
    spec: EnsembleSpec
    info: dict = field(default_factory=dict)

    def manifest(self):
        from .models import to_json
        return {
            "kind": self.spec.kind,
            "requested": self.spec.size,
            "admitted": len(self.members),
            "epsilon_target": self.spec.epsilon_target,
            "seed": self.spec.seed,
            "per_member_objective": self.admitted_objective,
            "members": [to_json(m) for m in self.members],
            "info": self.info,
        }


def _bound(base, ds, spec):
    return regularized_objective(base, ds) + spec.epsilon_target


def _perturb(model, flat_noise_fn):
    flat = flatten_params(model)
    return set_params(model, flat_noise_fn(flat))


def build_retrain(ds, cfg, spec, base=None):
    """Independent retrains from seeds seed+1..seed+m; members over the
    objective bound are discarded and the shortfall recorded."""
    if spec.kind != "retrain":
        raise ValueError("spec.kind must be 'retrain'")
    if base is None:
        base = train(ds, cfg)
    bound = _bound(base, ds, spec)
    members, objs = [], []
    for i in range(spec.size):
        member = train(ds, replace(cfg, seed=spec.seed + 1 + i))
        obj = regularized_objective(member, ds)
        if obj <= bound:
            members.append(member)
            objs.append(obj)
    if not members:
        raise EmptyEnsembleError("no retrained member satisfied the objective bound")
    return ModelEnsemble(members=members, base=base, admitted_objective=objs,
                         spec=spec, info={"discarded": spec.size - len(members)})


def _dropout_draw(base, rng, var, additive):
    if var == 0.0:
        return set_params(base, flatten_params(base))
    def noise(flat):
        eps = rng.normal(0.0, np.sqrt(var), size=flat.shape)
        return flat + eps if additive else flat * (1.0 + eps)
    return _perturb(base, noise)


def build_dropout(base, ds, spec):
    """Multiplicative Gaussian weight noise, variance tuned on a grid.

    The selected variance is the largest grid value whose admitted fraction is
    at least ``dropout_min_admit`` (measured on probe draws). When sampling
    members, a rejected draw retries once with the variance halved.
    """
    if spec.kind != "dropout":
        raise ValueError("spec.kind must be 'dropout'")
    bound = _bound(base, ds, spec)
    rng = np.random.default_rng(spec.seed)

    grid_report = {}
    chosen = None
    for var in sorted(spec.dropout_grid):
        admitted = 0
        for _ in range(spec.dropout_probes):
            cand = _dropout_draw(base, rng, var, spec.dropout_additive)
            admitted += int(regularized_objective(cand, ds) <= bound)
        frac = admitted / spec.dropout_probes
        grid_report[float(var)] = frac
        if frac >= spec.dropout_min_admit:
            chosen = var
    if chosen is None:
        raise TuningFailureError(
            "no dropout variance on the grid admitted enough samples",
            grid_report=grid_report)

    members, objs = [], []
    for _ in range(spec.size):
        cand = _dropout_draw(base, rng, chosen, spec.dropout_additive)
        obj = regularized_objective(cand, ds)
        if obj > bound:                     # one retry with halved variance
            cand = _dropout_draw(base, rng, chosen / 2.0, spec.dropout_additive)
            obj = regularized_objective(cand, ds)
        if obj <= bound:
            members.append(cand)
            objs.append(obj)
    if not members:
        raise EmptyEnsembleError("no dropout member satisfied the objective bound")
    return ModelEnsemble(members=members, base=base, admitted_objective=objs,
                         spec=spec,
                         info={"variance": float(chosen), "grid": grid_report})


def _objective_grad(model, ds):
    X, y = (ds.X, ds.y) if isinstance(ds, Dataset) else ds
    if isinstance(model, LinearModel):
        return linear_objective_grad(model.theta, X, y, model.lam)
    return mlp_objective_grad(model, X, y)


def build_awp(base, ds, spec):
    """Adversarial weight ascent: walk up the training objective from the base
    until the next step would leave the bound, keeping the last compliant
    iterate. Each member starts with its own random first step."""
    if spec.kind != "awp":
        raise ValueError("spec.kind must be 'awp'")
    bound = _bound(base, ds, spec)
    flat0 = flatten_params(base)
    p = flat0.shape[0]
    step = spec.awp_step if spec.awp_step is not None \
        else 0.01 * float(np.linalg.norm(flat0)) / np.sqrt(p)

    members, objs = [], []
    for i in range(spec.size):
        rng = np.random.default_rng((spec.seed, i))
        direction = rng.normal(size=p)
        direction /= np.linalg.norm(direction)
        flat = flat0.copy()
        current = set_params(base, flat)
        for it in range(spec.awp_max_iters):
            cand_flat = flat + step * direction
            cand = set_params(base, cand_flat)
            if regularized_objective(cand, ds) > bound:
                break
            flat, current = cand_flat, cand
            grad = _objective_grad(current, ds)
            gn = np.linalg.norm(grad)
            if gn == 0.0:
                break
            direction = grad / gn           # steepest ascent after the random kick
        members.append(current)
        objs.append(regularized_objective(current, ds))
    return ModelEnsemble(members=members, base=base, admitted_objective=objs,
                         spec=spec, info={"step": step})


def _with_theta(base, theta):
    if isinstance(base, MlpModel):
        last = LinearModel(theta=theta, lam=base.lam, threshold=base.threshold)
        return MlpModel(weights=[W.copy() for W in base.weights],
                        biases=[b.copy() for b in base.biases], last=last,
                        activation=base.activation, lam=base.lam,
                        threshold=base.threshold)
    return LinearModel(theta=theta, lam=getattr(base, "lam", 0.0),
                       threshold=getattr(base, "threshold", 0.0))


def build_ellipsoid_sampler(ell, spec, base=None, ds=None):
    """Boundary samples of the certificate set: center + sqrt(2 eps) H^(-1/2) u
    for uniform unit u. Every member sits on the boundary (quadratic form equal
    to epsilon within 1e-8 relative) and passes the exact membership test; the
    radius is pulled in by 1e-12 so float rounding cannot push a sample out.

    ``base`` supplies the architecture the sampled last-layer parameters plug
    into; without it, members are plain linear models over the augmented space.
    """
    if spec.kind != "ellipsoid-boundary":
        raise ValueError("spec.kind must be 'ellipsoid-boundary'")
    rng = np.random.default_rng(spec.seed)
    vals, vecs = alignment_spectrum(ell)
    inv_sqrt = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
    radius = np.sqrt(2.0 * ell.epsilon) * (1.0 - 1e-12)

    members, objs = [], []
    for _ in range(spec.size):
        u = rng.normal(size=ell.p)
        u /= np.linalg.norm(u)
        theta = ell.center + radius * (inv_sqrt @ u)
        member = _with_theta(base, theta) if base is not None \
            else LinearModel(theta=theta)
        if not membership(ell, theta):
            raise EmptyEnsembleError("sampled member left the ellipsoid")
        members.append(member)
        objs.append(regularized_objective(member, ds) if ds is not None else None)
    return ModelEnsemble(members=members, base=base, admitted_objective=objs,
                         spec=spec, info={"epsilon": ell.epsilon})


def verify_ensemble(ensemble, ds, ell=None):
    """Independent re-check of member admission.

    Objective-bound evaluators (retrain/dropout/awp) are checked against
    L(base) + epsilon_target; the ellipsoid-boundary evaluator is checked for
    set membership with the quadratic form at epsilon (its admission rule).
    """
    failures = []
    if ensemble.spec.kind == "ellipsoid-boundary":
        if ell is None:
            raise ValueError("pass the ellipsoid to verify a boundary ensemble")
        for i, m in enumerate(ensemble.members):
            theta = m.last.theta if isinstance(m, MlpModel) else m.theta
            v = theta - ell.center
            q = 0.5 * float(v @ ell.hessian @ v)
            if abs(q - ell.epsilon) > 1e-8 * max(ell.epsilon, 1e-30):
                failures.append((i, q))
        return {"epsilon": ell.epsilon, "failures": failures, "sound": not failures}
    base_obj = regularized_objective(ensemble.base, ds)
    bound = base_obj + ensemble.spec.epsilon_target
    for i, m in enumerate(ensemble.members):
        obj = regularized_objective(m, ds)
        if obj > bound + 1e-12:
            failures.append((i, obj))
    return {"bound": bound, "base_objective": base_obj, "failures": failures,
            "sound": not failures}


def build_ensemble(kind, base, ds, spec, cfg=None, ell=None):
    if kind == "retrain":
        return build_retrain(ds, cfg, spec, base=base)
    if kind == "dropout":
        return build_dropout(base, ds, spec)
    if kind == "awp":
        return build_awp(base, ds, spec)
    if kind == "ellipsoid-boundary":
        return build_ellipsoid_sampler(ell, spec, base=base, ds=ds)
    raise ValueError(f"unknown ensemble kind {kind!r}")
