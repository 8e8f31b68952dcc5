"""Counterfactual generators certified against the model-set ellipsoid.

Four families:
  * data-supported: filter training rows by the worst-case certificate, then
    nearest neighbor under l2 / mixed / sparsity-weighted distance,
  * continuous: gradient descent on a prediction + worst-case + proximity +
    sparsity objective, with constraint masking/projection, plus an optional
    exact-projection polish on linear models,
  * sparse continuous: greedy active-set growth over gradient-ranked features,
  * mixed-feature: categorical groups relaxed with Gumbel-Softmax logits and
    discretized by sampling,
plus a multi-class margin variant.

Every emitted, unflagged counterfactual satisfies the worst-case certificate
at its generation epsilon by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import Dataset
from .ellipsoid import (ModelSetEllipsoid, design_rows, robust_logits,
                        worst_case_logit)
from .metrics import l0 as _l0
from .metrics import l_mix as _l_mix
from .models import (LinearModel, MlpModel, augment, embedding_vjp, sigmoid)


class NoRobustCandidateError(RuntimeError):
    """No candidate reaches the threshold; carries the best robust logit seen
    so callers (and the UI) can suggest raising epsilon or relaxing constraints."""

    def __init__(self, message, max_robust_logit=None, detail=None):
        super().__init__(message)
        self.max_robust_logit = max_robust_logit
        self.detail = detail or {}


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ContinuousGenConfig:
    """Loss weights and loop controls for gradient-based generation."""

    alpha_pred: float = 1.0
    beta_rob: float = 1.0
    lambda_prox: float = 0.1
    gamma_sparse: float = 0.0
    learning_rate: float = 0.05
    max_steps: int = 2000
    direction: str = "up"          # "down" flips the target side of the threshold
    polish: bool = True            # exact-projection refinement, linear models only
    sample_every: int = 10         # mixed generation: cadence of discrete draws

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if min(self.alpha_pred, self.beta_rob, self.lambda_prox, self.gamma_sparse) < 0:
            raise ValueError("loss coefficients must be >= 0")
        if self.direction not in ("up", "down"):
            raise ValueError("direction must be 'up' or 'down'")


@dataclass
class RecourseConstraints:
    """Actionability restrictions bound to a query point at generation time.

    Direction constraints compile to one-sided ranges anchored at the query;
    immutable features compile to degenerate ranges [x0_j, x0_j].
    """

    immutable: Optional[np.ndarray] = None     # bool (d,)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    directions: Optional[np.ndarray] = None    # 0 free, +1 non-decreasing, -1 non-increasing
    sparsity_weight: float = 0.0
    groups: dict = field(default_factory=dict)

    @staticmethod
    def none(d):
        return RecourseConstraints(immutable=np.zeros(d, dtype=bool))

    @staticmethod
    def from_specs(specs):
        d = len(specs)
        lower = np.array([s.lower if s.lower is not None else -np.inf for s in specs])
        upper = np.array([s.upper if s.upper is not None else np.inf for s in specs])
        groups = {}
        for j, s in enumerate(specs):
            if s.group is not None:
                groups.setdefault(s.group, []).append(j)
        return RecourseConstraints(
            immutable=np.array([s.immutable for s in specs], dtype=bool),
            lower=lower, upper=upper, groups=groups)

    def bound(self, x0):
        """Resolved (lo, hi, immutable) arrays for a concrete query point."""
        d = len(x0)
        imm = self.immutable if self.immutable is not None else np.zeros(d, dtype=bool)
        lo = self.lower.copy() if self.lower is not None else np.full(d, -np.inf)
        hi = self.upper.copy() if self.upper is not None else np.full(d, np.inf)
        if self.directions is not None:
            up = self.directions > 0
            dn = self.directions < 0
            lo[up] = np.maximum(lo[up], x0[up])
            hi[dn] = np.minimum(hi[dn], x0[dn])
        lo[imm] = x0[imm]
        hi[imm] = x0[imm]
        return lo, hi, imm

    def binding(self, x0):
        lo, hi, imm = self.bound(x0)
        return bool(imm.any() or np.isfinite(lo).any() or np.isfinite(hi).any())


@dataclass
class Counterfactual:
    """A certified (or flagged best-effort) recourse point with diagnostics."""

    x_c: np.ndarray
    robust_logit: float
    baseline_logit: float
    worst_theta: np.ndarray
    l2: float
    l0: int
    l_mix: Optional[float]
    steps_used: int
    source: str
    robust: bool = True
    epsilon: Optional[float] = None
    threshold: float = 0.0


def lift(model, x):
    """The augmented vector the worst-case machinery consumes: [x; 1] for
    linear models (or raw vectors), [h(x); 1] for MLPs."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, MlpModel):
        return augment(model.embed(x))
    if isinstance(model, LinearModel) and x.shape[0] != model.p - 1:
        raise ValueError(f"expected {model.p - 1} features, got {x.shape[0]}")
    return augment(x)


def _directional(ell, t, direction):
    """'down' recourse is 'up' recourse for the negated center at threshold -t."""
    if direction == "up":
        return ell, t
    flipped = ModelSetEllipsoid(center=-ell.center, hessian=ell.hessian,
                                chol=ell.chol, epsilon=ell.epsilon, alpha=ell.alpha)
    return flipped, -t


def _score_grad(model, x, vec):
    """Gradient of vec . lift(x) with respect to x."""
    if isinstance(model, MlpModel):
        return embedding_vjp(model, x, vec[:model.embedding_dim])
    return vec[:-1]


def _build_cf(model, ell, x_c, x0, t, steps, source, robust, specs=None):
    xt = lift(model, x_c)
    wc = worst_case_logit(ell, xt)
    return Counterfactual(
        x_c=np.asarray(x_c, dtype=float).copy(),
        robust_logit=wc.robust_logit,
        baseline_logit=float(ell.center @ xt),
        worst_theta=wc.worst_theta,
        l2=float(np.linalg.norm(x_c - x0)),
        l0=_l0(x_c, x0),
        l_mix=(_l_mix(x_c, x0, specs) if specs is not None else None),
        steps_used=steps, source=source, robust=robust,
        epsilon=ell.epsilon, threshold=t)


# ---------------------------------------------------------------------------
# data-supported generation


def _candidate_distances(Xc, x0, distance, specs, sparsity_weight):
    diff = Xc - x0[None, :]
    if distance == "l2":
        return np.linalg.norm(diff, axis=1)
    if distance == "l_mix":
        if specs is None:
            raise ValueError("l_mix distance needs feature specs")
        return np.array([_l_mix(row, x0, specs) for row in Xc])
    if distance == "sparsity_search":
        # C * #changed + l1, the sparsity-aware search distance
        return (sparsity_weight * (np.abs(diff) > 1e-9).sum(axis=1)
                + np.abs(diff).sum(axis=1))
    raise ValueError(f"unknown distance {distance!r}")


def generate_data_supported(ell, model, ds, x0, t, cons=None, distance="l2"):
    """Nearest constraint-satisfying training row whose worst-case logit
    reaches the threshold. Ties break to the lowest row index.

    The candidate scan is an exhaustive vectorized filter + argmin, which is
    what makes the tie-break exact; the certificate filter costs one
    factorization reuse over all rows.
    """
    x0 = np.asarray(x0, dtype=float)
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    specs = ds.specs if isinstance(ds, Dataset) else None
    cons = cons if cons is not None else RecourseConstraints.none(X.shape[1])

    rows = design_rows(model, X)
    rlog = robust_logits(ell, rows)

    lo, hi, imm = cons.bound(x0)
    ok = np.ones(X.shape[0], dtype=bool)
    if imm.any():
        ok &= (X[:, imm] == x0[imm][None, :]).all(axis=1)
    ok &= ((X >= lo[None, :] - 0.0) & (X <= hi[None, :] + 0.0)).all(axis=1)

    stable = ok & (rlog >= t)
    if not stable.any():
        best = float(rlog[ok].max()) if ok.any() else None
        raise NoRobustCandidateError(
            "no training row satisfies the robustness certificate under the "
            "given constraints", max_robust_logit=best,
            detail={"constraint_satisfying_rows": int(ok.sum()), "threshold": t})

    idx = np.where(stable)[0]
    dists = _candidate_distances(X[idx], x0, distance, specs, cons.sparsity_weight)
    order = np.argsort(dists, kind="stable")    # first index wins on ties
    for k in order:
        pick = idx[int(k)]
        # replay the certificate through the scalar path before emitting, so a
        # last-bit disagreement with the vectorized filter cannot leak out
        if worst_case_logit(ell, lift(model, X[pick])).robust_logit >= t:
            return _build_cf(model, ell, X[pick], x0, t, steps=0,
                             source="data-supported", robust=True, specs=specs)
    raise NoRobustCandidateError(
        "no training row satisfies the robustness certificate under the "
        "given constraints", max_robust_logit=float(rlog[ok].max()),
        detail={"constraint_satisfying_rows": int(ok.sum()), "threshold": t})


def brute_force_data_supported(ell, model, ds, x0, t, cons=None, distance="l2"):
    """Per-definition scan oracle: same filter + argmin, one row at a time.

    Kept in the library (not only the tests) so external counterfactuals can be
    cross-checked; intentionally unvectorized.
    """
    x0 = np.asarray(x0, dtype=float)
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    specs = ds.specs if isinstance(ds, Dataset) else None
    cons = cons if cons is not None else RecourseConstraints.none(X.shape[1])
    lo, hi, imm = cons.bound(x0)
    best_i, best_d = None, np.inf
    for i in range(X.shape[0]):
        row = X[i]
        if imm.any() and not np.array_equal(row[imm], x0[imm]):
            continue
        if (row < lo).any() or (row > hi).any():
            continue
        if worst_case_logit(ell, lift(model, row)).robust_logit < t:
            continue
        d = float(_candidate_distances(row[None, :], x0, distance, specs,
                                       cons.sparsity_weight)[0])
        if d < best_d:
            best_i, best_d = i, d
    if best_i is None:
        raise NoRobustCandidateError("brute force found no candidate")
    return X[best_i]


# ---------------------------------------------------------------------------
# continuous generation


def continuous_loss_and_grad(ell, model, x, x0, t, cfg):
    """The generation objective and its exact input gradient at one iterate:

        alpha * bce(s_pred - t, 1) + beta * bce(s_rob - t, 1)
          + lambda_prox * ||x - x0||^2 + gamma * ||x - x0||_1

    The worst-case score s_rob is a minimum over the model set, so its
    gradient is the worst model itself (Danskin); shifting both score terms by
    the threshold keeps the pull alive until the stop rule can fire and is the
    identity at t = 0.
    """
    from .models import bce
    x = np.asarray(x, dtype=float)
    xt = lift(model, x)
    wc = worst_case_logit(ell, xt)
    s_pred = float(ell.center @ xt)
    s_rob = wc.robust_logit
    loss = (cfg.alpha_pred * float(bce(s_pred - t, 1.0))
            + cfg.beta_rob * float(bce(s_rob - t, 1.0))
            + cfg.lambda_prox * float(((x - x0) ** 2).sum())
            + cfg.gamma_sparse * float(np.abs(x - x0).sum()))
    grad = (cfg.alpha_pred * (sigmoid(s_pred - t) - 1.0)
            * _score_grad(model, x, ell.center)
            + cfg.beta_rob * (sigmoid(s_rob - t) - 1.0)
            * _score_grad(model, x, wc.worst_theta)
            + 2.0 * cfg.lambda_prox * (x - x0)
            + cfg.gamma_sparse * np.sign(x - x0))
    return loss, grad, wc


def _certificate_parts(ell, x):
    """Value, x-gradient, and x-Hessian of g(x) = center.[x;1] - sqrt(2 eps q)."""
    xt = augment(x)
    Hx = ell.inv_apply(xt)
    q = float(xt @ Hx)
    r = np.sqrt(q)
    root2e = np.sqrt(2.0 * ell.epsilon)
    value = float(ell.center @ xt) - root2e * r
    grad = ell.center[:-1] - root2e * Hx[:-1] / r
    Hinv = ell.inv_apply(np.eye(ell.p))
    hess = -root2e * (Hinv[:-1, :-1] / r - np.outer(Hx[:-1], Hx[:-1]) / r ** 3)
    return value, grad, hess


def _boundary_bisect(ell, x0, t, x_feasible):
    """Feasible point on the segment [x0, x_feasible] with g just above t."""
    lo_s, hi_s = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo_s + hi_s)
        if _certificate_parts(ell, x0 + mid * (x_feasible - x0))[0] >= t:
            hi_s = mid
        else:
            lo_s = mid
    return x0 + hi_s * (x_feasible - x0)


def _polish_projection(ell, x0, t, x_feasible, iters=100):
    """Refine a feasible iterate to the Euclidean projection of x0 onto the
    certificate set {x : g(x) >= t}, which is convex for linear models.

    Damped Newton on the KKT system  x - x0 = mu * grad g(x), g(x) = t,
    started from the boundary crossing of the segment [x0, feasible iterate].
    Falls back to the starting point on any numerical trouble; the returned
    point always satisfies the certificate.
    """
    d = x0.shape[0]
    start = _boundary_bisect(ell, x0, t, x_feasible)
    value, grad, _ = _certificate_parts(ell, start)
    gg = float(grad @ grad)
    if gg == 0.0:
        return start
    x, mu = start.copy(), max(float(grad @ (start - x0)) / gg, 0.0)

    def residual(xv, muv):
        val, gr, he = _certificate_parts(ell, xv)
        return np.concatenate([xv - x0 - muv * gr, [val - t]]), gr, he

    F, grad, hess = residual(x, mu)
    for _ in range(iters):
        norm_F = np.linalg.norm(F)
        if norm_F < 1e-13 * (1.0 + np.linalg.norm(x)):
            break
        J = np.zeros((d + 1, d + 1))
        J[:d, :d] = np.eye(d) - mu * hess
        J[:d, d] = -grad
        J[d, :d] = grad
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        step, improved = 1.0, False
        while step > 1e-12:
            xn, mun = x + step * delta[:d], mu + step * delta[d]
            Fn, gn, hn = residual(xn, mun)
            if np.linalg.norm(Fn) < (1.0 - 0.25 * step) * norm_F:
                x, mu, F, grad, hess = xn, mun, Fn, gn, hn
                improved = True
                break
            step *= 0.5
        if not improved:
            break

    # keep only an actual improvement, and guarantee the certificate holds
    # under the canonical worst-case evaluation (not just this arithmetic path)
    if np.linalg.norm(x - x0) > np.linalg.norm(start - x0) + 1e-12:
        x = start
    value = worst_case_logit(ell, augment(x)).robust_logit
    guard = 0
    while value < t and guard < 200:
        grad = _certificate_parts(ell, x)[1]
        gg = float(grad @ grad)
        if gg == 0.0:
            return start
        x = x + ((t - value) / gg + 1e-15 * (1.0 + abs(t))) * grad
        value = worst_case_logit(ell, augment(x)).robust_logit
        guard += 1
    return x if value >= t else start


def _bootstrap_feasible(ell, x0, t):
    """A certified point for linear models, found by doubling along the
    certificate gradient; None when the certified region looks empty."""
    x = x0.copy()
    scale = 1.0 + float(np.linalg.norm(x0))
    for _ in range(60):
        value, grad, _ = _certificate_parts(ell, x)
        if value >= t:
            return x
        gn = np.linalg.norm(grad)
        if gn == 0.0 or not np.isfinite(gn):
            return None
        step = max(scale, np.linalg.norm(x - x0) * 2.0)
        x = x + step * grad / gn
    value = _certificate_parts(ell, x)[0]
    return x if value >= t else None


def generate_continuous(ell, model, x0, t, cfg=None, cons=None, specs=None):
    """Gradient-based counterfactual search against the worst-case model.

    Each step recomputes the worst-case model for the current iterate, then
    descends the weighted sum of prediction loss, worst-case prediction loss,
    squared proximity, and l1 sparsity. Immutable coordinates are reset after
    every step (gradient masking) and ranges enforced by projection. The loop
    stops as soon as the post-step iterate is certified at the threshold; if
    the step budget runs out, the best iterate seen is returned flagged
    non-robust.

    On linear models with no binding constraints, a polish stage refines the
    first certified iterate to the exact projection of x0 onto the certified
    set, which is what the uniqueness/stability/trade-off guarantees describe.
    """
    cfg = cfg or ContinuousGenConfig()
    x0 = np.asarray(x0, dtype=float)
    ell_d, t_d = _directional(ell, t, cfg.direction)
    cons = cons if cons is not None else RecourseConstraints.none(x0.shape[0])
    lo, hi, imm = cons.bound(x0)
    linear = not isinstance(model, MlpModel)

    wc0 = worst_case_logit(ell_d, lift(model, x0))
    if wc0.robust_logit >= t_d:
        return _build_cf(model, ell_d, x0, x0, t_d, steps=0,
                         source="continuous", robust=True, specs=specs)

    x = x0.copy()
    best_x, best_gap = x0.copy(), wc0.robust_logit
    success = False
    steps = 0
    for step in range(cfg.max_steps):
        _, g, _ = continuous_loss_and_grad(ell_d, model, x, x0, t_d, cfg)
        if not np.isfinite(g).all():
            raise OptimizationError(f"non-finite loss gradient at step {step}")

        x = x - cfg.learning_rate * g
        x[imm] = x0[imm]
        x = np.clip(x, lo, hi)
        steps = step + 1

        gap = worst_case_logit(ell_d, lift(model, x)).robust_logit
        if gap > best_gap:
            best_gap, best_x = gap, x.copy()
        if gap >= t_d:
            success = True
            break

    polishable = cfg.polish and linear and not cons.binding(x0)
    if not success and polishable:
        seed_point = _bootstrap_feasible(ell_d, x0, t_d)
        if seed_point is not None and \
                worst_case_logit(ell_d, lift(model, seed_point)).robust_logit >= t_d:
            x, success = seed_point, True
    if not success:
        return _build_cf(model, ell_d, best_x, x0, t_d, steps=steps,
                         source="continuous", robust=False, specs=specs)

    if polishable:
        cand = _polish_projection(ell_d, x0, t_d, x)
        if worst_case_logit(ell_d, lift(model, cand)).robust_logit >= t_d:
            x = cand
    return _build_cf(model, ell_d, x, x0, t_d, steps=steps,
                     source="continuous", robust=True, specs=specs)


# ---------------------------------------------------------------------------
# sparsity-constrained generation


def generate_sparse_continuous(ell, model, x0, t, cfg=None, cons=None, specs=None):
    """Greedy active-set search: a probe run ranks features by accumulated
    gradient magnitude, then the active set grows in rank order, re-optimizing
    with all other coordinates masked, until the certificate holds.

    Changed coordinates are always a subset of the active set; immutable
    features never enter it.
    """
    cfg = cfg or ContinuousGenConfig()
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    cons = cons if cons is not None else RecourseConstraints.none(d)
    ell_d, t_d = _directional(ell, t, cfg.direction)
    imm = cons.immutable if cons.immutable is not None else np.zeros(d, dtype=bool)

    wc0 = worst_case_logit(ell_d, lift(model, x0))
    if wc0.robust_logit >= t_d:
        return _build_cf(model, ell_d, x0, x0, t_d, steps=0,
                         source="continuous-sparse", robust=True, specs=specs)

    # probe pass accumulates gradient mass per feature
    accum = np.zeros(d)
    lo, hi, _ = cons.bound(x0)
    x = x0.copy()
    for _ in range(cfg.max_steps):
        _, g, _ = continuous_loss_and_grad(ell_d, model, x, x0, t_d, cfg)
        accum += np.abs(g)
        x = x - cfg.learning_rate * g
        x[imm] = x0[imm]
        x = np.clip(x, lo, hi)
        if worst_case_logit(ell_d, lift(model, x)).robust_logit >= t_d:
            break

    mutable = np.where(~imm)[0]
    ranked = mutable[np.argsort(-accum[mutable], kind="stable")]

    active = np.zeros(d, dtype=bool)
    total_steps = 0
    best_seen = float(wc0.robust_logit)
    for j in ranked:
        active[j] = True
        masked = replace(cons, immutable=(imm | ~active))
        result = generate_continuous(ell, model, x0, t, cfg=cfg, cons=masked,
                                     specs=specs)
        total_steps += result.steps_used
        best_seen = max(best_seen, float(result.robust_logit))
        if result.robust:
            result.source = "continuous-sparse"
            result.steps_used = total_steps
            return result
    raise NoRobustCandidateError(
        "sparse search exhausted all features without reaching the threshold",
        max_robust_logit=best_seen)


# ---------------------------------------------------------------------------
# mixed discrete/continuous generation


def gumbel_softmax(z, tau, gumbel=None):
    """Temperature-relaxed categorical probabilities exp((z+g)/tau)/sum(...).

    With gumbel=None this is a plain tempered softmax; as tau -> 0 it
    approaches the one-hot vector of argmax(z + g).
    """
    z = np.asarray(z, dtype=float)
    u = z if gumbel is None else z + gumbel
    u = u / tau
    u = u - u.max()
    e = np.exp(u)
    return e / e.sum()


def generate_mixed(ell, model, x0, t, cfg=None, cons=None, specs=None,
                   temperature=0.5, samples=64, seed=0):
    """Counterfactual search over mixed continuous + one-hot features.

    Categorical groups are optimized as logits under the Gumbel-Softmax
    relaxation at a fixed temperature; every few steps a hard candidate is
    drawn (continuous part frozen, categories sampled by the Gumbel-max
    rule). Once a drawn candidate is certified, gradient optimization stops
    and a fixed extra budget of draws is spent to look for a better certified
    candidate under the mixed distance. Emitted categorical coordinates are
    exactly one-hot.
    """
    cfg = cfg or ContinuousGenConfig()
    if cons is None or not cons.groups:
        raise ValueError("generate_mixed needs categorical groups in the constraints")
    if specs is None:
        raise ValueError("generate_mixed needs feature specs for the mixed distance")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    ell_d, t_d = _directional(ell, t, cfg.direction)
    lo, hi, imm = cons.bound(x0)
    rng = np.random.default_rng(seed)

    group_cols = {g: np.array(cols) for g, cols in cons.groups.items()}
    locked = {g for g, cols in group_cols.items()
              if imm[cols].any() or len(cols) < 2}
    free_groups = [g for g in group_cols if g not in locked]
    grouped = np.zeros(d, dtype=bool)
    for cols in group_cols.values():
        grouped[cols] = True
    cont_idx = np.where(~grouped)[0]

    z = {g: x0[group_cols[g]].astype(float).copy() for g in free_groups}
    x_cont = x0.copy()

    def compose(hard_choices=None, relaxed=None):
        out = x_cont.copy()
        for g, cols in group_cols.items():
            if g in locked:
                out[cols] = x0[cols]
            elif hard_choices is not None:
                out[cols] = 0.0
                out[cols[hard_choices[g]]] = 1.0
            else:
                out[cols] = relaxed[g]
        return out

    def draw_hard():
        return {g: int(np.argmax(z[g] + rng.gumbel(size=z[g].shape))) for g in free_groups}

    found = None
    best_logit = -np.inf
    for step in range(cfg.max_steps):
        relaxed = {g: gumbel_softmax(z[g], temperature,
                                     gumbel=rng.gumbel(size=z[g].shape))
                   for g in free_groups}
        xr = compose(relaxed=relaxed)
        xt = lift(model, xr)
        wc = worst_case_logit(ell_d, xt)
        g_full = (cfg.alpha_pred * (sigmoid(float(ell_d.center @ xt) - t_d) - 1.0)
                  * _score_grad(model, xr, ell_d.center)
                  + cfg.beta_rob * (sigmoid(wc.robust_logit - t_d) - 1.0)
                  * _score_grad(model, xr, wc.worst_theta)
                  + 2.0 * cfg.lambda_prox * (xr - x0)
                  + cfg.gamma_sparse * np.sign(xr - x0))
        if not np.isfinite(g_full).all():
            raise OptimizationError(f"non-finite loss gradient at step {step}")

        x_cont[cont_idx] -= cfg.learning_rate * g_full[cont_idx]
        x_cont[imm] = x0[imm]
        x_cont = np.clip(x_cont, lo, hi)
        for g in free_groups:
            y = relaxed[g]
            dy = g_full[group_cols[g]]
            dz = (y * dy - y * float(y @ dy)) / temperature
            z[g] -= cfg.learning_rate * dz

        if (step + 1) % cfg.sample_every == 0:
            cand = compose(hard_choices=draw_hard())
            logit_c = worst_case_logit(ell_d, lift(model, cand)).robust_logit
            best_logit = max(best_logit, float(logit_c))
            if logit_c >= t_d:
                found = cand
                break

    candidates = [found] if found is not None else []
    for _ in range(samples):
        cand = compose(hard_choices=draw_hard())
        logit_c = worst_case_logit(ell_d, lift(model, cand)).robust_logit
        best_logit = max(best_logit, float(logit_c))
        if logit_c >= t_d:
            candidates.append(cand)
    if not candidates:
        raise NoRobustCandidateError(
            "no certified mixed-feature candidate within the sampling budget",
            max_robust_logit=(best_logit if np.isfinite(best_logit) else None))

    scores = [_l_mix(c, x0, specs) for c in candidates]
    winner = candidates[int(np.argmin(scores))]
    return _build_cf(model, ell_d, winner, x0, t_d, steps=cfg.max_steps,
                     source="mixed", robust=True, specs=specs)


# ---------------------------------------------------------------------------
# multi-class margins


@dataclass
class MulticlassLinearModel:
    """K linear score heads over augmented inputs; prediction is argmax."""

    W: np.ndarray                      # (K, d+1)

    @property
    def n_classes(self):
        return self.W.shape[0]

    def scores(self, x):
        return augment(np.asarray(x, dtype=float)) @ self.W.T

    def predict(self, x):
        return int(np.argmax(self.scores(x)))


def margin_ellipsoids(model, H, epsilon, target):
    """Per-competitor ellipsoids on the score differences theta_target - theta_c,
    sharing one curvature matrix."""
    from .ellipsoid import from_parts
    out = {}
    for c in range(model.n_classes):
        if c == target:
            continue
        out[c] = from_parts(model.W[target] - model.W[c], H, epsilon)
    return out


def generate_multiclass(margin_ells, x0, target_margin=0.0, cfg=None, cons=None,
                        model=None, specs=None):
    """Counterfactual that clears the worst-case score margin against every
    competitor class.

    With a single competitor this is exactly the binary generator run on the
    margin ellipsoid; with several, each step targets the currently smallest
    robust margin and the loop stops only when all margins are certified.
    """
    cfg = cfg or ContinuousGenConfig()
    x0 = np.asarray(x0, dtype=float)
    comps = sorted(margin_ells)
    if len(comps) == 1:
        result = generate_continuous(margin_ells[comps[0]], model, x0,
                                     target_margin, cfg=cfg, cons=cons, specs=specs)
        result.source = "multiclass"
        return result

    cons = cons if cons is not None else RecourseConstraints.none(x0.shape[0])
    lo, hi, imm = cons.bound(x0)

    def margins(x):
        xt = lift(model, x)
        return {c: worst_case_logit(margin_ells[c], xt) for c in comps}

    wcs = margins(x0)
    if min(wc.robust_logit for wc in wcs.values()) >= target_margin:
        worst_c = min(comps, key=lambda c: wcs[c].robust_logit)
        return _build_cf(model, margin_ells[worst_c], x0, x0, target_margin,
                         steps=0, source="multiclass", robust=True, specs=specs)

    x = x0.copy()
    best_x, best_gap = x0.copy(), min(wc.robust_logit for wc in wcs.values())
    success = False
    steps = 0
    for step in range(cfg.max_steps):
        xt = lift(model, x)
        wcs = {c: worst_case_logit(margin_ells[c], xt) for c in comps}
        cmin = min(comps, key=lambda c: wcs[c].robust_logit)
        ell_c = margin_ells[cmin]
        wc = wcs[cmin]
        g = (cfg.alpha_pred * (sigmoid(float(ell_c.center @ xt) - target_margin) - 1.0)
             * _score_grad(model, x, ell_c.center)
             + cfg.beta_rob * (sigmoid(wc.robust_logit - target_margin) - 1.0)
             * _score_grad(model, x, wc.worst_theta)
             + 2.0 * cfg.lambda_prox * (x - x0)
             + cfg.gamma_sparse * np.sign(x - x0))
        x = x - cfg.learning_rate * g
        x[imm] = x0[imm]
        x = np.clip(x, lo, hi)
        steps = step + 1

        xt = lift(model, x)
        gap = min(worst_case_logit(margin_ells[c], xt).robust_logit for c in comps)
        if gap > best_gap:
            best_gap, best_x = gap, x.copy()
        if gap >= target_margin:
            success = True
            break

    final = x if success else best_x
    xt = lift(model, final)
    wcs = {c: worst_case_logit(margin_ells[c], xt) for c in comps}
    worst_c = min(comps, key=lambda c: wcs[c].robust_logit)
    cf = _build_cf(model, margin_ells[worst_c], final, x0, target_margin,
                   steps=steps, source="multiclass", robust=success, specs=specs)
    return cf
