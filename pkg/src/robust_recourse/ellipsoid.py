"""Ellipsoidal approximation of the set of near-optimal models, built from the
loss curvature at the trained parameters, plus the closed-form worst-case logit
it admits.

The set is {theta : (theta - center)^T H (theta - center) / 2 <= epsilon} in
the augmented parameter space (features-or-embedding plus bias). For a point
x in that space, the minimum of theta^T x over the set is

    center^T x - sqrt(2 * epsilon * x^T H^-1 x)

attained at  center - sqrt(2*epsilon) * H^-1 x / sqrt(x^T H^-1 x)  (x != 0).
H^-1 is never formed; quadratic forms and solves go through the Cholesky
factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .data import Dataset
from .models import LinearModel, MlpModel, augment, sigmoid


class IllConditionedHessianError(np.linalg.LinAlgError):
    """Cholesky failed even after stabilization; carries a min-eigenvalue estimate."""


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSetEllipsoid:
    """Immutable ellipsoid: center, curvature matrix H, its Cholesky factor,
    the objective tolerance epsilon, and the stabilization actually applied."""

    center: np.ndarray
    hessian: np.ndarray
    chol: np.ndarray          # lower triangular, H = chol @ chol.T
    epsilon: float
    alpha: float = 0.0

    @property
    def p(self):
        return self.center.shape[0]

    def quad_inv(self, x):
        """x^T H^-1 x via one triangular solve."""
        z = solve_triangular(self.chol, x, lower=True)
        return float(z @ z)

    def inv_apply(self, x):
        """H^-1 x via two triangular solves."""
        z = solve_triangular(self.chol, x, lower=True)
        return solve_triangular(self.chol.T, z, lower=False)

    def quad_inv_rows(self, X):
        """Row-wise x_i^T H^-1 x_i for a stack of vectors, one factorization reuse."""
        Z = solve_triangular(self.chol, np.asarray(X, dtype=float).T, lower=True)
        return np.einsum("ij,ij->j", Z, Z)

    def to_dict(self, provenance=None):
        return {
            "center": self.center.tolist(),
            "hessian": self.hessian.tolist(),
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "provenance": provenance or {},
        }

    def to_json(self, provenance=None):
        return json.dumps(self.to_dict(provenance))


@dataclass(frozen=True)
class WorstCase:
    robust_logit: float
    worst_theta: np.ndarray
    penalty: float


def from_parts(center, hessian, epsilon, alpha=1e-6, max_alpha=1e-2):
    """Assemble an ellipsoid from an explicit center and curvature matrix.

    The matrix is symmetrized, then factorized; if Cholesky fails, alpha * I is
    added with alpha escalating x10 up to ``max_alpha`` before giving up. The
    alpha that was actually applied is recorded (0.0 when none was needed).
    """
    center = np.asarray(center, dtype=float)
    H = np.asarray(hessian, dtype=float)
    H = 0.5 * (H + H.T)
    if epsilon < 0:
        raise InputError("epsilon must be >= 0")

    applied = 0.0
    trial = H
    while True:
        try:
            L = np.linalg.cholesky(trial)
            return ModelSetEllipsoid(center=center, hessian=trial, chol=L,
                                     epsilon=float(epsilon), alpha=applied)
        except np.linalg.LinAlgError:
            applied = alpha if applied == 0.0 else applied * 10.0
            if applied > max_alpha:
                min_eig = float(np.linalg.eigvalsh(H).min())
                raise IllConditionedHessianError(
                    f"Hessian not positive definite after stabilization up to "
                    f"{max_alpha}; smallest eigenvalue ~ {min_eig:.3e}")
            trial = H + applied * np.eye(H.shape[0])


def design_rows(model, X):
    """Augmented rows the ellipsoid machinery operates on: [x;1] or [h(x);1]."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(model, MlpModel):
        return augment(model.embed(X))
    return augment(X)


def build_ellipsoid(model, ds, epsilon, alpha=1e-6, refit_last_layer=False):
    """Curvature of the regularized loss at the trained parameters.

    Rows are weighted by sigma(s_i)(1 - sigma(s_i)) at the model's own logits,
    scaled by 1/n (mean loss), with lam * I added. For MLPs the rows live in
    the frozen embedding space; ``refit_last_layer`` optionally refits the
    last-layer parameters on the embeddings before taking curvature.
    """
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    rows = design_rows(model, X)
    if refit_last_layer:
        if not isinstance(model, MlpModel):
            raise InputError("refit_last_layer only applies to MLP models")
        from .models import TrainConfig, train
        y = ds.y if isinstance(ds, Dataset) else None
        if y is None:
            raise InputError("refit_last_layer needs labels")
        refit = train((rows[:, :-1], y), TrainConfig(lam=model.lam, hidden_sizes=()))
        center = refit.theta
    else:
        center = model.last.theta if isinstance(model, MlpModel) else model.theta

    s = rows @ center
    w = sigmoid(s) * (1.0 - sigmoid(s))
    H = rows.T @ (rows * w[:, None]) / rows.shape[0]
    H += model.lam * np.eye(H.shape[0])
    return from_parts(center, H, epsilon, alpha=alpha)


def worst_case_logit(ell, x):
    """Closed-form minimum of theta^T x over the ellipsoid, with its argmin.

    For x = 0 the penalty is 0 and the worst model is the center itself.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (ell.p,):
        raise InputError(f"expected a vector of dimension {ell.p}, got {x.shape}")
    if not np.isfinite(x).all():
        raise InputError("x contains non-finite entries")
    if not x.any() or ell.epsilon == 0.0:
        # x = 0 and the epsilon = 0 single-model limit both lose the penalty
        return WorstCase(robust_logit=float(ell.center @ x),
                         worst_theta=ell.center.copy(), penalty=0.0)
    q = ell.quad_inv(x)
    penalty = float(np.sqrt(2.0 * ell.epsilon * q))
    worst = ell.center - np.sqrt(2.0 * ell.epsilon) * ell.inv_apply(x) / np.sqrt(q)
    return WorstCase(robust_logit=float(ell.center @ x) - penalty,
                     worst_theta=worst, penalty=penalty)


def robust_logits(ell, X):
    """Vectorized worst-case logits for a stack of augmented rows."""
    X = np.asarray(X, dtype=float)
    quad = ell.quad_inv_rows(X)
    return X @ ell.center - np.sqrt(2.0 * ell.epsilon * np.maximum(quad, 0.0))


def is_robust(ell, x, t):
    """Certificate: worst-case logit of x over the set reaches the threshold."""
    return bool(worst_case_logit(ell, x).robust_logit >= t)


def membership(ell, theta):
    """Exact set test: (theta - center)^T H (theta - center) / 2 <= epsilon."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (ell.p,):
        raise InputError(f"expected a vector of dimension {ell.p}, got {theta.shape}")
    v = theta - ell.center
    return bool(0.5 * float(v @ ell.hessian @ v) <= ell.epsilon)


def alignment_spectrum(ell):
    """Eigenvalues (descending) and matching eigenvectors of H."""
    vals, vecs = np.linalg.eigh(ell.hessian)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def cos_to_top_eigenvector(ell, direction):
    """|cos angle| between a direction and the top-curvature eigenvector."""
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        return 0.0
    _, vecs = alignment_spectrum(ell)
    return float(abs(vecs[:, 0] @ direction) / norm)


def epsilon_from_relative(base_objective, fraction):
    """Convert a tolerance quoted relative to the trained objective to absolute."""
    if fraction < 0:
        raise InputError("relative epsilon must be >= 0")
    return float(fraction * base_objective)


def ellipsoid_from_json(text):
    d = json.loads(text)
    return from_parts(np.array(d["center"]), np.array(d["hessian"]),
                      d["epsilon"], alpha=d.get("alpha") or 1e-6)
