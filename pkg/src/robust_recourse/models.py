"""Linear (logistic) and small-MLP classifiers with the pieces the recourse
machinery needs: raw logits, the regularized training objective, analytic
gradients, and the frozen penultimate embedding for MLPs.

Parameter convention: a bias column is appended internally, so a linear model's
parameter vector lives in R^(d+1) (weights first, bias last) and the full
vector, bias included, is what the l2 penalty regularizes. The model-set
ellipsoid lives in this augmented space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset

MODEL_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """Objective became non-finite; carries the epoch index."""


class UnsupportedOperationError(TypeError):
    pass


def sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(s, dtype=float)))


def bce(s, y):
    """Binary cross-entropy on raw logits, stable for saturating inputs."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    return y * np.logaddexp(0.0, -s) + (1.0 - y) * np.logaddexp(0.0, s)


def bce_grad(s, y):
    """d bce / d s = sigmoid(s) - y."""
    return sigmoid(s) - np.asarray(y, dtype=float)


def augment(X):
    """Append the bias coordinate: x -> [x; 1]."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return np.concatenate([X, [1.0]])
    return np.hstack([X, np.ones((X.shape[0], 1))])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 2000
    early_stop_patience: int = 10
    lam: float = 1e-3
    seed: int = 0
    hidden_sizes: tuple = ()          # empty -> linear model
    activation: str = "relu"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


@dataclass
class LinearModel:
    """score(x) = theta^T [x; 1]; predicted label is 1[score >= threshold]."""

    theta: np.ndarray
    lam: float = 0.0
    threshold: float = 0.0
    train_objective: Optional[float] = None
    grad_norm: Optional[float] = None

    @property
    def p(self):
        return self.theta.shape[0]

    def logits(self, X):
        return augment(X) @ self.theta

    def predict(self, X):
        return (self.logits(X) >= self.threshold).astype(np.int64)


@dataclass
class MlpModel:
    """f(x) = theta^T [h(x); 1] with h the frozen penultimate embedding."""

    weights: list                      # hidden-layer weight matrices, (out, in)
    biases: list
    last: LinearModel                  # theta over [embedding; 1]
    activation: str = "relu"
    lam: float = 0.0
    threshold: float = 0.0
    train_objective: Optional[float] = None
    grad_norm: Optional[float] = None

    @property
    def embedding_dim(self):
        return self.weights[-1].shape[0]

    def embed(self, X):
        H, _ = _forward(self, np.atleast_2d(np.asarray(X, dtype=float)))
        return H[-1] if np.asarray(X).ndim > 1 else H[-1][0]

    def logits(self, X):
        X2 = np.atleast_2d(np.asarray(X, dtype=float))
        out = augment(self.embed(X2)) @ self.last.theta
        return out if np.asarray(X).ndim > 1 else float(out[0])

    def predict(self, X):
        return (np.atleast_1d(self.logits(X)) >= self.threshold).astype(np.int64)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(float)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    raise ValueError(f"unknown activation {kind!r}")


def _forward(mlp, X):
    """Layer activations and pre-activations; activations[-1] is the embedding."""
    acts, pres = [X], []
    h = X
    for W, b in zip(mlp.weights, mlp.biases):
        z = h @ W.T + b
        pres.append(z)
        h = _act(z, mlp.activation)
        acts.append(h)
    return acts[1:], pres


def logit(model, x):
    """theta^T [x; 1] for linear models, theta^T [h(x); 1] for MLPs."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, LinearModel):
        if x.shape[-1] != model.p - 1:
            raise ValueError(f"expected {model.p - 1} features, got {x.shape[-1]}")
        return float(model.theta @ augment(x)) if x.ndim == 1 else model.logits(x)
    if isinstance(model, MlpModel):
        if x.shape[-1] != model.weights[0].shape[1]:
            raise ValueError(
                f"expected {model.weights[0].shape[1]} features, got {x.shape[-1]}")
        return model.logits(x)
    raise UnsupportedOperationError(f"unknown model type {type(model).__name__}")


def embedding(model, x):
    """Penultimate-layer embedding h(x); MLP only."""
    if not isinstance(model, MlpModel):
        raise UnsupportedOperationError("embedding is only defined for MLP models")
    return model.embed(np.asarray(x, dtype=float))


def _as_arrays(ds, y=None):
    if isinstance(ds, Dataset):
        return ds.X, ds.y
    if y is None and isinstance(ds, tuple):
        X, yy = ds
        return np.asarray(X, dtype=float), np.asarray(yy)
    return np.asarray(ds, dtype=float), np.asarray(y)


def regularized_objective(model, ds, y=None):
    """Mean BCE over the rows plus (lam/2) * ||params||^2."""
    X, yy = _as_arrays(ds, y)
    s = model.logits(X) if isinstance(model, LinearModel) else np.atleast_1d(model.logits(X))
    data_term = float(np.mean(bce(s, yy)))
    return data_term + 0.5 * model.lam * _param_sq_norm(model)


def _param_sq_norm(model):
    if isinstance(model, LinearModel):
        return float(model.theta @ model.theta)
    total = float(model.last.theta @ model.last.theta)
    for W, b in zip(model.weights, model.biases):
        total += float((W * W).sum() + (b * b).sum())
    return total


def linear_objective_grad(theta, X, y, lam):
    """Gradient of the regularized objective for a linear model, in R^(d+1)."""
    A = augment(X)
    s = A @ theta
    return A.T @ bce_grad(s, y) / len(y) + lam * theta


def flatten_params(model):
    if isinstance(model, LinearModel):
        return model.theta.copy()
    parts = [W.ravel() for W in model.weights] + [b.ravel() for b in model.biases]
    parts.append(model.last.theta)
    return np.concatenate([p.copy() for p in parts])


def set_params(model, flat):
    """Return a copy of the model with parameters replaced from a flat vector."""
    flat = np.asarray(flat, dtype=float)
    if isinstance(model, LinearModel):
        return LinearModel(theta=flat.copy(), lam=model.lam, threshold=model.threshold)
    weights, biases, k = [], [], 0
    for W in model.weights:
        weights.append(flat[k:k + W.size].reshape(W.shape).copy())
        k += W.size
    for b in model.biases:
        biases.append(flat[k:k + b.size].copy())
        k += b.size
    theta = flat[k:].copy()
    last = LinearModel(theta=theta, lam=model.lam, threshold=model.threshold)
    return MlpModel(weights=weights, biases=biases, last=last,
                    activation=model.activation, lam=model.lam, threshold=model.threshold)


def mlp_objective_grad(model, X, y):
    """Gradient of the regularized objective w.r.t. all MLP parameters (flat)."""
    n = len(y)
    acts, pres = _forward(model, X)
    H = acts[-1]
    s = augment(H) @ model.last.theta
    g_s = bce_grad(s, y) / n                      # (n,)

    e = model.embedding_dim
    g_last = augment(H).T @ g_s + model.lam * model.last.theta
    delta = np.outer(g_s, model.last.theta[:e])   # dL/dH, (n, e)

    g_W, g_b = [None] * len(model.weights), [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        dz = delta * _act_grad(pres[l], model.activation)
        below = X if l == 0 else acts[l - 1]
        g_W[l] = dz.T @ below + model.lam * model.weights[l]
        g_b[l] = dz.sum(axis=0) + model.lam * model.biases[l]
        delta = dz @ model.weights[l]
    return np.concatenate([g.ravel() for g in g_W] + g_b + [g_last])


def logit_input_gradient(model, x):
    """d logit / d x; for MLPs this backpropagates through the frozen embedding."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, LinearModel):
        return model.theta[:-1].copy()
    return embedding_vjp(model, x, model.last.theta[:model.embedding_dim])


def embedding_vjp(model, x, v):
    """J_h(x)^T v for an MLP: pulls an embedding-space vector back to inputs."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    acts, pres = _forward(model, X)
    delta = np.atleast_2d(np.asarray(v, dtype=float))
    for l in range(len(model.weights) - 1, -1, -1):
        delta = (delta * _act_grad(pres[l], model.activation)) @ model.weights[l]
    return delta[0] if np.asarray(x).ndim == 1 else delta


def _train_linear(X, y, cfg):
    """Full-batch gradient descent with backtracking line search on the convex
    regularized objective. Deterministic; no dependence on the seed."""
    theta = np.zeros(X.shape[1] + 1)
    A = augment(X)
    n = len(y)

    def obj(th):
        return float(np.mean(bce(A @ th, y)) + 0.5 * cfg.lam * th @ th)

    value = obj(theta)
    step = 1.0
    for epoch in range(cfg.max_epochs):
        grad = A.T @ bce_grad(A @ theta, y) / n + cfg.lam * theta
        gnorm = float(np.linalg.norm(grad))
        if not np.isfinite(value):
            raise TrainingError(f"objective diverged at epoch {epoch}")
        if gnorm < 1e-10:
            break
        step = min(step * 2.0, 1e6)
        while step > 1e-18:
            cand = theta - step * grad
            cand_val = obj(cand)
            if cand_val <= value - 0.5 * step * gnorm ** 2:
                break
            step *= 0.5
        theta = theta - step * grad
        value = obj(theta)
    grad = A.T @ bce_grad(A @ theta, y) / n + cfg.lam * theta
    model = LinearModel(theta=theta, lam=cfg.lam)
    model.train_objective = obj(theta)
    model.grad_norm = float(np.linalg.norm(grad))
    return model


def _init_mlp(d, cfg):
    rng = np.random.default_rng(cfg.seed)
    sizes = [d] + list(cfg.hidden_sizes)
    weights = [rng.normal(0.0, np.sqrt(2.0 / sizes[i]), size=(sizes[i + 1], sizes[i]))
               for i in range(len(sizes) - 1)]
    biases = [np.zeros(s) for s in sizes[1:]]
    theta = rng.normal(0.0, 0.1, size=sizes[-1] + 1)
    last = LinearModel(theta=theta, lam=cfg.lam)
    return MlpModel(weights=weights, biases=biases, last=last,
                    activation=cfg.activation, lam=cfg.lam)


def _train_mlp(X, y, cfg, val=None):
    """Full-batch Adam with early stopping on validation BCE (falls back to the
    training objective when no validation split is provided)."""
    model = _init_mlp(X.shape[1], cfg)
    params = flatten_params(model)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    b1, b2, eps = 0.9, 0.999, 1e-8

    def monitor(mod):
        if val is not None:
            Xv, yv = val
            return float(np.mean(bce(np.atleast_1d(mod.logits(Xv)), yv)))
        return regularized_objective(mod, X, y)

    best_params, best_score, bad_epochs = params.copy(), np.inf, 0
    for epoch in range(cfg.max_epochs):
        model = set_params(model, params)
        value = regularized_objective(model, X, y)
        if not np.isfinite(value):
            raise TrainingError(f"objective diverged at epoch {epoch}")
        grad = mlp_objective_grad(model, X, y)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mh = m / (1 - b1 ** (epoch + 1))
        vh = v / (1 - b2 ** (epoch + 1))
        params = params - cfg.learning_rate * mh / (np.sqrt(vh) + eps)

        score = monitor(set_params(model, params))
        if score < best_score - 1e-12:
            best_score, best_params, bad_epochs = score, params.copy(), 0
        else:
            bad_epochs += 1
            if cfg.early_stop_patience and bad_epochs >= cfg.early_stop_patience:
                break

    model = set_params(model, best_params)
    model.train_objective = regularized_objective(model, X, y)
    model.grad_norm = float(np.linalg.norm(mlp_objective_grad(model, X, y)))
    return model


def train(ds, cfg, val=None):
    """Fit a linear model (empty hidden_sizes) or an MLP on a preprocessed dataset.

    ``val`` is an optional (X, y) pair monitored for early stopping. Training is
    deterministic under the config seed.
    """
    X, y = _as_arrays(ds) if not isinstance(ds, tuple) else ds
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    if len(cfg.hidden_sizes) == 0:
        return _train_linear(X, y, cfg)
    return _train_mlp(X, y, cfg, val=val)


def to_json(model):
    base = {"version": MODEL_FORMAT_VERSION, "lam": model.lam,
            "threshold": model.threshold, "train_objective": model.train_objective}
    if isinstance(model, LinearModel):
        base.update({"kind": "linear", "theta": model.theta.tolist()})
    else:
        base.update({
            "kind": "mlp", "activation": model.activation,
            "weights": [W.tolist() for W in model.weights],
            "biases": [b.tolist() for b in model.biases],
            "last_theta": model.last.theta.tolist(),
        })
    return json.dumps(base)


def from_json(text):
    d = json.loads(text)
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('version')!r}")
    if d["kind"] == "linear":
        m = LinearModel(theta=np.array(d["theta"]), lam=d["lam"], threshold=d["threshold"])
    else:
        last = LinearModel(theta=np.array(d["last_theta"]), lam=d["lam"],
                           threshold=d["threshold"])
        m = MlpModel(weights=[np.array(W) for W in d["weights"]],
                     biases=[np.array(b) for b in d["biases"]],
                     last=last, activation=d["activation"], lam=d["lam"],
                     threshold=d["threshold"])
    m.train_objective = d.get("train_objective")
    return m
