"""Independent oracles used across the test suite.

These deliberately avoid the library's own code paths: finite differences for
gradients, per-definition loops for LOF, boundary sampling and an SLSQP solve
for the worst-case/projection geometry.
"""

import numpy as np
from scipy.optimize import NonlinearConstraint, minimize


def central_diff_grad(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def random_pd_matrix(rng, p, eig_low=0.3, eig_high=4.0):
    """Random symmetric PD matrix with eigenvalues in a controlled band."""
    Q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    vals = rng.uniform(eig_low, eig_high, size=p)
    return Q @ np.diag(vals) @ Q.T


def boundary_samples(rng, center, H, epsilon, count):
    """Points theta with (theta-center)^T H (theta-center)/2 == epsilon."""
    p = center.shape[0]
    U = rng.normal(size=(count, p))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    vals, vecs = np.linalg.eigh(H)
    inv_sqrt = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
    return center[None, :] + np.sqrt(2.0 * epsilon) * (U @ inv_sqrt.T)


def sampled_min_logit(rng, center, H, epsilon, x, count):
    thetas = boundary_samples(rng, center, H, epsilon, count)
    return float((thetas @ x).min())


def refined_min_logit(rng, center, H, epsilon, x, total_budget):
    """Derivative-free minimizer of theta . x over the ellipsoid boundary:
    uniform exploration, then shrinking Gaussian refinement around the best
    direction. Stays independent of the closed form under test."""
    p = center.shape[0]
    vals, vecs = np.linalg.eigh(H)
    inv_sqrt = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T

    def value_of(U):
        U = U / np.linalg.norm(U, axis=1, keepdims=True)
        thetas = center[None, :] + np.sqrt(2.0 * epsilon) * (U @ inv_sqrt.T)
        vals_ = thetas @ x
        k = int(np.argmin(vals_))
        return float(vals_[k]), U[k]

    n_uniform = total_budget // 2
    best_val, best_u = value_of(rng.normal(size=(n_uniform, p)))
    remaining = total_budget - n_uniform
    rounds = 12
    per_round = max(remaining // rounds, 1)
    sigma = 0.5
    for _ in range(rounds):
        U = best_u[None, :] + sigma * rng.normal(size=(per_round, p))
        val, u = value_of(U)
        if val < best_val:
            best_val, best_u = val, u
        sigma *= 0.45
    return best_val


def naive_lof(S, x, k):
    """Per-definition LOF: reachability distances and local reachability
    densities computed with explicit loops. Exactly-k neighbor sets, index
    tie-break, query duplicates excluded."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    k = min(k, n - 1)

    def dist(a, b):
        return float(np.sqrt(((a - b) ** 2).sum()))

    def neighbors_of(i):
        ds = sorted((dist(S[i], S[j]), j) for j in range(n) if j != i)
        return [j for _, j in ds[:k]], ds[k - 1][0]

    nbrs, kdists = {}, {}
    for i in range(n):
        nbrs[i], kdists[i] = neighbors_of(i)

    def lrd_of_ref(i):
        total = 0.0
        for j in nbrs[i]:
            total += max(dist(S[i], S[j]), kdists[j])
        return k / total

    ds = sorted((dist(x, S[j]), j) for j in range(n) if dist(x, S[j]) > 0.0)
    qn = [j for _, j in ds[:k]]
    total = 0.0
    for j in qn:
        total += max(dist(x, S[j]), kdists[j])
    lrd_q = k / total
    return float(np.mean([lrd_of_ref(j) for j in qn]) / lrd_q)


def projection_oracle(center, H, epsilon, x0, t, tol=1e-12):
    """High-precision Euclidean projection of x0 onto
    {x : center.[x;1] - sqrt(2 eps [x;1] H^-1 [x;1]) >= t} via SLSQP."""
    Hinv = np.linalg.inv(H)

    def aug(x):
        return np.concatenate([x, [1.0]])

    def g(x):
        xa = aug(x)
        return float(center @ xa - np.sqrt(2.0 * epsilon * xa @ Hinv @ xa))

    def g_jac(x):
        xa = aug(x)
        q = float(xa @ Hinv @ xa)
        grad_full = center - np.sqrt(2.0 * epsilon) * (Hinv @ xa) / np.sqrt(q)
        return grad_full[:-1]

    if g(x0) >= t:
        return np.asarray(x0, dtype=float)

    best = None
    for scale in (1.0, 3.0, 10.0):
        start = x0 + scale * g_jac(x0) / max(np.linalg.norm(g_jac(x0)), 1e-12)
        res = minimize(lambda x: float(((x - x0) ** 2).sum()), start,
                       jac=lambda x: 2.0 * (x - x0), method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda x: g(x) - t,
                                     "jac": g_jac}],
                       options={"maxiter": 600, "ftol": tol})
        if res.success and g(res.x) >= t - 1e-9:
            if best is None or ((res.x - x0) ** 2).sum() < ((best - x0) ** 2).sum():
                best = res.x
    if best is None:
        raise RuntimeError("projection oracle failed to converge")
    return best
