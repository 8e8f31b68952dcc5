# Worst-case scores over a set of near-optimal models
# ----------------------------------------------------
# A trained classifier is one point in parameter space; every retrain or
# regularization tweak lands somewhere nearby. This demo builds the ellipsoid
# of models whose training objective stays within a tolerance of the optimum
# and evaluates the closed-form *worst-case* score of a few inputs over that
# whole set, then checks the closed form against brute-force sampling.

import numpy as np

from robust_recourse import (LinearModel, TrainConfig, build_ellipsoid,
                             is_robust, membership, train, worst_case_logit)
from robust_recourse.datasets import blobs
from robust_recourse.recourse import lift

rng = np.random.default_rng(0)

# two Gaussian blobs, a logistic model, and its curvature ellipsoid
X, y = blobs(n=300, d=2, seed=1, separation=2.5)
model = train((X, y), TrainConfig(lam=1e-3))
print(f"trained objective: {model.train_objective:.4f}")

epsilon = 0.05
ell = build_ellipsoid(model, X, epsilon=epsilon)
print(f"ellipsoid over p={ell.p} parameters at epsilon={epsilon}")

# pick one confident point and one borderline point
scores = model.logits(X)
confident = X[int(np.argmax(scores))]
border = X[int(np.argmin(np.abs(scores)))]

for name, x in (("confident", confident), ("borderline", border)):
    wc = worst_case_logit(ell, lift(model, x))
    print(f"\n{name} point {np.round(x, 2)}")
    print(f"  base score        {model.logits(x[None, :])[0]: .4f}")
    print(f"  worst-case score  {wc.robust_logit: .4f}  (penalty {wc.penalty:.4f})")
    print(f"  certified at t=0? {is_robust(ell, lift(model, x), 0.0)}")
    # the minimizing model sits exactly on the ellipsoid boundary
    v = wc.worst_theta - ell.center
    print(f"  worst model quadratic form / epsilon = "
          f"{0.5 * v @ ell.hessian @ v / epsilon:.6f}")
    assert membership(ell, wc.worst_theta)

# sanity: sampling many boundary models never beats the closed form
x = lift(model, border)
vals, vecs = np.linalg.eigh(ell.hessian)
inv_sqrt = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
U = rng.normal(size=(20000, ell.p))
U /= np.linalg.norm(U, axis=1, keepdims=True)
thetas = ell.center + np.sqrt(2 * epsilon) * (U @ inv_sqrt.T)
sampled_min = float((thetas @ x).min())
closed = worst_case_logit(ell, x).robust_logit
print(f"\nsampled minimum over 20k boundary models: {sampled_min:.6f}")
print(f"closed-form minimum:                      {closed:.6f}")
assert closed <= sampled_min + 1e-9

# larger tolerance -> more models to defend against -> lower guaranteed score
print("\nworst-case score as the tolerance grows:")
for eps in (0.01, 0.02, 0.05, 0.1, 0.2):
    e = build_ellipsoid(model, X, epsilon=eps)
    print(f"  epsilon={eps:<5} robust score {worst_case_logit(e, x).robust_logit: .4f}")
