# Continuous recourse, actionability constraints, and the price of robustness
# ----------------------------------------------------------------------------
# Gradient-based generation explores the whole feature space instead of the
# observed rows. Each step recomputes the worst-case model for the current
# iterate and descends a prediction + worst-case + proximity objective; on
# linear models the final iterate is polished to the exact projection onto the
# certified region.

import numpy as np

from robust_recourse import (ContinuousGenConfig, RecourseConstraints,
                             TrainConfig, build_ellipsoid, generate_continuous,
                             generate_sparse_continuous, preprocess,
                             regularized_objective, train)
from robust_recourse.data import balance_classes
from robust_recourse.datasets import synthetic_credit_dataset
from robust_recourse.ellipsoid import epsilon_from_relative

ds = preprocess(balance_classes(synthetic_credit_dataset(n=600, seed=7), seed=0),
                fit_rows=np.arange(600), balance=False)
model = train(ds, TrainConfig(lam=1e-3))
eps = epsilon_from_relative(regularized_objective(model, ds), 0.1)
ell = build_ellipsoid(model, ds, epsilon=eps)
names = [s.name for s in ds.specs]

x0 = ds.X[model.predict(ds.X) == 0][0]


def describe(tag, cf):
    print(f"\n{tag}: l2={cf.l2:.3f}  changed={cf.l0}  steps={cf.steps_used}  "
          f"robust score {cf.robust_logit:.4f}")
    for j in np.argsort(-np.abs(cf.x_c - x0))[:4]:
        if abs(cf.x_c[j] - x0[j]) > 1e-9:
            print(f"  {names[j]:<28} {x0[j]: .3f} -> {cf.x_c[j]: .3f}")


# unconstrained: the closest certified point anywhere in feature space
describe("unconstrained", generate_continuous(ell, model, x0, t=0.0,
                                              specs=ds.specs))

# lock the profile attributes the applicant cannot change
locked = np.array([s.immutable for s in ds.specs])
print(f"\nlocking {[n for n, m in zip(names, locked) if m]}")
cons = RecourseConstraints(immutable=locked)
cf = generate_continuous(ell, model, x0, t=0.0, cons=cons, specs=ds.specs)
describe("immutables locked", cf)
assert all(cf.x_c[j] == x0[j] for j in np.where(locked)[0])

# direction constraints compile to one-sided ranges around the query
dirs = np.zeros(ds.d)
dirs[names.index("duration_months")] = -1.0      # may only shrink
cons2 = RecourseConstraints(immutable=locked, directions=dirs)
describe("duration non-increasing",
         generate_continuous(ell, model, x0, t=0.0, cons=cons2, specs=ds.specs))

# sparse search: grow an active set of features ranked by gradient mass
describe("sparse active-set",
         generate_sparse_continuous(ell, model, x0, t=0.0, cons=cons,
                                    specs=ds.specs))

# the robustness-proximity trade-off: distance grows with the tolerance
print("\nprice of robustness (distance vs tolerance):")
for rel in (0.02, 0.05, 0.1, 0.2, 0.4):
    e = build_ellipsoid(model, ds,
                        epsilon=epsilon_from_relative(
                            regularized_objective(model, ds), rel))
    cf = generate_continuous(e, model, x0, t=0.0, specs=ds.specs)
    marker = "certified" if cf.robust else "best effort (flagged)"
    print(f"  rel eps {rel:<5} l2 {cf.l2:7.3f}   {marker}")
