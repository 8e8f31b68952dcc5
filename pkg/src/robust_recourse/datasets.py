"""Seeded synthetic tabular datasets for demos and desk-scale experiments.

``synthetic_credit`` mimics the shape of a small credit-scoring table: a
handful of continuous attributes, several one-hot categorical groups, a couple
of raw binary flags, and a label driven by a noisy linear score so that a
logistic model is decent but far from perfect.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .data import BINARY, CATEGORICAL, CONTINUOUS, FeatureSpec, load_frame


def credit_schema():
    return [
        FeatureSpec("duration_months", CONTINUOUS),
        FeatureSpec("credit_amount", CONTINUOUS),
        FeatureSpec("installment_rate", CONTINUOUS),
        FeatureSpec("residence_since", CONTINUOUS),
        FeatureSpec("age", CONTINUOUS, immutable=True),
        FeatureSpec("checking_status", CATEGORICAL),
        FeatureSpec("credit_history", CATEGORICAL),
        FeatureSpec("purpose", CATEGORICAL),
        FeatureSpec("savings_status", CATEGORICAL),
        FeatureSpec("employment", CATEGORICAL),
        FeatureSpec("housing", CATEGORICAL),
        FeatureSpec("personal_status", CATEGORICAL, immutable=True),
        FeatureSpec("telephone", BINARY),
        FeatureSpec("foreign_worker", BINARY, immutable=True),
    ]


_LEVELS = {
    "checking_status": ["lt0", "0to200", "ge200", "none"],
    "credit_history": ["critical", "delayed", "existing_paid", "all_paid"],
    "purpose": ["car_new", "car_used", "furniture", "education", "business"],
    "savings_status": ["lt100", "100to500", "500to1000", "ge1000"],
    "employment": ["unemployed", "lt1yr", "1to4yr", "ge4yr"],
    "housing": ["rent", "own", "free"],
    "personal_status": ["single", "married", "divorced"],
}

# per-level contributions to the latent credit-worthiness score
_LEVEL_SCORE = {
    "checking_status": [-1.0, -0.3, 0.6, 0.9],
    "credit_history": [-0.8, -0.3, 0.4, 0.7],
    "purpose": [-0.2, 0.3, 0.0, -0.1, 0.1],
    "savings_status": [-0.6, -0.1, 0.4, 0.8],
    "employment": [-0.7, -0.2, 0.3, 0.6],
    "housing": [-0.3, 0.4, -0.1],
    "personal_status": [0.0, 0.1, -0.1],
}


def synthetic_credit(n=600, seed=7, noise=1.1):
    """Raw DataFrame + schema for a credit-style binary task.

    ``noise`` sets the latent score noise; larger values blur the classes and
    push counterfactuals farther away. The label is balanced by construction
    around the median score.
    """
    rng = np.random.default_rng(seed)
    duration = rng.gamma(4.0, 6.0, size=n)                 # months
    amount = rng.lognormal(7.6, 0.8, size=n)               # currency units
    rate = rng.integers(1, 5, size=n).astype(float)
    residence = rng.integers(1, 5, size=n).astype(float)
    age = rng.normal(36.0, 11.0, size=n).clip(18, 80)

    cats = {}
    for col, levels in _LEVELS.items():
        probs = rng.dirichlet(np.full(len(levels), 3.0))
        cats[col] = rng.choice(len(levels), size=n, p=probs)
    telephone = rng.integers(0, 2, size=n).astype(float)
    foreign = (rng.random(n) < 0.9).astype(float)

    score = (
        -0.9 * (duration - duration.mean()) / duration.std()
        - 0.8 * (np.log(amount) - np.log(amount).mean()) / np.log(amount).std()
        - 0.3 * (rate - rate.mean()) / rate.std()
        + 0.4 * (age - age.mean()) / age.std()
        + 0.3 * telephone
        - 0.2 * (1.0 - foreign)
    )
    for col in _LEVELS:
        score += np.array(_LEVEL_SCORE[col])[cats[col]]
    score += rng.normal(0.0, noise, size=n)
    y = (score > np.median(score)).astype(int)

    df = pd.DataFrame({
        "duration_months": np.round(duration, 1),
        "credit_amount": np.round(amount, 0),
        "installment_rate": rate,
        "residence_since": residence,
        "age": np.round(age, 0),
        "telephone": telephone,
        "foreign_worker": foreign,
        "label": y,
    })
    for col, levels in _LEVELS.items():
        df[col] = [levels[i] for i in cats[col]]
    return df, credit_schema()


def synthetic_credit_dataset(n=600, seed=7, noise=1.1):
    """One-hot expanded, unscaled Dataset for the synthetic credit table."""
    df, schema = synthetic_credit(n=n, seed=seed, noise=noise)
    return load_frame(df, schema)


def blobs(n=200, d=2, seed=0, separation=2.0):
    """Two spherical Gaussian classes; the everyday toy for generator tests."""
    rng = np.random.default_rng(seed)
    half = n // 2
    X0 = rng.normal(-separation / 2.0, 1.0, size=(half, d))
    X1 = rng.normal(separation / 2.0, 1.0, size=(n - half, d))
    X = np.vstack([X0, X1])
    y = np.concatenate([np.zeros(half, dtype=int), np.ones(n - half, dtype=int)])
    order = rng.permutation(n)
    return X[order], y[order]
