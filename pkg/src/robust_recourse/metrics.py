"""Counterfactual scoring: validity under the generating model, ensemble
robustness, Euclidean and mixed (Gower-style) proximity, and local-outlier-
factor plausibility."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import BINARY, CATEGORICAL, CONTINUOUS


@dataclass
class MetricReport:
    validity: float
    robustness: float
    mean_l2: float
    mean_l_mix: float
    mean_lof: Optional[float]
    n: int
    per_instance: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({
            "validity": self.validity, "robustness": self.robustness,
            "mean_l2": self.mean_l2, "mean_l_mix": self.mean_l_mix,
            "mean_lof": self.mean_lof, "n": self.n,
            "per_instance": self.per_instance,
        })

    def to_csv_rows(self):
        """Flat per-instance rows, plot-ready."""
        header = ["index", "valid", "robust", "l2", "l_mix", "lof"]
        rows = [header]
        for rec in self.per_instance:
            rows.append([rec.get(k, "") for k in header])
        return rows


def _ce_point(ce):
    return np.asarray(ce.x_c if hasattr(ce, "x_c") else ce, dtype=float)


def _ce_flagged(ce):
    # best-effort iterates from a generator that never reached the threshold
    return hasattr(ce, "robust") and not ce.robust


def validity(model, ces, target=1):
    """Fraction of counterfactuals the generating model classifies as ``target``.

    Flagged (non-certified) counterfactuals count as invalid.
    """
    if len(ces) == 0:
        raise ValueError("empty counterfactual list")
    hits = 0
    for ce in ces:
        if _ce_flagged(ce):
            continue
        pred = int(np.atleast_1d(model.predict(_ce_point(ce)))[0])
        hits += int(pred == target)
    return hits / len(ces)


def robustness(ensemble, ces, target=1):
    """Fraction of counterfactuals that every ensemble member classifies as
    ``target``. Flagged counterfactuals count as non-robust."""
    if len(ensemble.members) == 0:
        raise ValueError("empty ensemble")
    if len(ces) == 0:
        raise ValueError("empty counterfactual list")
    hits = 0
    for ce in ces:
        if _ce_flagged(ce):
            continue
        x = _ce_point(ce)
        if all(int(np.atleast_1d(m.predict(x))[0]) == target for m in ensemble.members):
            hits += 1
    return hits / len(ces)


def l2(x1, x2):
    return float(np.linalg.norm(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)))


def l_mix(x1, x2, specs):
    """Gower-style mixed distance on standardized inputs:

    sqrt( sum_cont (dx_j)^2  +  sum_cat u_j * 1[group differs]  +  sum_bin u_j * 1[differs] )

    Categorical inequality is judged at group level (any member column
    differs); the group weight is its first member's change cost.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if len(specs) != x1.shape[0] or x1.shape != x2.shape:
        raise ValueError("spec/vector length mismatch")
    total = 0.0
    seen_groups = set()
    for j, s in enumerate(specs):
        if s.kind == CONTINUOUS:
            total += (x1[j] - x2[j]) ** 2
        elif s.group is not None:
            if s.group in seen_groups:
                continue
            seen_groups.add(s.group)
            members = [k for k, sp in enumerate(specs) if sp.group == s.group]
            if any(x1[k] != x2[k] for k in members):
                total += s.change_cost
        else:
            total += s.change_cost * float(x1[j] != x2[j])
    return float(np.sqrt(total))


def l0(x1, x2, tol=1e-9):
    return int((np.abs(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)) > tol).sum())


def _knn(dists, k):
    """Indices of the k nearest columns per row, stable index tie-break."""
    order = np.argsort(dists, axis=-1, kind="stable")
    return order[..., :k]


def lof(S, x, k=20):
    """Local outlier factor of ``x`` against reference set ``S`` (l2 metric).

    Exact reachability-density formula with exactly-k neighbor sets (ties
    broken by row index). Exact duplicates of the query inside S are excluded
    from its neighbor search. Scores near 1 mean the query sits in a region as
    dense as its neighbors.
    """
    S = np.asarray(S, dtype=float)
    x = np.asarray(x, dtype=float)
    n = S.shape[0]
    k = min(k, n - 1)
    if n <= k or k < 1:
        raise ValueError(f"need |S| > k >= 1, got |S|={n}, k={k}")

    D = np.linalg.norm(S[:, None, :] - S[None, :, :], axis=-1)
    np.fill_diagonal(D, np.inf)
    nbr = _knn(D, k)                                    # (n, k)
    kdist = np.take_along_axis(D, nbr[:, -1:], axis=1)[:, 0]
    reach = np.maximum(np.take_along_axis(D, nbr, axis=1), kdist[nbr])
    lrd_S = k / reach.sum(axis=1)

    dq = np.linalg.norm(S - x[None, :], axis=1)
    dq = np.where(dq == 0.0, np.inf, dq)                # drop exact duplicates
    if np.isinf(dq).sum() > n - k:
        raise ValueError("too few distinct reference points for the query")
    qnbr = _knn(dq, k)
    reach_q = np.maximum(dq[qnbr], kdist[qnbr])
    lrd_q = k / reach_q.sum()
    return float(lrd_S[qnbr].mean() / lrd_q)


def lof_many(S, Q, k=20):
    return np.array([lof(S, q, k=k) for q in np.atleast_2d(Q)])


def report(model, ces, x0s, specs, ensemble=None, lof_reference=None, k=20, target=1):
    """Aggregate MetricReport for a batch of counterfactuals.

    ``lof_reference`` defaults to None (LOF skipped); pass target-class
    training rows to score plausibility.
    """
    per = []
    l2s, lmixs, lofs = [], [], []
    for i, (ce, x0) in enumerate(zip(ces, x0s)):
        xc = _ce_point(ce)
        rec = {
            "index": i,
            "valid": int(not _ce_flagged(ce)
                         and int(np.atleast_1d(model.predict(xc))[0]) == target),
            "l2": l2(xc, x0),
            "l_mix": l_mix(xc, x0, specs),
        }
        if ensemble is not None:
            rec["robust"] = int(not _ce_flagged(ce) and all(
                int(np.atleast_1d(m.predict(xc))[0]) == target for m in ensemble.members))
        if lof_reference is not None:
            rec["lof"] = lof(lof_reference, xc, k=k)
            lofs.append(rec["lof"])
        per.append(rec)
        l2s.append(rec["l2"])
        lmixs.append(rec["l_mix"])
    return MetricReport(
        validity=validity(model, ces, target),
        robustness=(robustness(ensemble, ces, target) if ensemble is not None else 0.0),
        mean_l2=float(np.mean(l2s)),
        mean_l_mix=float(np.mean(lmixs)),
        mean_lof=(float(np.mean(lofs)) if lofs else None),
        n=len(per),
        per_instance=per,
    )
