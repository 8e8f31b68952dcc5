"""JSON-over-HTTP facade for interactive recourse exploration.

Session-scoped: a client creates a session, loads a dataset, trains a model,
builds the certificate ellipsoid, then asks for recourse / certification /
epsilon sweeps. Artifacts are content-hashed so a session's ellipsoid is
always consistent with the (model, dataset, epsilon) triple it was built from.
Errors use a fixed {code, message, detail} envelope.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import threading
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .data import FeatureSpec, load_frame, preprocess
from .ellipsoid import (build_ellipsoid, cos_to_top_eigenvector,
                        epsilon_from_relative, worst_case_logit)
from .models import TrainConfig, regularized_objective, train
from .recourse import (ContinuousGenConfig, NoRobustCandidateError,
                       RecourseConstraints, generate_continuous,
                       generate_data_supported, generate_sparse_continuous,
                       lift)

GENERATION_TIMEOUT_SECONDS = 10.0


class ServiceError(Exception):
    def __init__(self, status, code, message, detail=None):
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail or {}


class DatasetBody(BaseModel):
    csv_text: str
    feature_schema: list
    label: str = "label"
    balance: bool = False
    seed: int = 0


class TrainBody(BaseModel):
    lam: float = 1e-3
    learning_rate: float = 1e-3
    max_epochs: int = 2000
    early_stop_patience: int = 10
    hidden_sizes: list = Field(default_factory=list)
    seed: int = 0
    threshold: float = 0.0


class EllipsoidBody(BaseModel):
    epsilon: Optional[float] = None
    epsilon_relative: Optional[float] = None
    alpha: float = 1e-6


class ConstraintsBody(BaseModel):
    locked: list = Field(default_factory=list)          # feature names or indices
    ranges: dict = Field(default_factory=dict)          # name -> [lo, hi]
    directions: dict = Field(default_factory=dict)      # name -> "up" | "down"
    sparsity_weight: float = 0.0


class RecourseBody(BaseModel):
    x0: list
    t: float = 0.0
    method: str = "data-supported"
    constraints: ConstraintsBody = Field(default_factory=ConstraintsBody)
    config: dict = Field(default_factory=dict)          # generator overrides
    distance: str = "l2"


class CertifyBody(BaseModel):
    x: list
    t: float = 0.0


class SweepBody(BaseModel):
    x0: list
    epsilons: list
    t: float = 0.0
    method: str = "data-supported"
    constraints: ConstraintsBody = Field(default_factory=ConstraintsBody)


class Session:
    def __init__(self):
        self.dataset = None
        self.dataset_hash = None
        self.model = None
        self.model_hash = None
        self.ellipsoid = None
        self.ellipsoid_meta = None
        self.draft = None


def _hash_arrays(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def _resolve_index(session, name_or_index):
    specs = session.dataset.specs
    if isinstance(name_or_index, int):
        if not (0 <= name_or_index < len(specs)):
            raise ServiceError(400, "bad_request",
                               f"feature index {name_or_index} out of range")
        return name_or_index
    for j, s in enumerate(specs):
        if s.name == name_or_index:
            return j
    raise ServiceError(400, "bad_request", f"unknown feature {name_or_index!r}",
                       {"field": "constraints.locked"})


def _constraints_from_body(session, body):
    """Exactly the request's constraints. Schema-level value bounds and group
    structure always apply; schema immutable flags are client-side defaults
    (the UI pre-locks them in its draft), not silently merged here."""
    ds = session.dataset
    spec_cons = RecourseConstraints.from_specs(ds.specs)
    immutable = np.zeros(ds.d, dtype=bool)
    for entry in body.locked:
        immutable[_resolve_index(session, entry)] = True
    lower = spec_cons.lower.copy()
    upper = spec_cons.upper.copy()
    for name, pair in body.ranges.items():
        j = _resolve_index(session, name)
        lower[j], upper[j] = float(pair[0]), float(pair[1])
    directions = np.zeros(ds.d)
    for name, side in body.directions.items():
        j = _resolve_index(session, name)
        directions[j] = 1.0 if side == "up" else -1.0
    return RecourseConstraints(immutable=immutable, lower=lower, upper=upper,
                               directions=directions,
                               sparsity_weight=body.sparsity_weight,
                               groups=spec_cons.groups)


def _counterfactual_payload(ell, cf, x0):
    delta = cf.x_c - np.asarray(x0, dtype=float)
    if delta.shape[0] == ell.p - 1:
        delta = np.append(delta, 0.0)       # directions carry no bias component
    return {
        "x_c": [float(v) for v in cf.x_c],
        "x0": [float(v) for v in x0],
        "robust_logit": float(cf.robust_logit),
        "baseline_logit": float(cf.baseline_logit),
        "l2": float(cf.l2),
        "l0": int(cf.l0),
        "l_mix": (float(cf.l_mix) if cf.l_mix is not None else None),
        "steps_used": int(cf.steps_used),
        "source": cf.source,
        "epsilon": float(cf.epsilon),
        "flags": ([] if cf.robust else ["not_certified"]),
        "cos_angle_to_q1": cos_to_top_eigenvector(ell, delta),
    }


def create_app():
    app = FastAPI(title="robust-recourse service")
    sessions = {}
    lock = threading.Lock()
    pool = ThreadPoolExecutor(max_workers=4)

    def get_session(sid):
        with lock:
            if sid not in sessions:
                raise ServiceError(409, "no_session", f"unknown session {sid!r}")
            return sessions[sid]

    def need(session, *attrs):
        missing = [a for a in attrs if getattr(session, a) is None]
        if missing:
            raise ServiceError(409, "missing_artifacts",
                               f"session is missing {', '.join(missing)}")

    @app.exception_handler(ServiceError)
    async def _service_error(_req, exc):
        return JSONResponse(status_code=exc.status, content={
            "code": exc.code, "message": exc.message, "detail": exc.detail})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        first = exc.errors()[0]
        path = ".".join(str(p) for p in first.get("loc", ()) if p != "body")
        return JSONResponse(status_code=400, content={
            "code": "schema_violation", "message": first.get("msg", "invalid body"),
            "detail": {"field": path}})

    @app.post("/session")
    def create_session():
        sid = secrets.token_hex(8)
        with lock:
            sessions[sid] = Session()
        return {"session_id": sid}

    @app.post("/session/{sid}/dataset")
    def load_dataset(sid: str, body: DatasetBody):
        import io
        import pandas as pd
        session = get_session(sid)
        try:
            schema = [FeatureSpec.from_dict(d) for d in body.feature_schema]
            raw = load_frame(pd.read_csv(io.StringIO(body.csv_text)), schema,
                             label=body.label)
            ds = preprocess(raw, fit_rows=np.arange(raw.n),
                            balance=body.balance, seed=body.seed)
        except Exception as exc:
            raise ServiceError(400, "bad_dataset", str(exc))
        session.dataset = ds
        session.dataset_hash = _hash_arrays(ds.X, ds.y)
        session.model = None
        session.ellipsoid = None
        k = min(20, ds.n)
        return {"n": ds.n, "d": ds.d, "dataset_hash": session.dataset_hash,
                "class_counts": ds.class_counts(),
                # preprocessed rows for the explorer to pick instances from
                "samples": [[float(v) for v in row] for row in ds.X[:k]],
                "sample_labels": [int(v) for v in ds.y[:k]]}

    @app.get("/session/{sid}/schema")
    def get_schema(sid: str):
        session = get_session(sid)
        need(session, "dataset")
        return {"features": [s.to_dict() for s in session.dataset.specs],
                "dataset_hash": session.dataset_hash}

    @app.post("/session/{sid}/model/train")
    def train_model(sid: str, body: TrainBody):
        session = get_session(sid)
        need(session, "dataset")
        cfg = TrainConfig(learning_rate=body.learning_rate,
                          max_epochs=body.max_epochs,
                          early_stop_patience=body.early_stop_patience,
                          lam=body.lam, seed=body.seed,
                          hidden_sizes=tuple(body.hidden_sizes))
        model = train(session.dataset, cfg)
        model.threshold = body.threshold
        session.model = model
        session.model_hash = _hash_arrays(
            *( [model.theta] if not cfg.hidden_sizes
               else [w for w in model.weights] + [model.last.theta]))
        session.ellipsoid = None
        return {"model_hash": session.model_hash,
                "train_objective": model.train_objective,
                "grad_norm": model.grad_norm}

    @app.post("/session/{sid}/ellipsoid")
    def build_session_ellipsoid(sid: str, body: EllipsoidBody):
        session = get_session(sid)
        need(session, "dataset", "model")
        if (body.epsilon is None) == (body.epsilon_relative is None):
            raise ServiceError(400, "bad_request",
                               "pass exactly one of epsilon, epsilon_relative",
                               {"field": "epsilon"})
        eps = body.epsilon
        if eps is None:
            base_obj = regularized_objective(session.model, session.dataset)
            eps = epsilon_from_relative(base_obj, body.epsilon_relative)
        ell = build_ellipsoid(session.model, session.dataset, epsilon=eps,
                              alpha=body.alpha)
        session.ellipsoid = ell
        session.ellipsoid_meta = {
            "epsilon": eps,
            "model_hash": session.model_hash,
            "dataset_hash": session.dataset_hash,
        }
        return dict(session.ellipsoid_meta, alpha=ell.alpha)

    def check_consistency(session):
        meta = session.ellipsoid_meta
        if (meta["model_hash"] != session.model_hash
                or meta["dataset_hash"] != session.dataset_hash):
            raise ServiceError(409, "stale_ellipsoid",
                               "ellipsoid no longer matches the session artifacts")

    def run_generation(session, body, ell=None):
        ell = ell if ell is not None else session.ellipsoid
        cons = _constraints_from_body(session, body.constraints)
        x0 = np.asarray(body.x0, dtype=float)
        if x0.shape[0] != session.dataset.d:
            raise ServiceError(400, "bad_request",
                               f"x0 must have {session.dataset.d} entries",
                               {"field": "x0"})
        gen_cfg = ContinuousGenConfig(**body.config) if body.config \
            else ContinuousGenConfig()
        if body.method == "data-supported":
            return generate_data_supported(
                ell, session.model, session.dataset, x0, body.t,
                cons=cons, distance=body.distance)
        if body.method == "continuous":
            return generate_continuous(ell, session.model, x0,
                                       body.t, cfg=gen_cfg, cons=cons,
                                       specs=session.dataset.specs)
        if body.method == "sparse":
            return generate_sparse_continuous(
                ell, session.model, x0, body.t, cfg=gen_cfg,
                cons=cons, specs=session.dataset.specs)
        raise ServiceError(400, "bad_request", f"unknown method {body.method!r}",
                           {"field": "method"})

    @app.post("/session/{sid}/recourse")
    def recourse(sid: str, body: RecourseBody):
        session = get_session(sid)
        need(session, "dataset", "model", "ellipsoid")
        check_consistency(session)
        future = pool.submit(run_generation, session, body)
        try:
            cf = future.result(timeout=GENERATION_TIMEOUT_SECONDS)
        except FutureTimeout:
            raise ServiceError(504, "timeout", "generation timed out")
        except NoRobustCandidateError as exc:
            raise ServiceError(422, "no_robust_candidate", str(exc),
                               {"max_robust_logit": exc.max_robust_logit})
        return _counterfactual_payload(session.ellipsoid, cf, body.x0)

    @app.post("/session/{sid}/certify")
    def certify(sid: str, body: CertifyBody):
        session = get_session(sid)
        need(session, "dataset", "model", "ellipsoid")
        check_consistency(session)
        x = np.asarray(body.x, dtype=float)
        if x.shape[0] != session.dataset.d:
            raise ServiceError(400, "bad_request",
                               f"x must have {session.dataset.d} entries",
                               {"field": "x"})
        wc = worst_case_logit(session.ellipsoid, lift(session.model, x))
        return {"robust": bool(wc.robust_logit >= body.t),
                "robust_logit": float(wc.robust_logit)}

    @app.post("/session/{sid}/sweep")
    def sweep(sid: str, body: SweepBody):
        session = get_session(sid)
        need(session, "dataset", "model", "ellipsoid")
        check_consistency(session)
        eps_list = list(body.epsilons)
        if eps_list != sorted(eps_list):
            raise ServiceError(400, "bad_request",
                               "epsilons must be ascending", {"field": "epsilons"})
        results = []
        failures = 0
        prev_l2 = -1.0
        for eps in eps_list:
            ell = build_ellipsoid(session.model, session.dataset, epsilon=eps)
            try:
                req = RecourseBody(x0=body.x0, t=body.t, method=body.method,
                                   constraints=body.constraints)
                cf = run_generation(session, req, ell=ell)
                payload = _counterfactual_payload(ell, cf, body.x0)
                if payload["l2"] < prev_l2 - 1e-9:
                    payload.setdefault("anomalies", []).append(
                        "l2 decreased along ascending epsilon")
                prev_l2 = payload["l2"]
                results.append({"epsilon": eps, "status": "ok", **payload})
            except NoRobustCandidateError as exc:
                failures += 1
                results.append({"epsilon": eps, "status": "no_robust_candidate",
                                "max_robust_logit": exc.max_robust_logit})
        if failures == len(eps_list):
            raise ServiceError(422, "no_robust_candidate",
                               "no epsilon in the sweep admitted recourse",
                               {"results": results})
        return {"results": results}

    return app


def main(argv=None):
    import argparse
    import uvicorn
    parser = argparse.ArgumentParser(prog="robust-recourse-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8321)
    args = parser.parse_args(argv)
    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
