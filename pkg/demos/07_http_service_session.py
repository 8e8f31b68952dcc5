# The JSON/HTTP facade, driven as a client
# ------------------------------------------
# The service holds sessions of (dataset, model, ellipsoid) artifacts and
# exposes recourse, certification, and epsilon sweeps. A real deployment runs
#
#   python -m robust_recourse.service --port 8321
#
# and the browser UI (frontend/) talks to it; here we drive the same app
# in-process to keep the demo self-contained.

import json

import numpy as np
from fastapi.testclient import TestClient

from robust_recourse.data import schema_to_json
from robust_recourse.datasets import synthetic_credit
from robust_recourse.service import create_app

client = TestClient(create_app())

sid = client.post("/session").json()["session_id"]
print(f"session {sid}")

df, schema = synthetic_credit(n=300, seed=5)
r = client.post(f"/session/{sid}/dataset", json={
    "csv_text": df.to_csv(index=False),
    "feature_schema": json.loads(schema_to_json(schema)),
    "balance": True, "seed": 0})
print(f"dataset: {r.json()}")

print(f"train:   {client.post(f'/session/{sid}/model/train', json={'lam': 1e-3}).json()}")
print(f"ellipsoid: {client.post(f'/session/{sid}/ellipsoid', json={'epsilon_relative': 0.1}).json()}")

features = client.get(f"/session/{sid}/schema").json()["features"]
d = len(features)
locked_defaults = [f["name"] for f in features if f["immutable"]]
print(f"schema: {d} features, immutable defaults {locked_defaults}")

# find a denied probe, then ask for recourse with the default locks
x0 = None
for v in np.linspace(-2, 0, 9):
    probe = [float(v)] * d
    if not client.post(f"/session/{sid}/certify",
                       json={"x": probe, "t": 0.0}).json()["robust"]:
        x0 = probe
        break

r = client.post(f"/session/{sid}/recourse", json={
    "x0": x0, "t": 0.0, "method": "continuous",
    "constraints": {"locked": locked_defaults}})
body = r.json()
print(f"\nrecourse: l2={body['l2']:.3f} steps={body['steps_used']} "
      f"flags={body['flags']} cos-to-top-eigenvector={body['cos_angle_to_q1']:.3f}")

# the answer certifies back through the wire
cert = client.post(f"/session/{sid}/certify",
                   json={"x": body["x_c"], "t": 0.0}).json()
print(f"round-trip certify: {cert}")

# sweep the tolerance: distance is non-decreasing, failures are per-element
r = client.post(f"/session/{sid}/sweep", json={
    "x0": x0, "epsilons": [0.005, 0.01, 0.02], "t": 0.0,
    "method": "data-supported"})
print("\nepsilon sweep:")
for cell in r.json()["results"]:
    if cell["status"] == "ok":
        print(f"  eps={cell['epsilon']:<6} l2={cell['l2']:.3f}")
    else:
        print(f"  eps={cell['epsilon']:<6} {cell['status']} "
              f"(best score {cell['max_robust_logit']:.3f})")

# over-constrained requests surface the server's hint for the UI banner
r = client.post(f"/session/{sid}/recourse", json={
    "x0": x0, "t": 0.0, "method": "data-supported",
    "constraints": {"locked": [f["name"] for f in features]}})
print(f"\nall features locked -> HTTP {r.status_code}: {r.json()['message']}")
