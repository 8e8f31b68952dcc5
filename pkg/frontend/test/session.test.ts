// Scripted end-to-end session against the real Python service: lock a
// feature, generate, sweep, select a sweep point, and drive the no-recourse
// path. This is the UI contract test: drafts built from GET /schema are
// accepted by the server, and the view models carry the server's JSON
// byte-exactly.

import { spawn, type ChildProcess } from "node:child_process";
import { readFileSync } from "node:fs";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, Client } from "../src/api.js";
import type { RecourseResponse } from "../src/api.js";
import {
  draftFromSchema, recourseRequest, serializeConstraints, validateDraft,
} from "../src/draft.js";
import {
  buildRecourseView, buildSweepModel, noRecourseBanner,
} from "../src/view.js";

const PORT = 8765 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let client: Client;
let sid: string;
let featureNames: string[] = [];
let samples: number[][] = [];
let deniedX0: number[] | null = null;

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 120; i += 1) {
    try {
      const res = await fetch(`${BASE}/session`, { method: "POST" });
      if (res.ok) {
        await res.text();
        return;
      }
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 500));
  }
  throw new Error("recourse service did not come up");
}

beforeAll(async () => {
  server = spawn("python3", ["-m", "robust_recourse.service",
                             "--port", String(PORT)],
                 { stdio: "ignore" });
  await waitForServer();

  client = new Client(BASE);
  sid = await client.createSession();
  const csv = readFileSync(join(__dirname, "fixtures", "credit.csv"), "utf8");
  const schema = JSON.parse(
    readFileSync(join(__dirname, "fixtures", "credit_schema.json"), "utf8"));
  const ds = await client.loadDataset(sid, {
    csv_text: csv, feature_schema: schema, balance: true, seed: 0 });
  samples = ds.data.samples;
  await client.trainModel(sid, { lam: 0.001 });
  await client.buildEllipsoid(sid, { epsilon_relative: 0.1 });

  const schemaResp = await client.getSchema(sid);
  featureNames = schemaResp.data.features.map((f) => f.name);
  for (const row of samples) {
    const cert = await client.certify(sid, { x: row, t: 0 });
    if (!cert.data.robust) {
      deniedX0 = row;
      break;
    }
  }
});

afterAll(() => {
  server?.kill();
});

describe("draft contract against GET /schema", () => {
  it("round-trips: schema -> draft -> validation -> accepted request", async () => {
    const schemaResp = await client.getSchema(sid);
    const draft = draftFromSchema(schemaResp.data.features);
    expect(validateDraft(draft, schemaResp.data.features)).toEqual([]);

    // the serialized draft is a request body the server accepts
    expect(deniedX0).not.toBeNull();
    const body = recourseRequest(draft, deniedX0!, 0);
    body.method = "continuous";       // immutables locked -> gradient masking
    const r = await client.recourse(sid, body);
    expect(r.status).toBe(200);
  });
});

describe("scripted session: lock -> generate -> sweep -> select", () => {
  it("locks a feature and the answer leaves it untouched", async () => {
    const schemaResp = await client.getSchema(sid);
    const draft = draftFromSchema(schemaResp.data.features);
    draft.features["duration_months"].locked = true;
    draft.method = "continuous";

    const body = recourseRequest(draft, deniedX0!, 0);
    const r = await client.recourse(sid, body);
    const view = buildRecourseView(r.raw, r.data, featureNames, draft);

    // byte-exact: the view model carries the exact wire bytes, and the
    // payload it would resend serializes identically to what was parsed
    expect(view.raw).toBe(r.raw);
    expect(JSON.stringify(view.response.x_c))
      .toBe(JSON.stringify(JSON.parse(r.raw).x_c));

    const j = featureNames.indexOf("duration_months");
    expect(view.rows[j].delta).toBe(0);
    expect(view.rows[j].locked).toBe(true);
    expect(view.certified).toBe(true);
  });

  it("re-requesting with the view's x_c is byte-identical JSON", async () => {
    const draft = draftFromSchema((await client.getSchema(sid)).data.features);
    draft.method = "data-supported";
    // the user relaxes the continuous lock: exact-equality matching on a
    // standardized continuous value rules out nearly every training row
    draft.features["age"].locked = false;
    const r = await client.recourse(sid, recourseRequest(draft, deniedX0!, 0));
    const view = buildRecourseView(r.raw, r.data, featureNames, draft);

    // round-trip: serialize the untouched x_c out of the view model
    const resent = JSON.stringify(view.response.x_c);
    expect(resent).toBe(JSON.stringify(JSON.parse(r.raw).x_c));

    // and the server certifies the resent point
    const cert = await client.certify(sid, { x: view.response.x_c, t: 0 });
    expect(cert.data.robust).toBe(true);
    expect(cert.data.robust_logit).toBeCloseTo(view.response.robust_logit, 10);
  });

  it("sweeps epsilon, keeps monotone distances, and loads a selected point",
     async () => {
    const draft = draftFromSchema((await client.getSchema(sid)).data.features);
    const r = await client.sweep(sid, {
      x0: deniedX0!, epsilons: [0.005, 0.01, 0.02], t: 0,
      method: "data-supported",
      constraints: serializeConstraints(draft),
    });
    const model = buildSweepModel(r.data.results);
    expect(model.ok.length).toBeGreaterThan(0);
    expect(model.monotone).toBe(true);

    // clicking a point feeds its full record back into the view
    const pick = model.ok[model.ok.length - 1];
    const cell = pick.cell as unknown as RecourseResponse;
    const view = buildRecourseView(JSON.stringify(pick.cell), cell,
                                   featureNames, draft);
    expect(view.response.x_c).toHaveLength(featureNames.length);
    expect(view.badges.l2).toBe(pick.l2);
  });

  it("renders the 422 path with the server's max-robust-logit hint", async () => {
    const schemaResp = await client.getSchema(sid);
    const draft = draftFromSchema(schemaResp.data.features);
    for (const name of featureNames) draft.features[name].locked = true;

    let banner = "";
    try {
      await client.recourse(sid, recourseRequest(draft, deniedX0!, 0));
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      const apiErr = err as ApiError;
      expect(apiErr.status).toBe(422);
      banner = noRecourseBanner(apiErr.envelope);
    }
    expect(banner).toContain("raise ε or relax constraints");
    expect(banner).toMatch(/best worst-case score found: -?\d/);
  });
});
