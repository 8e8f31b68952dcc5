// Typed client for the recourse service. Every call keeps the server's raw
// response bytes alongside the parsed body so view models can prove they
// never mutate numeric payloads.

export interface FeatureSpec {
  name: string;
  kind: "continuous" | "binary" | "categorical";
  immutable: boolean;
  lower: number | null;
  upper: number | null;
  change_cost: number;
  group: string | null;
  group_index: number | null;
  fill: number | null;
}

export interface SchemaResponse {
  features: FeatureSpec[];
  dataset_hash: string;
}

export interface RecourseResponse {
  x_c: number[];
  x0: number[];
  robust_logit: number;
  baseline_logit: number;
  l2: number;
  l0: number;
  l_mix: number | null;
  steps_used: number;
  source: string;
  epsilon: number;
  flags: string[];
  cos_angle_to_q1: number;
}

export interface SweepCell {
  epsilon: number;
  status: string;
  l2?: number;
  x_c?: number[];
  robust_logit?: number;
  max_robust_logit?: number | null;
  [key: string]: unknown;
}

export interface SweepResponse {
  results: SweepCell[];
}

export interface CertifyResponse {
  robust: boolean;
  robust_logit: number;
}

export interface ErrorEnvelope {
  code: string;
  message: string;
  detail: Record<string, unknown>;
}

export interface ApiResult<T> {
  status: number;
  raw: string;     // exact bytes off the wire
  data: T;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public envelope: ErrorEnvelope,
    public raw: string,
  ) {
    super(`${envelope.code}: ${envelope.message}`);
  }
}

export interface ConstraintsBody {
  locked: (string | number)[];
  ranges: Record<string, [number, number]>;
  directions: Record<string, "up" | "down">;
  sparsity_weight: number;
}

async function request<T>(url: string, init?: RequestInit): Promise<ApiResult<T>> {
  const res = await fetch(url, init);
  const raw = await res.text();
  if (!res.ok) {
    throw new ApiError(res.status, JSON.parse(raw) as ErrorEnvelope, raw);
  }
  return { status: res.status, raw, data: JSON.parse(raw) as T };
}

function post<T>(url: string, body: unknown, signal?: AbortSignal): Promise<ApiResult<T>> {
  return request<T>(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
    signal,
  });
}

export class Client {
  constructor(private base: string) {}

  async createSession(): Promise<string> {
    const r = await post<{ session_id: string }>(`${this.base}/session`, {});
    return r.data.session_id;
  }

  loadDataset(sid: string, body: {
    csv_text: string;
    feature_schema: unknown[];
    label?: string;
    balance?: boolean;
    seed?: number;
  }) {
    return post<{
      n: number;
      d: number;
      dataset_hash: string;
      samples: number[][];
      sample_labels: number[];
    }>(`${this.base}/session/${sid}/dataset`, body);
  }

  trainModel(sid: string, body: Record<string, unknown> = {}) {
    return post<{ model_hash: string; train_objective: number }>(
      `${this.base}/session/${sid}/model/train`, body);
  }

  buildEllipsoid(sid: string, body: { epsilon?: number; epsilon_relative?: number }) {
    return post<{ epsilon: number }>(`${this.base}/session/${sid}/ellipsoid`, body);
  }

  getSchema(sid: string) {
    return request<SchemaResponse>(`${this.base}/session/${sid}/schema`);
  }

  recourse(sid: string, body: {
    x0: number[];
    t?: number;
    method?: string;
    constraints?: ConstraintsBody;
    config?: Record<string, unknown>;
  }, signal?: AbortSignal) {
    return post<RecourseResponse>(`${this.base}/session/${sid}/recourse`, body,
      signal);
  }

  certify(sid: string, body: { x: number[]; t?: number }) {
    return post<CertifyResponse>(`${this.base}/session/${sid}/certify`, body);
  }

  sweep(sid: string, body: {
    x0: number[];
    epsilons: number[];
    t?: number;
    method?: string;
    constraints?: ConstraintsBody;
  }, signal?: AbortSignal) {
    return post<SweepResponse>(`${this.base}/session/${sid}/sweep`, body, signal);
  }
}
