// The constraint draft a user edits before each generation request. It
// mirrors the service's constraint schema exactly and is validated
// client-side against the feature list fetched from GET /schema before
// anything is sent.

import type { ConstraintsBody, FeatureSpec } from "./api.js";

export interface FeatureDraft {
  locked: boolean;
  lo: number | null;
  hi: number | null;
  direction: "up" | "down" | null;
}

export interface ConstraintDraft {
  features: Record<string, FeatureDraft>;
  epsilon: number;           // relative to the trained objective
  sparsity: boolean;
  sparsityWeight: number;
  method: "data-supported" | "continuous" | "sparse";
}

export function draftFromSchema(features: FeatureSpec[]): ConstraintDraft {
  const drafts: Record<string, FeatureDraft> = {};
  for (const f of features) {
    drafts[f.name] = {
      locked: f.immutable,     // schema immutables arrive pre-locked
      lo: null,
      hi: null,
      direction: null,
    };
  }
  return {
    features: drafts,
    epsilon: 0.1,
    sparsity: false,
    sparsityWeight: 1.0,
    method: "data-supported",
  };
}

export function validateDraft(
  draft: ConstraintDraft,
  features: FeatureSpec[],
): string[] {
  const errors: string[] = [];
  const known = new Set(features.map((f) => f.name));
  for (const [name, fd] of Object.entries(draft.features)) {
    if (!known.has(name)) {
      errors.push(`unknown feature ${name}`);
      continue;
    }
    if (fd.lo !== null && fd.hi !== null && fd.lo > fd.hi) {
      errors.push(`${name}: lower bound exceeds upper bound`);
    }
    if (fd.locked && (fd.lo !== null || fd.hi !== null || fd.direction !== null)) {
      errors.push(`${name}: a locked feature cannot also carry ranges or directions`);
    }
  }
  for (const f of features) {
    if (!(f.name in draft.features)) {
      errors.push(`draft is missing feature ${f.name}`);
    }
  }
  if (!(draft.epsilon > 0)) {
    errors.push("epsilon must be > 0");
  }
  if (draft.sparsity && !(draft.sparsityWeight >= 0)) {
    errors.push("sparsity weight must be >= 0");
  }
  if (!["data-supported", "continuous", "sparse"].includes(draft.method)) {
    errors.push(`unknown method ${draft.method}`);
  }
  return errors;
}

export function serializeConstraints(draft: ConstraintDraft): ConstraintsBody {
  const locked: string[] = [];
  const ranges: Record<string, [number, number]> = {};
  const directions: Record<string, "up" | "down"> = {};
  for (const [name, fd] of Object.entries(draft.features)) {
    if (fd.locked) locked.push(name);
    if (fd.lo !== null || fd.hi !== null) {
      ranges[name] = [
        fd.lo === null ? -1e308 : fd.lo,
        fd.hi === null ? 1e308 : fd.hi,
      ];
    }
    if (fd.direction !== null) directions[name] = fd.direction;
  }
  return {
    locked,
    ranges,
    directions,
    sparsity_weight: draft.sparsity ? draft.sparsityWeight : 0.0,
  };
}

export function recourseRequest(
  draft: ConstraintDraft,
  x0: number[],
  t = 0.0,
): {
  x0: number[];
  t: number;
  method: string;
  constraints: ConstraintsBody;
} {
  return {
    x0,
    t,
    method: draft.method === "sparse" && !draft.sparsity ? "sparse" : draft.method,
    constraints: serializeConstraints(draft),
  };
}
