import type {
  CandidatePolylineDto,
  PredictRequest,
  PredictResponse,
  ScenarioDetail,
  ScenarioSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly kind: string,
    detail: string,
  ) {
    super(`${kind}: ${detail}`);
  }
}

async function getJson<T>(url: string): Promise<T> {
  const res = await fetch(url);
  if (!res.ok) {
    const body = await res.json().catch(() => ({ error: "HTTPError", detail: res.statusText }));
    throw new ApiError(res.status, body.error ?? "HTTPError", body.detail ?? "");
  }
  return res.json() as Promise<T>;
}

/** Read-only client for the forecasting service, plus a latest-wins predict
 * queue: rapid slider edits fire many POSTs and only the newest response may
 * reach the caller. */
export class ApiClient {
  private predictSeq = 0;

  constructor(private readonly base: string = "") {}

  listScenarios(): Promise<ScenarioSummary[]> {
    return getJson(`${this.base}/api/scenarios`);
  }

  getScenario(id: string): Promise<ScenarioDetail> {
    return getJson(`${this.base}/api/scenarios/${encodeURIComponent(id)}`);
  }

  getPolylines(id: string, k: number): Promise<CandidatePolylineDto[]> {
    return getJson(`${this.base}/api/scenarios/${encodeURIComponent(id)}/polylines?k=${k}`);
  }

  /** Resolves with the response only if no newer predict() was issued
   * meanwhile; stale responses resolve to null. */
  async predict(req: PredictRequest): Promise<PredictResponse | null> {
    const seq = ++this.predictSeq;
    const res = await fetch(`${this.base}/api/predict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!res.ok) {
      const body = await res.json().catch(() => ({ error: "HTTPError", detail: res.statusText }));
      throw new ApiError(res.status, body.error ?? "HTTPError", body.detail ?? "");
    }
    const parsed = (await res.json()) as PredictResponse;
    return seq === this.predictSeq ? parsed : null;
  }
}
