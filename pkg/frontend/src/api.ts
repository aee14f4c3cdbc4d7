/**
 * Typed client for the inpainting service's /v1 endpoints.
 *
 * fetch is injectable for tests and non-browser runtimes. Job polling
 * uses a fixed interval with multiplicative backoff, capped; no
 * websockets needed.
 */

export interface SuggestionItem {
  color: string;
  mask_index: number;
  text: string;
  status: "ok" | "missing" | "malformed";
}

export interface SuggestResponse {
  seed: number;
  config_hash: string;
  color_assignment: { mask_index: number; color: string }[];
  samples: SuggestionItem[][];
}

export interface JobRecord {
  id: string;
  kind: string;
  status: "queued" | "running" | "done" | "failed";
  manifest: Record<string, unknown>;
  result_uri: string | null;
  error: string | null;
}

export interface EchoResponse {
  png: string;
  width: number;
  height: number;
  area_px: number;
  sha256: string;
}

export interface MaskPayload {
  png?: string;
  bbox?: [number, number, number, number];
}

export interface SuggestRequest {
  image: string;
  masks: MaskPayload[];
  temperature: number;
  num_samples: number;
  seed: number;
}

export interface InpaintRequest {
  image: string;
  masks: MaskPayload[];
  prompts: string[];
  mode: "rca" | "concat" | "repeated";
  steps: number;
  guidance_weight: number;
  seed: number;
  composite: boolean;
  request_id?: string;
}

export interface PollOptions {
  intervalMs?: number;
  backoff?: number;
  maxIntervalMs?: number;
  timeoutMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: unknown) {
    super(`service error ${status}`);
  }
}

const defaultSleep = (ms: number) => new Promise<void>((res) => setTimeout(res, ms));

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
    private apiKey?: string,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.apiKey) headers["X-API-Key"] = this.apiKey;
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail: unknown = null;
      try {
        detail = await response.json();
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/healthz");
  }

  suggest(request: SuggestRequest): Promise<SuggestResponse> {
    return this.request("POST", "/v1/suggest", request);
  }

  inpaint(request: InpaintRequest): Promise<JobRecord> {
    return this.request("POST", "/v1/inpaint", request);
  }

  getJob(id: string): Promise<JobRecord> {
    return this.request("GET", `/v1/jobs/${id}`);
  }

  echoMask(pngBase64: string): Promise<EchoResponse> {
    return this.request("POST", "/v1/masks/echo", { png: pngBase64 });
  }

  async fetchResultPng(record: JobRecord): Promise<Uint8Array> {
    if (!record.result_uri) throw new Error("job has no result yet");
    const headers: Record<string, string> = {};
    if (this.apiKey) headers["X-API-Key"] = this.apiKey;
    const response = await this.fetchFn(`${this.baseUrl}${record.result_uri}`, { headers });
    if (!response.ok) throw new ApiError(response.status, null);
    return new Uint8Array(await response.arrayBuffer());
  }

  /** Poll until the job leaves the queue; resolves on done, rejects on failed. */
  async pollUntilDone(id: string, options: PollOptions = {}): Promise<JobRecord> {
    const interval = options.intervalMs ?? 250;
    const backoff = options.backoff ?? 1.5;
    const maxInterval = options.maxIntervalMs ?? 2000;
    const timeout = options.timeoutMs ?? 120_000;
    const sleep = options.sleep ?? defaultSleep;
    let wait = interval;
    const deadline = Date.now() + timeout;
    for (;;) {
      const record = await this.getJob(id);
      if (record.status === "done") return record;
      if (record.status === "failed") {
        throw new Error(`job ${id} failed: ${record.error ?? "unknown"}`);
      }
      if (Date.now() > deadline) throw new Error(`job ${id} timed out`);
      await sleep(wait);
      wait = Math.min(wait * backoff, maxInterval);
    }
  }
}
