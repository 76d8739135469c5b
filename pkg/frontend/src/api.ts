import type { ChatResponse, HealthResponse } from "./types.js";

/** HTTP error carrying the status so the UI can distinguish 4xx/5xx. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/**
 * Resolve the service base URL at runtime, so the same build can be served
 * behind any cluster portal: an injected global wins, then a stored value,
 * then same-origin.
 */
export function resolveBaseUrl(win: Window = window): string {
  const injected = (win as unknown as Record<string, unknown>)["__HPCQA_BASE_URL__"];
  if (typeof injected === "string" && injected) return injected.replace(/\/$/, "");
  try {
    const stored = win.localStorage.getItem("hpcqa.baseUrl");
    if (stored) return stored.replace(/\/$/, "");
  } catch {
    // storage can be unavailable (sandboxed iframe); fall through
  }
  return "";
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the three documented endpoints. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = "";
      try {
        const body = (await response.json()) as { error?: string };
        detail = body.error ?? "";
      } catch {
        // non-JSON error body; status alone is enough
      }
      throw new ApiError(response.status, detail || `HTTP ${response.status}`);
    }
    return (await response.json()) as T;
  }

  chat(message: string, sessionId?: string): Promise<ChatResponse> {
    return this.request<ChatResponse>("/api/chat", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(sessionId ? { session_id: sessionId, message } : { message }),
    });
  }

  health(): Promise<HealthResponse> {
    return this.request<HealthResponse>("/api/health");
  }

  config(): Promise<Record<string, unknown>> {
    return this.request<Record<string, unknown>>("/api/config");
  }
}
