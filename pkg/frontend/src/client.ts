import {
  HealthResponse,
  HealthResponseSchema,
  RestoreRequestSchema,
  RestoreResponse,
  RestoreResponseSchema,
  TasksResponse,
  TasksResponseSchema,
} from "./schema.js";

export class ServiceError extends Error {
  constructor(
    message: string,
    readonly status?: number,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

/** The slice of the client the session logic needs. */
export interface RestoreBackend {
  restore(imageB64: string, instruction: string): Promise<RestoreResponse>;
}

type FetchLike = typeof fetch;

/** Thin validated client for the restoration service. */
export class ServiceClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let res: Response;
    try {
      res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ServiceError(`cannot reach service: ${String(err)}`);
    }
    const body = await res.json().catch(() => undefined);
    if (!res.ok) {
      const detail =
        body && typeof body === "object" && "detail" in body
          ? String((body as { detail: unknown }).detail)
          : res.statusText;
      throw new ServiceError(detail, res.status);
    }
    return body;
  }

  async health(): Promise<HealthResponse> {
    return HealthResponseSchema.parse(await this.request("/health"));
  }

  async tasks(): Promise<TasksResponse> {
    return TasksResponseSchema.parse(await this.request("/tasks"));
  }

  /** Restore `imageB64` following one instruction (validated both ways). */
  async restore(imageB64: string, instruction: string): Promise<RestoreResponse> {
    const payload = RestoreRequestSchema.parse({
      image_b64: imageB64,
      instruction,
      return_intent: true,
    });
    const raw = await this.request("/restore", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    return RestoreResponseSchema.parse(raw);
  }
}
