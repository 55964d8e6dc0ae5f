/**
 * Thin REST/SSE client. Every verdict the console displays comes from these
 * calls; nothing is recomputed client-side.
 */

import type {
  Issue,
  Page,
  Task,
  ValidationReport,
  ViewPayload,
} from "./types.js";

export interface ApiError {
  code: string;
  message: string;
  detail: unknown;
}

export class RequestFailed extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ApiError,
  ) {
    super(`${body.code}: ${body.message}`);
  }
}

export interface SseEvent {
  kind: string;
  data: Record<string, unknown>;
}

/** Parse a complete text/event-stream body into (kind, data) frames. */
export function parseSseStream(text: string): SseEvent[] {
  const frames: SseEvent[] = [];
  for (const block of text.split("\n\n")) {
    if (!block.trim()) continue;
    let kind = "";
    let data = "";
    for (const line of block.split("\n")) {
      if (line.startsWith("event: ")) kind = line.slice(7);
      else if (line.startsWith("data: ")) data = line.slice(6);
    }
    if (kind) frames.push({ kind, data: JSON.parse(data || "{}") });
  }
  return frames;
}

export class ConsoleClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async req<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
      },
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const payload = await response.json();
    if (!response.ok) {
      throw new RequestFailed(response.status, payload as ApiError);
    }
    return payload as T;
  }

  getWorkflow(id: string): Promise<{ id: string; revision: number; yaml: string }> {
    return this.req("GET", `/workflows/${id}`);
  }

  saveRevision(id: string, yaml: string, draft = false) {
    return this.req<{ id: string; revision: number }>(
      "POST",
      `/workflows/${id}/revisions`,
      { yaml, draft },
    );
  }

  validate(id: string, yaml: string): Promise<ValidationReport> {
    return this.req("POST", `/workflows/${id}/validate`, { yaml });
  }

  insertAdapter(
    id: string,
    yaml: string,
    edge: [string, string, string, string],
    mapping: Record<string, string>,
  ): Promise<{ yaml: string }> {
    return this.req("POST", `/workflows/${id}/adapter`, { yaml, edge, mapping });
  }

  recompute(executionId: string, changed: Record<string, object>) {
    return this.req<{ execution_id: string }>(
      "POST",
      `/executions/${executionId}/recompute`,
      { changed, wait: true },
    );
  }

  provenanceView(zoom: string, start?: number, end?: number): Promise<ViewPayload> {
    const params = new URLSearchParams({ zoom });
    if (start !== undefined) params.set("start", String(start));
    if (end !== undefined) params.set("end", String(end));
    return this.req("GET", `/provenance/view?${params}`);
  }

  listIssues(): Promise<Page<Issue>> {
    return this.req("GET", "/issues");
  }

  listTasks(): Promise<Page<Task>> {
    return this.req("GET", "/tasks");
  }

  /** Feedback sidebar: file a report, optionally with the preview screenshot. */
  fileFeedback(text: string, screenshot: string | null): Promise<Issue> {
    return this.req("POST", "/issues", {
      title: text,
      feedback: true,
      source_view: "preview",
      screenshot: screenshot ?? undefined,
    });
  }

  intervene(taskId: string, action: string, text = ""): Promise<Task> {
    return this.req("POST", `/tasks/${taskId}/intervene`, { action, text });
  }

  previewStatus() {
    return this.req<{
      url: string;
      port: number;
      running: boolean;
      restarts: number;
    }>("GET", "/preview");
  }
}
