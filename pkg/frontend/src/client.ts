// HTTP client for the strategy-server session protocol. Configured by
// endpoint URL only; every method returns the parsed envelope payload and
// carries the server's lap number through to the caller.

import {
  ActionShort,
  Envelope,
  ErrorPayload,
  ExplanationPayload,
  PROTOCOL_VERSION,
  RecommendationPayload,
  SessionStatePayload,
  WhatifPayload,
} from "./protocol";

export class ServerRejection extends Error {
  constructor(
    public readonly reason: string,
    public readonly status: number,
    public readonly stale: boolean
  ) {
    super(reason);
  }
}

async function parse<P>(res: Response): Promise<Envelope<P>> {
  const body = (await res.json()) as Envelope<P>;
  if (body.protocol_version !== PROTOCOL_VERSION) {
    throw new Error(`protocol version mismatch: ${body.protocol_version}`);
  }
  if (!res.ok || body.type === "Error") {
    const reason = (body.payload as unknown as ErrorPayload).reason ?? "unknown";
    throw new ServerRejection(reason, res.status, res.status === 409);
  }
  return body;
}

export interface CreateSessionOptions {
  track?: string;
  seed?: number;
  total_laps?: number;
  n_cars?: number;
  controlled_delta?: number;
  mode?: string;
}

export class SessionClient {
  sessionId: string | null = null;

  constructor(private readonly endpoint: string) {}

  private url(path: string): string {
    return this.endpoint.replace(/\/$/, "") + path;
  }

  private async post<P>(path: string, body: unknown): Promise<Envelope<P>> {
    const res = await fetch(this.url(path), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return parse<P>(res);
  }

  async create(options: CreateSessionOptions = {}): Promise<Envelope<SessionStatePayload>> {
    const env = await this.post<SessionStatePayload>("/session", options);
    this.sessionId = env.session_id;
    return env;
  }

  private get sid(): string {
    if (this.sessionId === null) throw new Error("no live session");
    return this.sessionId;
  }

  async state(): Promise<Envelope<SessionStatePayload>> {
    return parse(await fetch(this.url(`/session/${this.sid}/state`)));
  }

  async recommendation(): Promise<Envelope<RecommendationPayload>> {
    return parse(await fetch(this.url(`/session/${this.sid}/recommendation`)));
  }

  async advance(lap: number, override?: ActionShort): Promise<Envelope<SessionStatePayload>> {
    return this.post(`/session/${this.sid}/advance`, {
      lap,
      override: override ?? null,
    });
  }

  async inject(lap: number, kind: "full" | "virtual" | "clear", duration = 3) {
    return this.post<SessionStatePayload>(`/session/${this.sid}/inject`, {
      lap,
      kind,
      duration,
    });
  }

  async whatif(lap: number, action: ActionShort, n = 20, seed = 0) {
    return this.post<WhatifPayload>(`/session/${this.sid}/whatif`, {
      lap,
      action,
      n,
      seed,
    });
  }

  async explain(
    lap: number,
    method: "attribution" | "path" | "counterfactual",
    target?: ActionShort,
    budget = 2000
  ): Promise<Envelope<ExplanationPayload>> {
    return this.post(`/session/${this.sid}/explain`, {
      lap,
      method,
      target: target ?? null,
      budget,
    });
  }

  async end(): Promise<void> {
    const res = await fetch(this.url(`/session/${this.sid}`), { method: "DELETE" });
    await parse(res);
    this.sessionId = null;
  }
}
