/** Thin typed wrapper over the controller's HTTP API.
 *
 * Every console action goes through this client; nothing is decided
 * locally.  The fetch implementation is injectable so the client can be
 * exercised against a scripted transport in tests.
 */

import type {
  EventBatch,
  OnboardingList,
  OnboardingResult,
  PolicyRule,
  PolicySet,
  RoamResult,
  SessionView,
  VersionStamp,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** A non-2xx API response, carrying the server's error envelope. */
export class ApiError extends Error {
  override readonly name = "ApiError";

  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export interface ClientOptions {
  /** Actor recorded in the controller's audit trail for every mutation. */
  actor?: string;
  fetchImpl?: FetchLike;
}

export class ConsoleClient {
  readonly baseUrl: string;
  readonly actor: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, options: ClientOptions = {}) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.actor = options.actor ?? "console";
    this.fetchImpl = options.fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const text = await response.text();
    let data: unknown = null;
    if (text) {
      try {
        data = JSON.parse(text);
      } catch {
        data = null;
      }
    }
    if (!response.ok) {
      const envelope = (data ?? {}) as { code?: string; message?: string };
      throw new ApiError(
        response.status,
        envelope.code ?? "http_error",
        envelope.message ?? `HTTP ${response.status}`,
      );
    }
    return data as T;
  }

  getPolicies(): Promise<PolicySet> {
    return this.request("GET", "/policies");
  }

  /** Replace the full rule set; `version` makes the write conditional. */
  replacePolicies(
    rules: PolicyRule[],
    options: { version?: number; actor?: string } = {},
  ): Promise<VersionStamp> {
    const body: Record<string, unknown> = { rules, actor: options.actor ?? this.actor };
    if (options.version !== undefined) {
      body.version = options.version;
    }
    return this.request("PUT", "/policies", body);
  }

  addRule(rule: PolicyRule, actor?: string): Promise<VersionStamp> {
    return this.request("POST", "/policies/rules", { rule, actor: actor ?? this.actor });
  }

  removeRule(ruleId: string): Promise<VersionStamp> {
    return this.request("DELETE", `/policies/rules/${encodeURIComponent(ruleId)}`);
  }

  getSessions(): Promise<SessionView> {
    return this.request("GET", "/sessions");
  }

  getOnboarding(): Promise<OnboardingList> {
    return this.request("GET", "/onboarding");
  }

  resolveOnboarding(
    sessionId: number,
    decision: "approve" | "deny",
    actor?: string,
  ): Promise<OnboardingResult> {
    return this.request("POST", `/onboarding/${sessionId}/${decision}`, {
      actor: actor ?? this.actor,
    });
  }

  triggerRoam(imsi: string, toDomain: string): Promise<RoamResult> {
    return this.request("POST", "/actions/roam", { imsi, to_domain: toDomain });
  }

  /** Long-poll the event feed from record index `since`. */
  pollEvents(since: number, timeoutMs = 0): Promise<EventBatch> {
    return this.request("GET", `/events?since=${since}&timeout_ms=${timeoutMs}`);
  }
}
