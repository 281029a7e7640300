/** Payload shapes of the federation controller's HTTP API (v1). */

/** Subject attribute constraints of a policy rule; "*" or absence means any. */
export interface RuleSubject {
  roles?: string[] | "*";
  device_types?: string[] | "*";
  min_posture?: number;
  domains?: string[] | "*";
  require_vpn?: boolean;
}

export type RuleAction = "attach" | "access" | "internet" | "manage";
export type RuleEffect = "permit" | "deny" | "manual";
export type RuleScope = "local" | "federated" | "any";

export interface PolicyRule {
  rule_id: string;
  priority: number;
  subject?: RuleSubject;
  action: RuleAction;
  resource: string;
  effect: RuleEffect;
  scope?: RuleScope;
}

/** GET /policies */
export interface PolicySet {
  version: number;
  rules: PolicyRule[];
}

/** PUT /policies, POST /policies/rules, DELETE /policies/rules/{id} */
export interface VersionStamp {
  version: number;
}

/** One row of GET /sessions. */
export interface SessionRow {
  session_id: number;
  imsi: string;
  domain: string;
  ip: string | null;
  slice_id: string | null;
  state: string;
  service_session_id: number | null;
  vpn: boolean;
  permitted: string[];
}

/** GET /sessions */
export interface SessionView {
  as_of: number;
  unreachable: string[];
  sessions: SessionRow[];
}

/** One entry of GET /onboarding. */
export interface OnboardingItem {
  session_id: number;
  imsi: string;
  domain: string;
  rule: string;
  requested_at: number;
  via_federation: boolean;
  via_vpn: boolean;
}

export interface OnboardingList {
  pending: OnboardingItem[];
}

/** POST /onboarding/{id}/approve|deny */
export interface OnboardingResult {
  session_id: number;
  decision: "approve" | "deny";
}

/** POST /actions/roam */
export interface RoamResult {
  imsi: string;
  from_domain: string;
  to_domain: string;
}

/** One simulator log record as served by GET /events. */
export interface EventRecord {
  ts: number;
  component: string;
  event: string;
  fields: Record<string, string | number | boolean | null>;
}

/** GET /events */
export interface EventBatch {
  next: number;
  clock: number;
  records: EventRecord[];
}

/** Error envelope used by every non-2xx API response. */
export interface ErrorEnvelope {
  code: string;
  message: string;
}
