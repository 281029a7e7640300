/** Client-side policy rule validation.
 *
 * Mirrors the controller's structural checks so the editor can flag a
 * bad rule before submitting it.  Check order and message text match the
 * server's malformed-policy errors one for one: the first problem listed
 * here is exactly what the server would answer with.  The server remains
 * authoritative; this is a convenience, not an enforcement point.
 */

const ACTIONS = ["attach", "access", "internet", "manage"] as const;
const EFFECTS = ["permit", "deny", "manual"] as const;
const SCOPES = ["local", "federated", "any"] as const;

const RULE_KEYS = new Set(["rule_id", "priority", "subject", "action", "resource", "effect", "scope"]);
const SUBJECT_KEYS = new Set(["roles", "device_types", "min_posture", "domains", "require_vpn"]);

/** Render values the way the server's messages do. */
function quoted(value: string): string {
  return `'${value}'`;
}

function quotedList(values: readonly string[]): string {
  return `[${values.map(quoted).join(", ")}]`;
}

function isPlainObject(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function isNonEmptyStringList(value: unknown): boolean {
  return (
    Array.isArray(value) &&
    value.length > 0 &&
    value.every((v) => typeof v === "string" && v.length > 0)
  );
}

function subjectProblems(raw: unknown, where: string): string[] {
  if (!isPlainObject(raw)) {
    return [`${where}: subject must be an object`];
  }
  const problems: string[] = [];
  const extra = Object.keys(raw).filter((k) => !SUBJECT_KEYS.has(k)).sort();
  if (extra.length > 0) {
    problems.push(`${where}: unknown subject keys ${quotedList(extra)}`);
  }
  for (const key of ["roles", "device_types", "domains"]) {
    const value = raw[key] ?? "*";
    if (value !== "*" && !isNonEmptyStringList(value)) {
      problems.push(`${where}: ${key} must be '*' or a non-empty string list`);
    }
  }
  const posture = raw.min_posture ?? 0;
  if (typeof posture !== "number" || !Number.isInteger(posture) || posture < 0 || posture > 3) {
    problems.push(`${where}: min_posture must be an integer in 0..3`);
  }
  const requireVpn = raw.require_vpn ?? false;
  if (typeof requireVpn !== "boolean") {
    problems.push(`${where}: require_vpn must be a boolean`);
  }
  return problems;
}

/** All structural defects of one rule, in the server's check order. */
export function ruleProblems(raw: unknown): string[] {
  if (!isPlainObject(raw)) {
    return ["rule must be an object"];
  }
  const problems: string[] = [];
  const ruleId = raw.rule_id;
  const where = typeof ruleId === "string" ? `rule ${quoted(ruleId)}` : "rule";
  const extra = Object.keys(raw).filter((k) => !RULE_KEYS.has(k)).sort();
  if (extra.length > 0) {
    problems.push(`${where}: unknown keys ${quotedList(extra)}`);
  }
  if (typeof ruleId !== "string" || ruleId.length === 0) {
    problems.push("rule: rule_id must be a non-empty string");
  }
  const priority = raw.priority;
  if (typeof priority !== "number" || !Number.isInteger(priority) || priority < 0) {
    problems.push(`${where}: priority must be a non-negative integer`);
  }
  if (!ACTIONS.includes(raw.action as (typeof ACTIONS)[number])) {
    problems.push(`${where}: action must be one of ${quotedList(ACTIONS)}`);
  }
  if (!EFFECTS.includes(raw.effect as (typeof EFFECTS)[number])) {
    problems.push(`${where}: effect must be one of ${quotedList(EFFECTS)}`);
  }
  const scope = raw.scope ?? "local";
  if (!SCOPES.includes(scope as (typeof SCOPES)[number])) {
    problems.push(`${where}: scope must be one of ${quotedList(SCOPES)}`);
  }
  const resource = raw.resource;
  if (typeof resource !== "string" || resource.length === 0) {
    problems.push(`${where}: resource must be a non-empty string`);
  } else {
    const stars = resource.split("*").length - 1;
    if (stars > 1 || (stars === 1 && !resource.endsWith("*"))) {
      problems.push(`${where}: at most one '*' allowed, only at the end`);
    }
  }
  problems.push(...subjectProblems(raw.subject ?? {}, where));
  return problems;
}

/** Defects of a full rule list, including duplicate ids. */
export function ruleListProblems(raw: unknown): string[] {
  if (!Array.isArray(raw)) {
    return ["rules must be a list"];
  }
  const problems: string[] = [];
  const seen = new Set<string>();
  for (const rule of raw) {
    problems.push(...ruleProblems(rule));
    if (isPlainObject(rule) && typeof rule.rule_id === "string" && rule.rule_id.length > 0) {
      if (seen.has(rule.rule_id)) {
        problems.push(`duplicate rule_id ${quoted(rule.rule_id)}`);
      }
      seen.add(rule.rule_id);
    }
  }
  return problems;
}
