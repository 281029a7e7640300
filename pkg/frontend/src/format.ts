/** Pure rendering helpers: state in, HTML or text out.
 *
 * Kept free of DOM access so they run (and are tested) in plain Node.
 * All dynamic values are escaped; buttons carry their subject in data
 * attributes for the click delegation in the UI layer.
 */

import type { EventRecord, OnboardingItem, PolicyRule, RuleSubject, SessionRow } from "./types.js";

export function escapeHtml(value: string): string {
  return value
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

export function formatClock(ms: number): string {
  return `t+${ms}ms`;
}

export function formatEventLine(record: EventRecord): string {
  const fields = Object.entries(record.fields)
    .map(([key, value]) => `${key}=${String(value)}`)
    .join(" ");
  return `${formatClock(record.ts)}  ${record.component}  ${record.event}  ${fields}`.trimEnd();
}

export function renderFeed(events: EventRecord[]): string {
  return events.map((record) => escapeHtml(formatEventLine(record))).join("\n");
}

export function describeSubject(subject: RuleSubject | undefined): string {
  if (subject === undefined) {
    return "anyone";
  }
  const parts: string[] = [];
  for (const key of ["roles", "device_types", "domains"] as const) {
    const value = subject[key];
    if (Array.isArray(value)) {
      parts.push(`${key}: ${value.join(", ")}`);
    }
  }
  if (subject.min_posture !== undefined && subject.min_posture > 0) {
    parts.push(`posture >= ${subject.min_posture}`);
  }
  if (subject.require_vpn) {
    parts.push("vpn only");
  }
  return parts.length > 0 ? parts.join(" · ") : "anyone";
}

function cell(value: string | number | null | undefined): string {
  if (value === null || value === undefined || value === "") {
    return "<td>—</td>";
  }
  return `<td>${escapeHtml(String(value))}</td>`;
}

export function renderSessionsTable(rows: SessionRow[]): string {
  if (rows.length === 0) {
    return "<p class='empty'>no sessions</p>";
  }
  const body = rows
    .map(
      (row) =>
        `<tr class='state-${escapeHtml(row.state)}'>` +
        cell(row.session_id) +
        cell(row.imsi) +
        cell(row.domain) +
        cell(row.ip) +
        cell(row.slice_id) +
        cell(row.state) +
        cell(row.vpn ? "yes" : "") +
        cell(row.permitted.join(", ")) +
        "</tr>",
    )
    .join("");
  return (
    "<table><thead><tr><th>id</th><th>imsi</th><th>domain</th><th>ip</th>" +
    "<th>slice</th><th>state</th><th>vpn</th><th>permitted</th></tr></thead>" +
    `<tbody>${body}</tbody></table>`
  );
}

export function renderRulesTable(rules: PolicyRule[]): string {
  if (rules.length === 0) {
    return "<p class='empty'>no rules</p>";
  }
  const body = rules
    .map(
      (rule) =>
        "<tr>" +
        cell(rule.rule_id) +
        cell(rule.priority) +
        cell(rule.action) +
        cell(rule.resource) +
        `<td class='effect-${escapeHtml(rule.effect)}'>${escapeHtml(rule.effect)}</td>` +
        cell(rule.scope ?? "local") +
        cell(describeSubject(rule.subject)) +
        `<td><button type='button' data-remove-rule='${escapeHtml(rule.rule_id)}'>delete</button></td>` +
        "</tr>",
    )
    .join("");
  return (
    "<table><thead><tr><th>rule</th><th>prio</th><th>action</th><th>resource</th>" +
    "<th>effect</th><th>scope</th><th>subject</th><th></th></tr></thead>" +
    `<tbody>${body}</tbody></table>`
  );
}

export function renderOnboardingList(items: OnboardingItem[]): string {
  if (items.length === 0) {
    return "<p class='empty'>nothing pending</p>";
  }
  return items
    .map(
      (item) =>
        "<div class='pending'>" +
        `<span>${escapeHtml(item.imsi)} in ${escapeHtml(item.domain)} ` +
        `(session ${item.session_id}, held by ${escapeHtml(item.rule)} at ${formatClock(item.requested_at)})</span>` +
        `<button type='button' data-onboarding='${item.session_id}' data-decision='approve'>approve</button>` +
        `<button type='button' data-onboarding='${item.session_id}' data-decision='deny'>deny</button>` +
        "</div>",
    )
    .join("");
}
