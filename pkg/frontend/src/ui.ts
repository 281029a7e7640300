/** DOM glue: binds the rendered panels to the document.
 *
 * Everything here is presentation; decisions and data live on the
 * server and arrive through the client.  This module is the only one
 * that touches the DOM, which keeps the rest testable in plain Node.
 */

import { formatClock, renderFeed, renderOnboardingList, renderRulesTable, renderSessionsTable } from "./format.js";
import type { ConsoleState } from "./state.js";
import { isStale } from "./state.js";

export interface UiRefs {
  banner: HTMLElement;
  toast: HTMLElement;
  clock: HTMLElement;
  version: HTMLElement;
  stale: HTMLElement;
  sessions: HTMLElement;
  unreachable: HTMLElement;
  rules: HTMLElement;
  ruleJson: HTMLTextAreaElement;
  ruleProblems: HTMLElement;
  ruleForm: HTMLFormElement;
  loadSet: HTMLButtonElement;
  replaceSet: HTMLButtonElement;
  onboarding: HTMLElement;
  roamForm: HTMLFormElement;
  feed: HTMLElement;
}

function byId<T extends HTMLElement>(doc: Document, id: string): T {
  const element = doc.getElementById(id);
  if (element === null) {
    throw new Error(`missing element #${id}`);
  }
  return element as T;
}

export function bindUi(doc: Document): UiRefs {
  return {
    banner: byId(doc, "banner"),
    toast: byId(doc, "toast"),
    clock: byId(doc, "clock"),
    version: byId(doc, "version"),
    stale: byId(doc, "stale"),
    sessions: byId(doc, "sessions"),
    unreachable: byId(doc, "unreachable"),
    rules: byId(doc, "rules"),
    ruleJson: byId<HTMLTextAreaElement>(doc, "rule-json"),
    ruleProblems: byId(doc, "rule-problems"),
    ruleForm: byId<HTMLFormElement>(doc, "rule-form"),
    loadSet: byId<HTMLButtonElement>(doc, "load-set"),
    replaceSet: byId<HTMLButtonElement>(doc, "replace-set"),
    onboarding: byId(doc, "onboarding"),
    roamForm: byId<HTMLFormElement>(doc, "roam-form"),
    feed: byId(doc, "feed"),
  };
}

export function renderAll(refs: UiRefs, state: ConsoleState, nowMs: number): void {
  refs.clock.textContent = formatClock(state.serverClock);
  refs.version.textContent = `policy v${state.policyVersion}`;
  refs.stale.hidden = !isStale(state, nowMs);
  refs.banner.hidden = state.connected;
  if (!state.connected && state.lastError !== null) {
    refs.banner.textContent = `controller unreachable (${state.lastError}) — showing last known data`;
  }
  refs.sessions.innerHTML = renderSessionsTable(state.sessions);
  refs.unreachable.textContent =
    state.unreachable.length > 0 ? `unreachable domains: ${state.unreachable.join(", ")}` : "";
  refs.rules.innerHTML = renderRulesTable(state.policyRules);
  refs.onboarding.innerHTML = renderOnboardingList(state.onboarding);
  const follow = refs.feed.scrollTop + refs.feed.clientHeight >= refs.feed.scrollHeight - 4;
  refs.feed.innerHTML = renderFeed(state.events);
  if (follow) {
    refs.feed.scrollTop = refs.feed.scrollHeight;
  }
}

let toastTimer: ReturnType<typeof setTimeout> | undefined;

export function showToast(refs: UiRefs, message: string): void {
  refs.toast.textContent = message;
  refs.toast.hidden = false;
  if (toastTimer !== undefined) {
    clearTimeout(toastTimer);
  }
  toastTimer = setTimeout(() => {
    refs.toast.hidden = true;
  }, 4000);
}

export function showProblems(refs: UiRefs, problems: string[]): void {
  refs.ruleProblems.innerHTML = problems
    .map((p) => `<li>${p.replaceAll("&", "&amp;").replaceAll("<", "&lt;")}</li>`)
    .join("");
  refs.ruleProblems.hidden = problems.length === 0;
}
