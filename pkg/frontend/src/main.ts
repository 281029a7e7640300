/** Console bootstrap: wires the client, state, feed and DOM together.
 *
 * The API base defaults to the local controller and can be pointed
 * elsewhere with `?api=http://host:port/api/v1`.  All intervals are
 * read-only polls; every mutation happens in a click or submit handler
 * and goes straight to the server.
 */

import { ApiError, ConsoleClient } from "./client.js";
import { EventFeed } from "./feed.js";
import {
  applyEvents,
  applyFailure,
  applyOnboarding,
  applyPolicies,
  applySessions,
  applyVersionStamp,
  initialState,
  type ConsoleState,
} from "./state.js";
import type { PolicyRule } from "./types.js";
import { bindUi, renderAll, showProblems, showToast } from "./ui.js";
import { ruleListProblems, ruleProblems } from "./validate.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://127.0.0.1:8080/api/v1";
const client = new ConsoleClient(baseUrl, { actor: "console" });
const refs = bindUi(document);

let state: ConsoleState = initialState();

function update(next: ConsoleState): void {
  state = next;
  renderAll(refs, state, Date.now());
}

function fail(error: unknown): void {
  update(applyFailure(state, error));
}

async function refreshSessions(): Promise<void> {
  try {
    update(applySessions(state, await client.getSessions(), Date.now()));
  } catch (error) {
    fail(error);
  }
}

async function refreshPolicies(): Promise<void> {
  try {
    update(applyPolicies(state, await client.getPolicies()));
  } catch (error) {
    fail(error);
  }
}

async function refreshOnboarding(): Promise<void> {
  try {
    update(applyOnboarding(state, (await client.getOnboarding()).pending));
  } catch (error) {
    fail(error);
  }
}

function surface(error: unknown): void {
  if (error instanceof ApiError) {
    showToast(refs, `${error.code}: ${error.message}`);
    if (error.code === "version_conflict") {
      void refreshPolicies();
    }
  } else {
    fail(error);
  }
}

// -- policy editor ----------------------------------------------------------

refs.ruleForm.addEventListener("submit", (event) => {
  event.preventDefault();
  let rule: unknown;
  try {
    rule = JSON.parse(refs.ruleJson.value);
  } catch (error) {
    showProblems(refs, [`not valid JSON: ${error instanceof Error ? error.message : error}`]);
    return;
  }
  const problems = ruleProblems(rule);
  showProblems(refs, problems);
  if (problems.length > 0) {
    return;
  }
  client
    .addRule(rule as PolicyRule)
    .then((stamp) => {
      update(applyVersionStamp(state, stamp.version));
      showToast(refs, `rule added, policy now v${stamp.version}`);
      return refreshPolicies();
    })
    .catch(surface);
});

refs.loadSet.addEventListener("click", () => {
  refs.ruleJson.value = JSON.stringify(state.policyRules, null, 2);
  showProblems(refs, []);
});

refs.replaceSet.addEventListener("click", () => {
  let rules: unknown;
  try {
    rules = JSON.parse(refs.ruleJson.value);
  } catch (error) {
    showProblems(refs, [`not valid JSON: ${error instanceof Error ? error.message : error}`]);
    return;
  }
  const problems = ruleListProblems(rules);
  showProblems(refs, problems);
  if (problems.length > 0) {
    return;
  }
  client
    .replacePolicies(rules as PolicyRule[], { version: state.policyVersion })
    .then((stamp) => {
      update(applyVersionStamp(state, stamp.version));
      showToast(refs, `rule set replaced, policy now v${stamp.version}`);
      return refreshPolicies();
    })
    .catch(surface);
});

refs.rules.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  const ruleId = target.dataset.removeRule;
  if (ruleId === undefined) {
    return;
  }
  client
    .removeRule(ruleId)
    .then((stamp) => {
      update(applyVersionStamp(state, stamp.version));
      showToast(refs, `rule ${ruleId} removed, policy now v${stamp.version}`);
      return refreshPolicies();
    })
    .catch(surface);
});

// -- onboarding and roam ----------------------------------------------------

refs.onboarding.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  const sessionId = target.dataset.onboarding;
  const decision = target.dataset.decision;
  if (sessionId === undefined || (decision !== "approve" && decision !== "deny")) {
    return;
  }
  if (!window.confirm(`${decision} onboarding for session ${sessionId}?`)) {
    return;
  }
  client
    .resolveOnboarding(Number(sessionId), decision)
    .then((result) => {
      showToast(refs, `session ${result.session_id}: ${result.decision}d`);
      return Promise.all([refreshOnboarding(), refreshSessions()]);
    })
    .catch(surface);
});

refs.roamForm.addEventListener("submit", (event) => {
  event.preventDefault();
  const data = new FormData(refs.roamForm);
  const imsi = String(data.get("imsi") ?? "").trim();
  const toDomain = String(data.get("to_domain") ?? "").trim();
  if (imsi === "" || toDomain === "") {
    showToast(refs, "roam needs an imsi and a target domain");
    return;
  }
  if (!window.confirm(`move ${imsi} to ${toDomain}?`)) {
    return;
  }
  client
    .triggerRoam(imsi, toDomain)
    .then((result) => {
      showToast(refs, `${result.imsi}: ${result.from_domain} -> ${result.to_domain}`);
      return refreshSessions();
    })
    .catch(surface);
});

// -- polling loops ----------------------------------------------------------

const feed = new EventFeed(
  client,
  (batch) => update(applyEvents(state, batch)),
  (error) => fail(error),
);

feed.start();
void refreshPolicies();
void refreshSessions();
void refreshOnboarding();
setInterval(() => void refreshSessions(), 1000);
setInterval(() => void refreshOnboarding(), 1000);
setInterval(() => void refreshPolicies(), 2000);
setInterval(() => renderAll(refs, state, Date.now()), 500);
