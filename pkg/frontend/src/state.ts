/** Console view state and the pure transitions that update it.
 *
 * The state only ever changes through API round-trips: successful
 * responses are folded in here, failures flip the connection flag while
 * keeping the last data on screen.  Concurrent policy responses are
 * resolved by version number — the highest version wins the display.
 */

import type {
  EventBatch,
  EventRecord,
  OnboardingItem,
  PolicyRule,
  PolicySet,
  SessionRow,
  SessionView,
} from "./types.js";

/** A sessions snapshot older than this (wall ms) is flagged as stale. */
export const STALE_AFTER_MS = 2000;

/** Feed scrollback kept for display; the cursor still covers the full log. */
export const MAX_FEED_LENGTH = 500;

export interface ConsoleState {
  sessions: SessionRow[];
  /** Virtual clock of the last sessions snapshot. */
  sessionsAsOf: number | null;
  /** Wall-clock time (ms) the last sessions snapshot arrived. */
  sessionsFetchedAt: number | null;
  unreachable: string[];
  policyVersion: number;
  policyRules: PolicyRule[];
  onboarding: OnboardingItem[];
  events: EventRecord[];
  /** Next feed index to request. */
  cursor: number;
  serverClock: number;
  connected: boolean;
  lastError: string | null;
}

export function initialState(): ConsoleState {
  return {
    sessions: [],
    sessionsAsOf: null,
    sessionsFetchedAt: null,
    unreachable: [],
    policyVersion: 0,
    policyRules: [],
    onboarding: [],
    events: [],
    cursor: 0,
    serverClock: 0,
    connected: false,
    lastError: null,
  };
}

function online(state: ConsoleState): ConsoleState {
  return { ...state, connected: true, lastError: null };
}

export function applySessions(state: ConsoleState, view: SessionView, nowMs: number): ConsoleState {
  return {
    ...online(state),
    sessions: view.sessions,
    sessionsAsOf: view.as_of,
    sessionsFetchedAt: nowMs,
    unreachable: view.unreachable,
  };
}

/** Fold in a policy read or write acknowledgement; stale versions lose. */
export function applyPolicies(state: ConsoleState, set: PolicySet): ConsoleState {
  if (set.version < state.policyVersion) {
    return online(state);
  }
  return { ...online(state), policyVersion: set.version, policyRules: set.rules };
}

/** Record a write acknowledgement that carries only the new version. */
export function applyVersionStamp(state: ConsoleState, version: number): ConsoleState {
  return { ...online(state), policyVersion: Math.max(state.policyVersion, version) };
}

export function applyOnboarding(state: ConsoleState, pending: OnboardingItem[]): ConsoleState {
  return { ...online(state), onboarding: pending };
}

export function applyEvents(state: ConsoleState, batch: EventBatch): ConsoleState {
  let events = state.events;
  if (batch.next > state.cursor) {
    const fresh = batch.records.slice(batch.records.length - (batch.next - state.cursor));
    events = [...state.events, ...fresh].slice(-MAX_FEED_LENGTH);
  }
  return {
    ...online(state),
    events,
    cursor: Math.max(state.cursor, batch.next),
    serverClock: Math.max(state.serverClock, batch.clock),
  };
}

/** A failed round-trip: keep the last data, surface the disconnect. */
export function applyFailure(state: ConsoleState, error: unknown): ConsoleState {
  const message = error instanceof Error ? error.message : String(error);
  return { ...state, connected: false, lastError: message };
}

export function isStale(state: ConsoleState, nowMs: number, maxAgeMs = STALE_AFTER_MS): boolean {
  if (state.sessionsFetchedAt === null) {
    return true;
  }
  return nowMs - state.sessionsFetchedAt > maxAgeMs;
}
