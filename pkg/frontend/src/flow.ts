/** Pure session state machine for the rating study.
 *
 * All transitions return a fresh state object and never touch the
 * network; the DOM layer feeds server responses in and renders what
 * comes out. The server cursor (first unrated assigned clip) is
 * authoritative, so loading a session mid-way resumes exactly where
 * the log says the participant left off.
 */

import type { Progress, SessionInfo } from "./api.js";

export type Phase = "enter" | "loading" | "rating" | "done" | "error";

export interface FlowState {
  phase: Phase;
  participantId: string;
  assigned: string[];
  anchors: string[];
  index: number;
  scores: Record<string, number | null>;
  done: number;
  total: number;
  resumed: boolean;
  message: string | null;
}

export const SCORE_MIN = 1;
export const SCORE_MAX = 100;

export function initialState(): FlowState {
  return {
    phase: "enter",
    participantId: "",
    assigned: [],
    anchors: [],
    index: 0,
    scores: {},
    done: 0,
    total: 0,
    resumed: false,
    message: null,
  };
}

function blankScores(anchors: string[]): Record<string, number | null> {
  return Object.fromEntries(anchors.map((a) => [a, null]));
}

export function beginLoading(state: FlowState, participantId: string): FlowState {
  return { ...initialState(), phase: "loading", participantId: participantId.trim() };
}

export function sessionLoaded(state: FlowState, session: SessionInfo): FlowState {
  const finished = session.cursor >= session.total;
  return {
    ...state,
    phase: finished ? "done" : "rating",
    participantId: session.participant_id,
    assigned: [...session.assigned],
    anchors: [...session.anchors],
    index: Math.min(session.cursor, session.total),
    scores: blankScores(session.anchors),
    done: session.done,
    total: session.total,
    resumed: session.cursor > 0,
    message: null,
  };
}

export function currentClipId(state: FlowState): string | null {
  if (state.phase !== "rating") return null;
  return state.assigned[state.index] ?? null;
}

/** Clamp to an integer slider value; non-finite input leaves the anchor unset. */
export function setScore(state: FlowState, anchor: string, value: number): FlowState {
  if (state.phase !== "rating" || !(anchor in state.scores)) return state;
  const score = Number.isFinite(value)
    ? Math.min(SCORE_MAX, Math.max(SCORE_MIN, Math.round(value)))
    : null;
  return { ...state, scores: { ...state.scores, [anchor]: score } };
}

export function canSubmit(state: FlowState): boolean {
  return (
    state.phase === "rating" &&
    state.anchors.length > 0 &&
    state.anchors.every((a) => typeof state.scores[a] === "number")
  );
}

/** Scores payload for POST /api/rating; null until every anchor is set. */
export function submission(state: FlowState): Record<string, number> | null {
  if (!canSubmit(state)) return null;
  return Object.fromEntries(state.anchors.map((a) => [a, state.scores[a] as number]));
}

export function ratingAccepted(state: FlowState, progress: Progress): FlowState {
  const finished = progress.cursor >= progress.total;
  return {
    ...state,
    phase: finished ? "done" : "rating",
    index: Math.min(progress.cursor, progress.total),
    scores: blankScores(state.anchors),
    done: progress.done,
    total: progress.total,
    message: null,
  };
}

export function failed(state: FlowState, message: string): FlowState {
  return { ...state, phase: "error", message };
}
