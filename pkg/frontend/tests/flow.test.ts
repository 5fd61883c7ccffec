import { describe, expect, it } from "vitest";

import type { SessionInfo } from "../src/api.js";
import {
  beginLoading,
  canSubmit,
  currentClipId,
  failed,
  initialState,
  ratingAccepted,
  sessionLoaded,
  setScore,
  submission,
} from "../src/flow.js";

const ANCHORS = ["entry_rusher", "lurker", "awp_picker"];

function session(overrides: Partial<SessionInfo> = {}): SessionInfo {
  const assigned = ["c0", "c1", "c2", "c3"];
  return {
    participant_id: "p1",
    assigned,
    anchors: ANCHORS,
    created_at: "2026-01-01T00:00:00+00:00",
    cursor: 0,
    done: 0,
    total: assigned.length,
    ...overrides,
  };
}

function loaded(overrides: Partial<SessionInfo> = {}) {
  return sessionLoaded(beginLoading(initialState(), "p1"), session(overrides));
}

describe("session lifecycle", () => {
  it("starts on the enter screen", () => {
    const s = initialState();
    expect(s.phase).toBe("enter");
    expect(currentClipId(s)).toBeNull();
  });

  it("trims the participant id when loading begins", () => {
    expect(beginLoading(initialState(), "  p1 ").participantId).toBe("p1");
  });

  it("lands on the first clip of a fresh session", () => {
    const s = loaded();
    expect(s.phase).toBe("rating");
    expect(s.index).toBe(0);
    expect(s.resumed).toBe(false);
    expect(currentClipId(s)).toBe("c0");
    expect(s.scores).toEqual({ entry_rusher: null, lurker: null, awp_picker: null });
  });

  it("resumes at the server cursor", () => {
    const s = loaded({ cursor: 2, done: 2 });
    expect(s.phase).toBe("rating");
    expect(s.index).toBe(2);
    expect(s.resumed).toBe(true);
    expect(currentClipId(s)).toBe("c2");
  });

  it("goes straight to done when every clip is already rated", () => {
    const s = loaded({ cursor: 4, done: 4 });
    expect(s.phase).toBe("done");
    expect(currentClipId(s)).toBeNull();
  });
});

describe("scoring", () => {
  it("records integer scores per anchor", () => {
    let s = loaded();
    s = setScore(s, "lurker", 73);
    expect(s.scores["lurker"]).toBe(73);
    expect(s.scores["entry_rusher"]).toBeNull();
  });

  it("clamps and rounds slider values", () => {
    let s = loaded();
    s = setScore(s, "lurker", 0);
    expect(s.scores["lurker"]).toBe(1);
    s = setScore(s, "lurker", 240);
    expect(s.scores["lurker"]).toBe(100);
    s = setScore(s, "lurker", 54.6);
    expect(s.scores["lurker"]).toBe(55);
    s = setScore(s, "lurker", Number.NaN);
    expect(s.scores["lurker"]).toBeNull();
  });

  it("ignores unknown anchors and non-rating phases", () => {
    const rated = loaded();
    expect(setScore(rated, "ghost", 50)).toBe(rated);
    const entering = initialState();
    expect(setScore(entering, "lurker", 50)).toBe(entering);
  });

  it("only submits once every anchor is scored", () => {
    let s = loaded();
    expect(canSubmit(s)).toBe(false);
    expect(submission(s)).toBeNull();
    for (const anchor of ANCHORS.slice(0, -1)) s = setScore(s, anchor, 40);
    expect(canSubmit(s)).toBe(false);
    s = setScore(s, "awp_picker", 90);
    expect(canSubmit(s)).toBe(true);
    expect(submission(s)).toEqual({ entry_rusher: 40, lurker: 40, awp_picker: 90 });
  });
});

describe("advancing", () => {
  it("moves to the server cursor and clears the sliders", () => {
    let s = loaded();
    for (const anchor of ANCHORS) s = setScore(s, anchor, 60);
    s = ratingAccepted(s, { done: 1, total: 4, cursor: 1 });
    expect(s.phase).toBe("rating");
    expect(s.index).toBe(1);
    expect(s.done).toBe(1);
    expect(currentClipId(s)).toBe("c1");
    expect(Object.values(s.scores).every((v) => v === null)).toBe(true);
  });

  it("finishes when the cursor passes the last clip", () => {
    let s = loaded({ cursor: 3, done: 3 });
    for (const anchor of ANCHORS) s = setScore(s, anchor, 10);
    s = ratingAccepted(s, { done: 4, total: 4, cursor: 4 });
    expect(s.phase).toBe("done");
    expect(s.done).toBe(4);
  });

  it("surfaces failures with the server detail", () => {
    const s = failed(loaded(), "scores must cover exactly the anchors");
    expect(s.phase).toBe("error");
    expect(s.message).toContain("anchors");
  });
});
