/** DOM wiring: renders the flow state and talks to the study API. */

import { ApiError, StudyApi, type ClipPayload } from "./api.js";
import * as flow from "./flow.js";

const PARTICIPANT_KEY = "stylescout.participant";

const api = new StudyApi();
let state = flow.initialState();
let clip: ClipPayload | null = null;
let root: HTMLElement;

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function fail(err: unknown): void {
  const message = err instanceof ApiError ? err.detail : String(err);
  state = flow.failed(state, message);
  render();
}

async function start(participantId: string): Promise<void> {
  state = flow.beginLoading(state, participantId);
  render();
  try {
    const session = await api.session(state.participantId);
    window.localStorage.setItem(PARTICIPANT_KEY, session.participant_id);
    state = flow.sessionLoaded(state, session);
    await loadClip();
  } catch (err) {
    fail(err);
  }
}

async function loadClip(): Promise<void> {
  clip = null;
  const clipId = flow.currentClipId(state);
  if (clipId !== null) clip = await api.clip(clipId);
  render();
}

async function submit(): Promise<void> {
  const scores = flow.submission(state);
  const clipId = flow.currentClipId(state);
  if (scores === null || clipId === null) return;
  try {
    const progress = await api.submit(state.participantId, clipId, scores);
    state = flow.ratingAccepted(state, progress);
    await loadClip();
  } catch (err) {
    fail(err);
  }
}

function eventRows(c: ClipPayload): string {
  return c.events
    .map(
      (e) => `<tr>
        <td>${e.timestamp.toFixed(1)}s</td>
        <td>${escapeHtml(e.action)}</td>
        <td>${escapeHtml(e.location)}</td>
        <td>${escapeHtml(e.weapon.join(", "))}</td>
        <td>${escapeHtml([...e.outcome, ...e.impact].join(", "))}</td>
        <td>${e.damage > 0 ? e.damage : ""}</td>
      </tr>`,
    )
    .join("");
}

function sliderRows(): string {
  return state.anchors
    .map((anchor) => {
      const value = state.scores[anchor];
      const set = typeof value === "number";
      return `<div class="anchor-row" data-anchor="${escapeHtml(anchor)}">
        <label>${escapeHtml(anchor)}</label>
        <input type="range" min="${flow.SCORE_MIN}" max="${flow.SCORE_MAX}"
               value="${set ? value : 50}" data-slider="${escapeHtml(anchor)}">
        <span class="value" data-value="${escapeHtml(anchor)}">${set ? value : "&ndash;"}</span>
      </div>`;
    })
    .join("");
}

function view(): string {
  switch (state.phase) {
    case "enter":
      return `<h1>Style rating study</h1>
        <p>Rate how strongly each clip matches the playing style of five professionals.</p>
        <form id="enter-form">
          <input id="participant" placeholder="participant id" autocomplete="off">
          <button type="submit">Start</button>
        </form>`;
    case "loading":
      return `<p class="muted">Loading session&hellip;</p>`;
    case "rating": {
      const clipPanel =
        clip === null
          ? `<p class="muted">Loading clip&hellip;</p>`
          : `<div class="clip">
              <div class="clip-head">
                <strong>${escapeHtml(clip.clip_id)}</strong>
                <span>${escapeHtml(clip.map)}</span>
                ${clip.media_url ? `<a href="${escapeHtml(clip.media_url)}" target="_blank">watch</a>` : ""}
              </div>
              <table>
                <thead><tr><th>t</th><th>action</th><th>location</th>
                  <th>weapon</th><th>outcome</th><th>dmg</th></tr></thead>
                <tbody>${eventRows(clip)}</tbody>
              </table>
            </div>`;
      return `<header>
          <span>${escapeHtml(state.participantId)}</span>
          <span>clip ${state.index + 1} of ${state.total}</span>
        </header>
        ${state.resumed && state.done === state.index ? `<p class="notice">Resumed at clip ${state.index + 1}.</p>` : ""}
        ${clipPanel}
        <section class="anchors">
          <h2>How much does this clip look like each player's style?</h2>
          ${sliderRows()}
        </section>
        <button id="submit" ${flow.canSubmit(state) ? "" : "disabled"}>Submit ratings</button>`;
    }
    case "done":
      return `<h1>All done</h1>
        <p>${state.done} of ${state.total} clips rated. Thank you!</p>
        <p><a href="/api/export">Download all ratings (CSV)</a></p>`;
    case "error":
      return `<h1>Something went wrong</h1>
        <p class="error">${escapeHtml(state.message ?? "unknown error")}</p>
        <button id="retry">Back</button>`;
  }
}

function render(): void {
  root.innerHTML = `<main>${view()}</main>`;

  const form = root.querySelector<HTMLFormElement>("#enter-form");
  form?.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const input = root.querySelector<HTMLInputElement>("#participant");
    if (input && input.value.trim()) void start(input.value);
  });

  // Sliders patch their own label in place; a full re-render mid-drag
  // would drop the pointer capture.
  for (const slider of root.querySelectorAll<HTMLInputElement>("input[data-slider]")) {
    slider.addEventListener("input", () => {
      const anchor = slider.dataset.slider ?? "";
      state = flow.setScore(state, anchor, Number(slider.value));
      const label = root.querySelector<HTMLElement>(`[data-value="${CSS.escape(anchor)}"]`);
      if (label) label.textContent = String(state.scores[anchor]);
      const button = root.querySelector<HTMLButtonElement>("#submit");
      if (button) button.disabled = !flow.canSubmit(state);
    });
  }

  root.querySelector<HTMLButtonElement>("#submit")?.addEventListener("click", () => void submit());
  root.querySelector<HTMLButtonElement>("#retry")?.addEventListener("click", () => {
    state = flow.initialState();
    render();
  });
}

function boot(el: HTMLElement): void {
  root = el;
  const saved = window.localStorage.getItem(PARTICIPANT_KEY);
  if (saved) {
    void start(saved);
  } else {
    render();
  }
}

const el = typeof document !== "undefined" ? document.getElementById("app") : null;
if (el) boot(el);
