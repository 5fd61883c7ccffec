/** Typed fetch client for the rating-study JSON API under /api/. */

export interface SessionInfo {
  participant_id: string;
  assigned: string[];
  anchors: string[];
  created_at: string;
  cursor: number;
  done: number;
  total: number;
}

export interface ClipEvent {
  timestamp: number;
  team: string;
  action: string;
  location: string;
  weapon: string[];
  outcome: string[];
  impact: string[];
  damage: number;
}

export interface ClipPayload {
  clip_id: string;
  map: string;
  player_id: string;
  events: ClipEvent[];
  media_url: string | null;
}

export interface Progress {
  done: number;
  total: number;
  cursor: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class StudyApi {
  constructor(private readonly base: string = "") {}

  session(participant: string): Promise<SessionInfo> {
    const q = encodeURIComponent(participant);
    return fetch(`${this.base}/api/session?participant=${q}`).then((r) => asJson<SessionInfo>(r));
  }

  clip(clipId: string): Promise<ClipPayload> {
    return fetch(`${this.base}/api/clip/${encodeURIComponent(clipId)}`).then((r) =>
      asJson<ClipPayload>(r),
    );
  }

  submit(participantId: string, clipId: string, scores: Record<string, number>): Promise<Progress> {
    return fetch(`${this.base}/api/rating`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ participant_id: participantId, clip_id: clipId, scores }),
    }).then((r) => asJson<Progress>(r));
  }

  progress(participant: string): Promise<Progress> {
    const q = encodeURIComponent(participant);
    return fetch(`${this.base}/api/progress?participant=${q}`).then((r) => asJson<Progress>(r));
  }

  async exportCsv(): Promise<string> {
    const response = await fetch(`${this.base}/api/export`);
    if (!response.ok) throw new ApiError(response.status, response.statusText);
    return response.text();
  }
}
