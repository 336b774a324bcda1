/**
 * Typed client for the session API. All requests are JSON over fetch; the
 * base URL is empty when the UI is served by the same backend.
 */

export interface Goal {
  category: string;
  text: string;
}

export interface TranscriptEntry {
  speaker: "user" | "agent";
  text: string;
  node?: string;
  prompt?: boolean;
}

export interface SessionView {
  session_id: string;
  stage: "dialog" | "post_dialog_survey" | "post_interaction_survey" | "done";
  dialog_index: number;
  dialogs_total: number;
  goal: Goal | null;
  awaiting_input: boolean;
  transcript: TranscriptEntry[];
}

export interface MessageResult {
  turns: TranscriptEntry[];
  awaiting_input: boolean;
  dialog_index: number;
  stage: string;
}

export interface SurveyItem {
  id: string;
  question: string;
  scale: [number, number];
  labels: string[];
}

export interface LikertBlock {
  question: string;
  scale: [number, number];
  items: string[];
}

export interface StudyConfig {
  ui: Record<string, string>;
  post_dialog: SurveyItem[];
  post_interaction: { usability: LikertBlock; trust: LikertBlock };
  dialogs_per_session: number;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(base + path, {
    headers: { "Content-Type": "application/json" },
    ...init,
  });
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    const detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body);
    throw new ApiError(response.status, detail);
  }
  return body as T;
}

export class SessionApi {
  constructor(private base: string = "") {}

  studyConfig(): Promise<StudyConfig> {
    return request(this.base, "/api/study-config");
  }

  createSession(username: string): Promise<SessionView> {
    return request(this.base, "/api/sessions", {
      method: "POST",
      body: JSON.stringify({ username }),
    });
  }

  readSession(sessionId: string): Promise<SessionView> {
    return request(this.base, `/api/sessions/${sessionId}`);
  }

  sendMessage(sessionId: string, text: string): Promise<MessageResult> {
    return request(this.base, `/api/sessions/${sessionId}/message`, {
      method: "POST",
      body: JSON.stringify({ text }),
    });
  }

  foundAnswer(sessionId: string): Promise<SessionView> {
    return request(this.base, `/api/sessions/${sessionId}/found-answer`, { method: "POST" });
  }

  submitPostDialog(
    sessionId: string,
    perceivedLength: number,
    answerSatisfaction: number,
  ): Promise<SessionView> {
    return request(this.base, `/api/sessions/${sessionId}/survey`, {
      method: "POST",
      body: JSON.stringify({
        kind: "post_dialog",
        perceived_length: perceivedLength,
        answer_satisfaction: answerSatisfaction,
      }),
    });
  }

  submitPostInteraction(
    sessionId: string,
    usability: number[],
    trust: number[],
  ): Promise<SessionView> {
    return request(this.base, `/api/sessions/${sessionId}/survey`, {
      method: "POST",
      body: JSON.stringify({ kind: "post_interaction", usability, trust }),
    });
  }
}
