/**
 * Study-flow state machine, free of DOM concerns so it can be tested headless
 * and the render layer stays a thin projection of this state.
 *
 * Stages mirror the server: dialog -> post_dialog_survey (opened by the
 * found-answer click) -> next dialog, and after the final dialog the
 * post-interaction survey. The server transcript is authoritative: state is
 * rebuilt from it on refresh, and only one request is in flight per session.
 */

import { ApiError, SessionApi, SessionView, StudyConfig, TranscriptEntry } from "./api.js";

export interface PostDialogDraft {
  perceived_length: number | null;
  answer_satisfaction: number | null;
}

export interface PostInteractionDraft {
  usability: (number | null)[];
  trust: (number | null)[];
}

export interface ControllerState {
  stage: "login" | "dialog" | "post_dialog_survey" | "post_interaction_survey" | "done";
  sessionId: string | null;
  goal: { category: string; text: string } | null;
  dialogIndex: number;
  dialogsTotal: number;
  messages: TranscriptEntry[];
  busy: boolean;
  error: string | null;
  postDialog: PostDialogDraft;
  postInteraction: PostInteractionDraft;
}

const SESSION_KEY = "ctskit-session-id";

export class StudyController {
  state: ControllerState;
  config: StudyConfig | null = null;
  private listeners: (() => void)[] = [];

  constructor(
    private api: SessionApi,
    private storage: Pick<Storage, "getItem" | "setItem" | "removeItem"> | null = null,
  ) {
    this.state = {
      stage: "login",
      sessionId: null,
      goal: null,
      dialogIndex: 0,
      dialogsTotal: 3,
      messages: [],
      busy: false,
      error: null,
      postDialog: { perceived_length: null, answer_satisfaction: null },
      postInteraction: { usability: [], trust: [] },
    };
  }

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  private applySession(view: SessionView): void {
    this.state.sessionId = view.session_id;
    this.state.stage = view.stage;
    this.state.goal = view.goal;
    this.state.dialogIndex = view.dialog_index;
    this.state.dialogsTotal = view.dialogs_total;
    this.state.messages = [...view.transcript];
    this.storage?.setItem(SESSION_KEY, view.session_id);
    if (this.config) {
      this.resetDrafts();
    }
    this.emit();
  }

  private resetDrafts(): void {
    const blocks = this.config!.post_interaction;
    this.state.postDialog = { perceived_length: null, answer_satisfaction: null };
    this.state.postInteraction = {
      usability: blocks.usability.items.map(() => null),
      trust: blocks.trust.items.map(() => null),
    };
  }

  async init(): Promise<void> {
    this.config = await this.api.studyConfig();
    this.state.dialogsTotal = this.config.dialogs_per_session;
    this.resetDrafts();
    const stored = this.storage?.getItem(SESSION_KEY);
    if (stored) {
      try {
        this.applySession(await this.api.readSession(stored));
        return;
      } catch {
        this.storage?.removeItem(SESSION_KEY);
      }
    }
    this.emit();
  }

  private async guard<T>(action: () => Promise<T>): Promise<T | undefined> {
    if (this.state.busy) return undefined;
    this.state.busy = true;
    this.state.error = null;
    this.emit();
    try {
      return await action();
    } catch (error) {
      this.state.error = error instanceof ApiError ? error.message : String(error);
      return undefined;
    } finally {
      this.state.busy = false;
      this.emit();
    }
  }

  /** The username is sent once for hashing and never stored client-side. */
  async login(username: string): Promise<void> {
    if (!username.trim()) {
      this.state.error = "Please enter a username.";
      this.emit();
      return;
    }
    await this.guard(async () => {
      this.applySession(await this.api.createSession(username.trim()));
    });
  }

  async sendMessage(text: string): Promise<void> {
    if (!text.trim() || this.state.stage !== "dialog") return;
    await this.guard(async () => {
      this.state.messages.push({ speaker: "user", text: text.trim() });
      this.emit();
      const result = await this.api.sendMessage(this.state.sessionId!, text.trim());
      this.state.messages.push(...result.turns);
    });
  }

  async foundAnswer(): Promise<void> {
    if (this.state.stage !== "dialog") return;
    await this.guard(async () => {
      const view = await this.api.foundAnswer(this.state.sessionId!);
      this.state.stage = view.stage;
    });
  }

  setPostDialog(field: keyof PostDialogDraft, value: number): void {
    this.state.postDialog[field] = value;
    this.emit();
  }

  setPostInteraction(block: "usability" | "trust", index: number, value: number): void {
    this.state.postInteraction[block][index] = value;
    this.emit();
  }

  postDialogComplete(): boolean {
    const draft = this.state.postDialog;
    return draft.perceived_length !== null && draft.answer_satisfaction !== null;
  }

  postInteractionComplete(): boolean {
    const draft = this.state.postInteraction;
    return (
      draft.usability.every((v) => v !== null) && draft.trust.every((v) => v !== null)
    );
  }

  async submitPostDialog(): Promise<void> {
    if (!this.postDialogComplete()) return; // submit stays gated until every item is answered
    await this.guard(async () => {
      const draft = this.state.postDialog;
      this.applySession(
        await this.api.submitPostDialog(
          this.state.sessionId!,
          draft.perceived_length!,
          draft.answer_satisfaction!,
        ),
      );
    });
  }

  async submitPostInteraction(): Promise<void> {
    if (!this.postInteractionComplete()) return;
    await this.guard(async () => {
      const draft = this.state.postInteraction;
      this.applySession(
        await this.api.submitPostInteraction(
          this.state.sessionId!,
          draft.usability.map((v) => v!),
          draft.trust.map((v) => v!),
        ),
      );
    });
  }
}
