/**
 * DOM projection of the study controller: login screen, chat pane with the
 * goal panel and found-answer button, and the two survey forms. Rendering is
 * a full redraw per state change; the app is small enough that diffing would
 * be noise.
 */

import { StudyController } from "./controller.js";
import { LikertBlock, SurveyItem } from "./api.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

export class StudyView {
  constructor(private root: HTMLElement, private controller: StudyController) {
    controller.subscribe(() => this.render());
  }

  render(): void {
    const { state } = this.controller;
    this.root.replaceChildren();
    if (state.error) {
      this.root.append(el("div", { class: "banner error", role: "alert" }, state.error));
    }
    switch (state.stage) {
      case "login":
        this.root.append(this.loginScreen());
        break;
      case "dialog":
        this.root.append(this.dialogScreen());
        break;
      case "post_dialog_survey":
        this.root.append(this.postDialogScreen());
        break;
      case "post_interaction_survey":
        this.root.append(this.postInteractionScreen());
        break;
      case "done":
        this.root.append(
          el("div", { class: "done" }, this.text("done_message", "All done, thank you!")),
        );
        break;
    }
  }

  private text(key: string, fallback: string): string {
    return this.controller.config?.ui[key] ?? fallback;
  }

  private loginScreen(): HTMLElement {
    const input = el("input", {
      id: "username",
      type: "text",
      autocomplete: "off",
      placeholder: "username",
    });
    const button = el("button", { id: "login" }, "Start");
    button.addEventListener("click", () => void this.controller.login(input.value));
    return el(
      "div",
      { class: "login" },
      el("h1", {}, this.text("title", "Dialog Study")),
      el("p", {}, this.text("login_prompt", "Pick a username to start.")),
      input,
      button,
    );
  }

  private dialogScreen(): HTMLElement {
    const { state } = this.controller;
    const messages = el("div", { class: "messages", id: "messages" });
    for (const entry of state.messages) {
      messages.append(el("div", { class: `msg ${entry.speaker}` }, entry.text));
    }
    const input = el("input", {
      id: "message-input",
      type: "text",
      placeholder: this.text("input_placeholder", "Type your message..."),
    }) as HTMLInputElement;
    const send = el("button", { id: "send" }, "Send") as HTMLButtonElement;
    if (state.busy) {
      input.disabled = true; // one in-flight request; no optimistic agent turns
      send.disabled = true;
    }
    const submit = () => {
      const text = input.value;
      input.value = "";
      void this.controller.sendMessage(text);
    };
    send.addEventListener("click", submit);
    input.addEventListener("keydown", (event) => {
      if ((event as KeyboardEvent).key === "Enter") submit();
    });

    const found = el("button", { id: "found-answer", class: "found" },
      this.text("found_answer_button", "I found my answer")) as HTMLButtonElement;
    found.disabled = state.busy;
    found.addEventListener("click", () => void this.controller.foundAnswer());

    return el(
      "div",
      { class: "study" },
      el(
        "section",
        { class: "chat" },
        messages,
        el("div", { class: "composer" }, input, send),
      ),
      el(
        "aside",
        { class: "goal-panel" },
        el("h2", {}, this.text("goal_heading", "Your information goal")),
        el("p", { id: "goal-text" }, state.goal?.text ?? ""),
        el(
          "p",
          { class: "progress", id: "dialog-progress" },
          `Dialog ${state.dialogIndex + 1} of ${state.dialogsTotal}`,
        ),
        found,
      ),
    );
  }

  private radioRow(name: string, item: SurveyItem, onPick: (value: number) => void): HTMLElement {
    const [lo, hi] = item.scale;
    const row = el("fieldset", { class: "survey-item", id: `item-${name}` },
      el("legend", {}, item.question));
    for (let value = lo; value <= hi; value += 1) {
      const input = el("input", {
        type: "radio",
        name,
        value: String(value),
        id: `${name}-${value}`,
      }) as HTMLInputElement;
      input.addEventListener("change", () => onPick(value));
      const label = item.labels[value - lo] ?? String(value);
      row.append(el("label", { for: `${name}-${value}` }, input, `${value} (${label})`));
    }
    return row;
  }

  private postDialogScreen(): HTMLElement {
    const config = this.controller.config!;
    const form = el("form", { class: "survey", id: "post-dialog-survey" });
    for (const item of config.post_dialog) {
      form.append(
        this.radioRow(item.id, item, (value) =>
          this.controller.setPostDialog(
            item.id as "perceived_length" | "answer_satisfaction",
            value,
          ),
        ),
      );
    }
    const submit = el("button", { id: "submit-post-dialog", type: "button" },
      "Continue") as HTMLButtonElement;
    submit.disabled = !this.controller.postDialogComplete() || this.controller.state.busy;
    submit.addEventListener("click", () => void this.controller.submitPostDialog());
    form.append(submit);
    return form;
  }

  private likertBlock(
    name: "usability" | "trust",
    block: LikertBlock,
  ): HTMLElement {
    const wrap = el("fieldset", { class: "likert", id: `block-${name}` },
      el("legend", {}, block.question));
    const [lo, hi] = block.scale;
    block.items.forEach((itemText, index) => {
      const row = el("div", { class: "likert-row" }, el("span", {}, itemText));
      for (let value = lo; value <= hi; value += 1) {
        const input = el("input", {
          type: "radio",
          name: `${name}-${index}`,
          value: String(value),
          id: `${name}-${index}-${value}`,
        }) as HTMLInputElement;
        input.addEventListener("change", () =>
          this.controller.setPostInteraction(name, index, value),
        );
        row.append(el("label", { for: `${name}-${index}-${value}` }, input, String(value)));
      }
      wrap.append(row);
    });
    return wrap;
  }

  private postInteractionScreen(): HTMLElement {
    const config = this.controller.config!;
    const form = el("form", { class: "survey", id: "post-interaction-survey" });
    form.append(this.likertBlock("usability", config.post_interaction.usability));
    form.append(this.likertBlock("trust", config.post_interaction.trust));
    const submit = el("button", { id: "submit-post-interaction", type: "button" },
      "Finish") as HTMLButtonElement;
    submit.disabled = !this.controller.postInteractionComplete() || this.controller.state.busy;
    submit.addEventListener("click", () => void this.controller.submitPostInteraction());
    form.append(submit);
    return form;
  }
}
