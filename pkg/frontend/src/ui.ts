import { ApiClient, ApiError } from "./api.js";
import type { ProvenanceEntry, UiMessage } from "./types.js";

const COMMAND_CHUNK_PREFIX = "cmd:";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/**
 * Provenance panel for one assistant message: one row per context in service
 * order. Command rows name the command and hide the captured output behind a
 * disclosure; document rows show the chunk id (which names its source file).
 * Returns null when there is nothing to show, so the panel stays hidden.
 */
export function renderProvenance(message: UiMessage): HTMLElement | null {
  const entries = message.provenance ?? [];
  if (entries.length === 0) return null;
  const panel = el("div", "provenance");
  panel.appendChild(el("div", "provenance-title", "Sources"));
  for (const entry of entries) {
    panel.appendChild(renderProvenanceRow(entry));
  }
  if (message.commandsExecuted && message.commandsExecuted.length > 0) {
    panel.appendChild(
      el("div", "provenance-commands", `commands executed: ${message.commandsExecuted.join(", ")}`),
    );
  }
  return panel;
}

function renderProvenanceRow(entry: ProvenanceEntry): HTMLElement {
  const row = el("div", "provenance-row");
  const isCommand = entry.provenance === "command_execution";
  row.classList.add(isCommand ? "provenance-cmd" : "provenance-doc");
  const tag = el("span", "provenance-tag", isCommand ? "[CMD]" : "[DOC]");
  row.appendChild(tag);
  if (isCommand) {
    const name = entry.chunk_id.startsWith(COMMAND_CHUNK_PREFIX)
      ? entry.chunk_id.slice(COMMAND_CHUNK_PREFIX.length)
      : entry.chunk_id;
    row.appendChild(el("span", "provenance-name", name));
    if (entry.text) {
      const details = el("details", "provenance-output");
      details.appendChild(el("summary", undefined, "output"));
      const pre = el("pre");
      pre.textContent = entry.text;
      details.appendChild(pre);
      row.appendChild(details);
    }
  } else {
    row.appendChild(el("span", "provenance-name", entry.chunk_id));
    if (entry.text) {
      const details = el("details", "provenance-output");
      details.appendChild(el("summary", undefined, "excerpt"));
      const pre = el("pre");
      pre.textContent = entry.text;
      details.appendChild(pre);
      row.appendChild(details);
    }
  }
  return row;
}

/**
 * The chat surface. One in-flight request at a time: send stays disabled
 * until the service answers or errors. User text is sent verbatim; the
 * client never constructs or names commands itself.
 */
export class ChatView {
  readonly messages: UiMessage[] = [];
  private sessionId: string | undefined;
  private inFlight = false;

  private readonly log: HTMLElement;
  private readonly banner: HTMLElement;
  readonly input: HTMLInputElement;
  readonly sendButton: HTMLButtonElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
  ) {
    this.log = el("div", "chat-log");
    this.banner = el("div", "error-banner hidden");
    this.input = document.createElement("input");
    this.input.type = "text";
    this.input.className = "chat-input";
    this.input.placeholder = "Ask about the cluster…";
    this.sendButton = document.createElement("button");
    this.sendButton.type = "submit";
    this.sendButton.className = "chat-send";
    this.sendButton.textContent = "Send";

    const form = el("form", "chat-form");
    form.appendChild(this.input);
    form.appendChild(this.sendButton);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.send();
    });
    this.input.addEventListener("input", () => this.syncSendState());

    this.root.appendChild(this.banner);
    this.root.appendChild(this.log);
    this.root.appendChild(form);
    this.syncSendState();
  }

  private syncSendState(): void {
    this.sendButton.disabled = this.inFlight || this.input.value.trim() === "";
  }

  private showError(text: string): void {
    this.banner.textContent = text;
    this.banner.classList.remove("hidden");
  }

  private clearError(): void {
    this.banner.textContent = "";
    this.banner.classList.add("hidden");
  }

  private appendBubble(message: UiMessage): HTMLElement {
    this.messages.push(message);
    const bubble = el("div", `bubble bubble-${message.role}`);
    bubble.appendChild(el("div", "bubble-text", message.text));
    if (message.role === "assistant") {
      const panel = renderProvenance(message);
      if (panel) bubble.appendChild(panel);
    }
    this.log.appendChild(bubble);
    this.log.scrollTop = this.log.scrollHeight;
    return bubble;
  }

  /** Send the current input. Resolves when the exchange settled either way. */
  async send(): Promise<void> {
    const text = this.input.value.trim();
    if (!text || this.inFlight) return;
    this.clearError();
    this.inFlight = true;
    this.input.value = "";
    this.syncSendState();
    const optimistic = this.appendBubble({ role: "user", text });
    try {
      const response = await this.client.chat(text, this.sessionId);
      this.sessionId = response.session_id;
      this.appendBubble({
        role: "assistant",
        text: response.answer,
        provenance: response.contexts,
        commandsExecuted: response.commands_executed,
      });
    } catch (error) {
      // Failed exchange: drop the optimistic bubble and put the text back so
      // one click re-sends it.
      optimistic.remove();
      this.messages.pop();
      this.input.value = text;
      if (error instanceof ApiError) {
        this.showError(`Request failed (${error.status}): ${error.message}`);
      } else {
        this.showError("Network error: the service is unreachable. Your message was kept.");
      }
    } finally {
      this.inFlight = false;
      this.syncSendState();
    }
  }
}
