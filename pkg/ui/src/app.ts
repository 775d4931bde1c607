/** The chat page: connect form, contact list, and a two-pane conversation
 * view that makes the trust boundary visible. The glasses pane shows what
 * the secure device decrypted; the phone pane shows the armored blobs the
 * phone layer actually holds, verbatim. The two panes come from separate
 * agent endpoints and are never derived from one another.
 */

import {
  AgentClient,
  AgentError,
  AgentUnreachableError,
  Contact,
  Conversation,
  FetchLike,
  PhoneView,
} from "./api.js";
import { Poller } from "./poller.js";

export const DEFAULT_AGENT_URL = "http://127.0.0.1:7171";
export const DEFAULT_POLL_INTERVAL_MS = 2000;

export interface AppOptions {
  root: HTMLElement;
  defaultAgentUrl?: string;
  pollIntervalMs?: number;
  fetchFn?: FetchLike;
  documentRef?: Document;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) node.textContent = text;
  return node;
}

export class App {
  private readonly root: HTMLElement;
  private readonly doc: Document;
  private readonly fetchFn: FetchLike | undefined;
  private readonly pollIntervalMs: number;

  private client: AgentClient | null = null;
  private contacts: Contact[] = [];
  private selectedPeer: string | null = null;
  private conversation: Conversation | null = null;
  private phoneView: PhoneView | null = null;
  private agentDown = false;

  private statusPoller: Poller | null = null;
  private conversationPoller: Poller | null = null;
  private contactsFlight: Promise<void> | null = null;
  private conversationFlight: Promise<void> | null = null;

  constructor(options: AppOptions) {
    this.root = options.root;
    this.doc = options.documentRef ?? options.root.ownerDocument;
    this.fetchFn = options.fetchFn;
    this.pollIntervalMs = options.pollIntervalMs ?? DEFAULT_POLL_INTERVAL_MS;
    this.renderShell(options.defaultAgentUrl ?? DEFAULT_AGENT_URL);
  }

  // -- static shell --

  private renderShell(agentUrl: string): void {
    const doc = this.doc;
    this.root.replaceChildren();

    const banner = el(doc, "div", { id: "banner", class: "banner", hidden: "" });
    banner.append(
      el(doc, "span", { id: "banner-text" }, "device agent unreachable"),
      " ",
    );
    const retry = el(doc, "button", { id: "banner-retry", type: "button" }, "retry");
    retry.addEventListener("click", () => void this.refreshAll());
    banner.append(retry);

    const form = el(doc, "form", { id: "connect-form" });
    form.append(
      el(doc, "label", { for: "agent-url" }, "agent URL"),
      el(doc, "input", { id: "agent-url", value: agentUrl }),
      el(doc, "label", { for: "session-secret" }, "session secret"),
      el(doc, "input", { id: "session-secret", type: "password" }),
      el(doc, "button", { id: "connect-btn", type: "submit" }, "connect"),
      el(doc, "div", { id: "connect-error", class: "error" }),
    );
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const url = (this.byId("agent-url") as HTMLInputElement).value.trim();
      const secret = (this.byId("session-secret") as HTMLInputElement).value;
      void this.connect(url, secret);
    });

    const main = el(doc, "div", { id: "main", hidden: "" });
    const contacts = el(doc, "aside", { id: "contacts-pane" });
    contacts.append(
      el(doc, "h2", {}, "contacts"),
      el(doc, "ul", { id: "contact-list" }),
    );

    const convo = el(doc, "section", { id: "conversation-pane" });
    const views = el(doc, "div", { class: "views" });
    const glasses = el(doc, "div", { class: "pane glasses" });
    glasses.append(
      el(doc, "h3", {}, "glasses view (plaintext)"),
      el(doc, "ol", { id: "glasses-entries" }),
    );
    const phone = el(doc, "div", { class: "pane phone" });
    phone.append(
      el(doc, "h3", {}, "phone view (armored ciphertext)"),
      el(doc, "pre", { id: "phone-blobs" }),
    );
    views.append(glasses, phone);

    const compose = el(doc, "form", { id: "compose-form" });
    const input = el(doc, "input", {
      id: "compose-text",
      autocomplete: "off",
      placeholder: "message",
    });
    const sendBtn = el(doc, "button", { id: "send-btn", type: "submit" }, "send");
    sendBtn.disabled = true;
    input.addEventListener("input", () => {
      sendBtn.disabled = input.value.trim() === "";
    });
    compose.append(input, sendBtn, el(doc, "div", { id: "send-error", class: "error" }));
    compose.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.sendCurrent();
    });

    convo.append(
      el(doc, "h2", { id: "peer-title" }, "select a contact"),
      views,
      compose,
    );
    main.append(el(doc, "header", { id: "whoami" }), contacts, convo);
    this.root.append(banner, form, main);
  }

  private byId(id: string): HTMLElement {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node;
  }

  // -- connection --

  async connect(agentUrl: string, secret: string): Promise<void> {
    const errorBox = this.byId("connect-error");
    errorBox.textContent = "";
    const client = new AgentClient(agentUrl.replace(/\/$/, ""), secret, this.fetchFn);
    try {
      const status = await client.status();
      this.client = client;
      this.byId("whoami").textContent = `${status.username} @ ${status.server_url}`;
    } catch (err) {
      if (err instanceof AgentError) {
        errorBox.textContent = err.message;
      } else {
        errorBox.textContent = "device agent unreachable";
      }
      return;
    }
    (this.byId("connect-form") as HTMLElement).hidden = true;
    this.byId("main").hidden = false;
    this.startPolling();
    await this.refreshAll();
  }

  get connected(): boolean {
    return this.client !== null;
  }

  private startPolling(): void {
    const visible = () => this.doc.visibilityState === "visible";
    this.statusPoller = new Poller(
      () => this.refreshContacts(),
      this.pollIntervalMs,
      visible,
    );
    this.conversationPoller = new Poller(
      () => this.refreshConversation(),
      this.pollIntervalMs,
      visible,
    );
    this.statusPoller.start();
    this.conversationPoller.start();
  }

  stop(): void {
    this.statusPoller?.stop();
    this.conversationPoller?.stop();
  }

  // -- polling tasks --

  private async refreshAll(): Promise<void> {
    await this.refreshContacts();
    await this.refreshConversation();
  }

  // Poll ticks and manual refreshes (contact clicks, sends, retry) share
  // one in-flight slot per endpoint: callers wait for the running fetch
  // to clear rather than adding a concurrent one.

  private async refreshContacts(): Promise<void> {
    while (this.contactsFlight) await this.contactsFlight;
    const flight = this.doRefreshContacts();
    this.contactsFlight = flight.finally(() => {
      this.contactsFlight = null;
    });
    await this.contactsFlight;
  }

  private async refreshConversation(): Promise<void> {
    while (this.conversationFlight) await this.conversationFlight;
    const flight = this.doRefreshConversation();
    this.conversationFlight = flight.finally(() => {
      this.conversationFlight = null;
    });
    await this.conversationFlight;
  }

  private async doRefreshContacts(): Promise<void> {
    if (!this.client) return;
    try {
      this.contacts = await this.client.contacts();
      this.setAgentDown(false);
    } catch (err) {
      this.handlePollError(err);
      return;
    }
    this.renderContacts();
  }

  private async doRefreshConversation(): Promise<void> {
    if (!this.client || this.selectedPeer === null) return;
    const peer = this.selectedPeer;
    try {
      // Two endpoints, two truths: plaintext entries for the glasses pane,
      // armored blobs for the phone pane.
      const conversation = await this.client.conversation(peer);
      const phoneView = await this.client.phoneView(peer);
      this.setAgentDown(false);
      if (this.selectedPeer !== peer) return;
      this.conversation = conversation;
      this.phoneView = phoneView;
    } catch (err) {
      this.handlePollError(err);
      return;
    }
    this.renderConversation();
  }

  private handlePollError(err: unknown): void {
    if (err instanceof AgentUnreachableError) {
      this.setAgentDown(true);
      return;
    }
    if (err instanceof AgentError) {
      this.setAgentDown(true, err.message);
      return;
    }
    throw err;
  }

  private setAgentDown(down: boolean, message = "device agent unreachable"): void {
    this.agentDown = down;
    const banner = this.byId("banner");
    banner.hidden = !down;
    if (down) this.byId("banner-text").textContent = message;
  }

  get isAgentDown(): boolean {
    return this.agentDown;
  }

  // -- contacts --

  private renderContacts(): void {
    const list = this.byId("contact-list");
    list.replaceChildren();
    for (const contact of this.contacts) {
      const item = el(this.doc, "li", { "data-peer": contact.username });
      const button = el(
        this.doc,
        "button",
        { type: "button", class: "contact" },
        contact.username,
      );
      if (contact.username === this.selectedPeer) item.classList.add("selected");
      button.addEventListener("click", () => void this.selectContact(contact.username));
      item.append(button, el(this.doc, "small", {}, ` key ${contact.key_id}`));
      list.append(item);
    }
  }

  async selectContact(peer: string): Promise<void> {
    this.selectedPeer = peer;
    this.conversation = null;
    this.phoneView = null;
    this.byId("peer-title").textContent = peer;
    this.byId("send-error").textContent = "";
    this.renderContacts();
    await this.refreshConversation();
  }

  // -- conversation rendering --

  private renderConversation(): void {
    const entries = this.byId("glasses-entries");
    entries.replaceChildren();
    for (const entry of this.conversation?.entries ?? []) {
      const item = el(this.doc, "li", { class: `entry ${entry.direction}` });
      const who = entry.direction === "sent" ? "me" : this.conversation!.peer;
      item.append(el(this.doc, "span", { class: "who" }, `${who}: `));
      if (entry.flag !== null) {
        item.append(el(this.doc, "em", { class: "flag" }, `[${entry.flag}]`));
      } else {
        item.append(el(this.doc, "span", { class: "text" }, entry.text ?? ""));
      }
      entries.append(item);
    }
    // Verbatim, untransformed: the pane is evidence of what the phone holds.
    this.byId("phone-blobs").textContent = (this.phoneView?.messages ?? []).join("\n\n");
  }

  // -- compose --

  private async sendCurrent(): Promise<void> {
    if (!this.client || this.selectedPeer === null) return;
    const input = this.byId("compose-text") as HTMLInputElement;
    const sendBtn = this.byId("send-btn") as HTMLButtonElement;
    const errorBox = this.byId("send-error");
    const text = input.value;
    if (text.trim() === "") return;
    errorBox.textContent = "";
    sendBtn.disabled = true;
    try {
      await this.client.send(this.selectedPeer, text);
      input.value = "";
      await this.refreshConversation();
    } catch (err) {
      sendBtn.disabled = input.value.trim() === "";
      if (err instanceof AgentError) {
        errorBox.textContent = err.message;
      } else if (err instanceof AgentUnreachableError) {
        errorBox.textContent = "device agent unreachable";
        this.setAgentDown(true);
      } else {
        throw err;
      }
    }
  }
}
