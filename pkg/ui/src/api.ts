/** Typed client for the device agent's localhost HTTP API.
 *
 * Every byte the UI renders comes out of these responses; the UI layer
 * holds no keys and performs no cryptography.
 */

export interface AgentStatus {
  username: string;
  server_url: string;
  contacts: number;
  history_entries: number;
  cursor: number;
  version: string;
}

export interface Contact {
  username: string;
  key_id: string;
  pinned_at: number;
}

export interface ConversationEntry {
  direction: "sent" | "received";
  text: string | null;
  timestamp: number;
  sequence: number | null;
  flag: string | null;
}

export interface Conversation {
  peer: string;
  entries: ConversationEntry[];
}

export interface PhoneView {
  peer: string;
  messages: string[];
}

export interface SendReceipt {
  message_id: string;
  sequence: number;
}

/** The agent answered with an error body; `message` is verbatim. */
export class AgentError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "AgentError";
  }
}

/** The agent did not answer at all (down, refused, network failure). */
export class AgentUnreachableError extends Error {
  constructor() {
    super("device agent unreachable");
    this.name = "AgentUnreachableError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class AgentClient {
  constructor(
    readonly baseUrl: string,
    private readonly secret: string,
    private readonly fetchFn: FetchLike = (...args) => globalThis.fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = {
      method,
      headers: { "X-Device-Session": this.secret },
    };
    if (body !== undefined) {
      init.headers = { ...init.headers, "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch {
      throw new AgentUnreachableError();
    }
    let payload: unknown;
    try {
      payload = await response.json();
    } catch {
      throw new AgentError(response.status, "malformed agent response");
    }
    if (!response.ok) {
      const message =
        typeof (payload as { error?: unknown }).error === "string"
          ? (payload as { error: string }).error
          : `agent error ${response.status}`;
      throw new AgentError(response.status, message);
    }
    return payload as T;
  }

  status(): Promise<AgentStatus> {
    return this.request<AgentStatus>("GET", "/device/v1/status");
  }

  async contacts(): Promise<Contact[]> {
    const payload = await this.request<{ contacts: Contact[] }>(
      "GET",
      "/device/v1/contacts",
    );
    return payload.contacts;
  }

  conversation(peer: string): Promise<Conversation> {
    return this.request<Conversation>(
      "GET",
      `/device/v1/conversation/${encodeURIComponent(peer)}`,
    );
  }

  phoneView(peer: string): Promise<PhoneView> {
    return this.request<PhoneView>(
      "GET",
      `/device/v1/phone-view/${encodeURIComponent(peer)}`,
    );
  }

  send(recipient: string, text: string): Promise<SendReceipt> {
    return this.request<SendReceipt>("POST", "/device/v1/send", {
      recipient,
      text,
    });
  }
}
