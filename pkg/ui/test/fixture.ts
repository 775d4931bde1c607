/** Scripted device-agent fixture: a real HTTP server speaking the agent's
 * wire contract with canned state. No cryptography happens here; the
 * armored blobs are stage props built from a fixed alphabet so they can
 * never contain a sent plaintext.
 */

import { createServer, IncomingMessage, Server, ServerResponse } from "node:http";
import type { Socket } from "node:net";
import type { AddressInfo } from "node:net";

export interface FixtureEntry {
  direction: "sent" | "received";
  text: string | null;
  timestamp: number;
  sequence: number | null;
  flag: string | null;
}

const ARMOR_BODY =
  "QUJDREVGR0hJSktMTU5PUFFSU1RVVldYWVphYmNkZWZnaGlqa2xtbm9wcXJzdHV2";

export function fakeArmor(counter: number): string {
  return [
    "-----BEGIN ARSECURE MESSAGE-----",
    ARMOR_BODY,
    ARMOR_BODY.slice(0, 24) + String(counter).padStart(4, "0") + "==",
    "-----END ARSECURE MESSAGE-----",
  ].join("\n");
}

export class ScriptedAgent {
  readonly secret = "fixture-secret-0123";
  status = {
    username: "bob",
    server_url: "http://127.0.0.1:7070",
    contacts: 2,
    history_entries: 0,
    cursor: 0,
    version: "0.1.0",
  };
  contacts = [
    { username: "alice", key_id: "57c0060ddeb9f83a", pinned_at: 1700000000 },
    { username: "mallory", key_id: "99ee00ddcc88aa11", pinned_at: 1700000100 },
  ];
  conversations = new Map<string, FixtureEntry[]>();
  phoneViews = new Map<string, string[]>();

  /** Scripted failure: send to this peer answers with this error. */
  sendFailure: { peer: string; status: number; error: string } | null = null;
  /** Artificial latency per route prefix, for overlap tests. */
  delayMs: Partial<Record<"status" | "contacts" | "conversation" | "phone-view", number>> = {};

  requestCounts: Record<string, number> = {};
  maxConcurrent: Record<string, number> = {};
  private active: Record<string, number> = {};

  private server: Server | null = null;
  private sockets = new Set<Socket>();
  private port = 0;
  private sendCounter = 0;

  get url(): string {
    return `http://127.0.0.1:${this.port}`;
  }

  async start(): Promise<string> {
    const server = createServer((req, res) => void this.handle(req, res));
    server.on("connection", (socket) => {
      this.sockets.add(socket);
      socket.on("close", () => this.sockets.delete(socket));
    });
    await new Promise<void>((resolve) =>
      server.listen(this.port, "127.0.0.1", resolve),
    );
    this.port = (server.address() as AddressInfo).port;
    this.server = server;
    return this.url;
  }

  /** Stop accepting and kill live sockets so clients fail immediately. */
  async stop(): Promise<void> {
    const server = this.server;
    if (!server) return;
    this.server = null;
    const closed = new Promise<void>((resolve) =>
      server.close(() => resolve()),
    );
    for (const socket of this.sockets) socket.destroy();
    this.sockets.clear();
    await closed;
  }

  seedConversation(peer: string, entries: FixtureEntry[], blobs: string[]): void {
    this.conversations.set(peer, entries);
    this.phoneViews.set(peer, blobs);
  }

  private route(path: string): string {
    if (path === "/device/v1/status") return "status";
    if (path === "/device/v1/contacts") return "contacts";
    if (path === "/device/v1/send") return "send";
    if (path.startsWith("/device/v1/conversation/")) return "conversation";
    if (path.startsWith("/device/v1/phone-view/")) return "phone-view";
    return "unknown";
  }

  private async handle(req: IncomingMessage, res: ServerResponse): Promise<void> {
    const path = (req.url ?? "").split("?", 1)[0];
    const route = this.route(path);
    this.requestCounts[route] = (this.requestCounts[route] ?? 0) + 1;
    this.active[route] = (this.active[route] ?? 0) + 1;
    this.maxConcurrent[route] = Math.max(
      this.maxConcurrent[route] ?? 0,
      this.active[route],
    );
    try {
      const delay = this.delayMs[route as keyof typeof this.delayMs];
      if (delay) await new Promise((resolve) => setTimeout(resolve, delay));
      await this.respond(req, res, path, route);
    } finally {
      this.active[route] -= 1;
    }
  }

  private async respond(
    req: IncomingMessage,
    res: ServerResponse,
    path: string,
    route: string,
  ): Promise<void> {
    const json = (status: number, body: unknown) => {
      const payload = JSON.stringify(body);
      res.writeHead(status, { "Content-Type": "application/json" });
      res.end(payload);
    };

    if (req.headers["x-device-session"] !== this.secret) {
      json(401, { error: "unauthorized" });
      return;
    }
    if (route === "status") {
      json(200, this.status);
    } else if (route === "contacts") {
      json(200, { contacts: this.contacts });
    } else if (route === "conversation") {
      const peer = decodeURIComponent(path.slice("/device/v1/conversation/".length));
      json(200, { peer, entries: this.conversations.get(peer) ?? [] });
    } else if (route === "phone-view") {
      const peer = decodeURIComponent(path.slice("/device/v1/phone-view/".length));
      json(200, { peer, messages: this.phoneViews.get(peer) ?? [] });
    } else if (route === "send" && req.method === "POST") {
      const body = await this.readJson(req);
      const recipient = String(body.recipient ?? "");
      const text = String(body.text ?? "");
      if (this.sendFailure && this.sendFailure.peer === recipient) {
        json(this.sendFailure.status, { error: this.sendFailure.error });
        return;
      }
      this.sendCounter += 1;
      const entries = this.conversations.get(recipient) ?? [];
      entries.push({
        direction: "sent",
        text,
        timestamp: 1700000200 + this.sendCounter,
        sequence: this.sendCounter,
        flag: null,
      });
      this.conversations.set(recipient, entries);
      const blobs = this.phoneViews.get(recipient) ?? [];
      blobs.push(fakeArmor(this.sendCounter));
      this.phoneViews.set(recipient, blobs);
      json(201, {
        message_id: `id${String(this.sendCounter).padStart(4, "0")}`,
        sequence: this.sendCounter,
      });
    } else {
      json(404, { error: "unknown route" });
    }
  }

  private async readJson(req: IncomingMessage): Promise<Record<string, unknown>> {
    const chunks: Buffer[] = [];
    for await (const chunk of req) chunks.push(chunk as Buffer);
    try {
      const parsed = JSON.parse(Buffer.concat(chunks).toString("utf-8"));
      return typeof parsed === "object" && parsed !== null ? parsed : {};
    } catch {
      return {};
    }
  }
}
