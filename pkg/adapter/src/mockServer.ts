import http from "node:http";
import { AddressInfo } from "node:net";

import {
  ChatPayload,
  DEFAULT_SEED,
  FINGERPRINTS,
  chatReply,
  embedText,
  promptFingerprint,
  splitChatTexts,
  stableStringify,
} from "./mockWire";

export interface MockServerOptions {
  port?: number;
  seed?: string;
  // payload-sha256 of a data URI -> label; anything unknown gets defaultImageLabel
  imageLabels?: Record<string, string>;
  defaultImageLabel?: string;
}

interface EmbeddingsPayload {
  model?: string;
  input?: unknown;
}

export class MockWireServer {
  readonly seed: string;
  private readonly imageLabels: Map<string, string>;
  private readonly defaultImageLabel: string;
  private readonly requestedPort: number;
  private server: http.Server | null = null;

  constructor(opts: MockServerOptions = {}) {
    this.seed = opts.seed ?? DEFAULT_SEED;
    this.imageLabels = new Map(Object.entries(opts.imageLabels ?? {}));
    this.defaultImageLabel = opts.defaultImageLabel ?? "chart";
    this.requestedPort = opts.port ?? 0;
  }

  get port(): number {
    if (!this.server) throw new Error("server not started");
    return (this.server.address() as AddressInfo).port;
  }

  get baseUrl(): string {
    return `http://127.0.0.1:${this.port}`;
  }

  start(): Promise<void> {
    this.server = http.createServer((req, res) => this.handle(req, res));
    return new Promise((resolve) => {
      this.server!.listen(this.requestedPort, "127.0.0.1", () => resolve());
    });
  }

  stop(): Promise<void> {
    return new Promise((resolve, reject) => {
      if (!this.server) return resolve();
      this.server.close((err) => (err ? reject(err) : resolve()));
      this.server = null;
    });
  }

  private handle(req: http.IncomingMessage, res: http.ServerResponse): void {
    if (req.method !== "POST") {
      this.send(res, 404, { error: { message: `no route ${req.method} ${req.url}` } });
      return;
    }
    const chunks: Buffer[] = [];
    req.on("data", (chunk) => chunks.push(chunk));
    req.on("end", () => {
      let payload: unknown;
      try {
        payload = JSON.parse(Buffer.concat(chunks).toString("utf-8"));
      } catch {
        this.send(res, 400, { error: { message: "request body is not JSON" } });
        return;
      }
      const url = req.url ?? "";
      if (url.endsWith("/v1/embeddings")) {
        this.embeddings(res, payload as EmbeddingsPayload);
      } else if (url.endsWith("/v1/chat/completions")) {
        this.chat(res, payload as ChatPayload);
      } else {
        this.send(res, 404, { error: { message: `no route ${url}` } });
      }
    });
  }

  private embeddings(res: http.ServerResponse, payload: EmbeddingsPayload): void {
    const inputs = payload.input;
    if (!Array.isArray(inputs) || !inputs.length) {
      this.send(res, 400, { error: { message: "input must be a non-empty array" } });
      return;
    }
    const data: Array<{ object: string; index: number; embedding: number[] }> = [];
    for (let i = 0; i < inputs.length; i++) {
      const item = inputs[i];
      if (typeof item !== "string") {
        this.send(res, 400, { error: { message: `input[${i}] is not a string` } });
        return;
      }
      data.push({
        object: "embedding",
        index: i,
        embedding: embedText(this.seed, item, this.imageLabels, this.defaultImageLabel),
      });
    }
    this.send(res, 200, { object: "list", model: payload.model ?? "", data });
  }

  private chat(res: http.ServerResponse, payload: ChatPayload): void {
    const { system, user } = splitChatTexts(payload);
    const fingerprint = promptFingerprint(system);
    const role = FINGERPRINTS[fingerprint];
    if (!role) {
      this.send(res, 400, {
        error: { message: `unknown system prompt fingerprint: ${fingerprint}` },
      });
      return;
    }
    this.send(res, 200, {
      object: "chat.completion",
      model: payload.model ?? "",
      choices: [
        {
          index: 0,
          message: { role: "assistant", content: chatReply(role, user) },
          finish_reason: "stop",
        },
      ],
    });
  }

  private send(res: http.ServerResponse, status: number, obj: unknown): void {
    const body = Buffer.from(stableStringify(obj), "utf-8");
    res.writeHead(status, {
      "Content-Type": "application/json",
      "Content-Length": body.length,
    });
    res.end(body);
  }
}
