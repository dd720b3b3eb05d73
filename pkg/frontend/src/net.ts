/**
 * WebSocket connection to the render service's gateway.
 *
 * The gateway maps one binary WebSocket message to one protocol payload in
 * each direction, so this layer just encodes commands, decodes incoming
 * payloads and fans them out to handlers.  It works with both the browser's
 * `WebSocket` and Node implementations that follow the same event surface.
 */

import { Command, validateCommand } from "./commands.js";
import { decodePayload, encodeJsonPayload, Frame } from "./protocol.js";

/** The part of the WebSocket API the connection relies on. */
export interface SocketLike {
  binaryType: string;
  send(data: Uint8Array): void;
  close(): void;
  addEventListener(
    type: "message",
    listener: (event: { data: unknown }) => void,
  ): void;
  addEventListener(type: "close" | "error", listener: () => void): void;
}

export type JsonHandler = (msg: unknown) => void;
export type FrameHandler = (frame: Frame) => void;

function toBytes(data: unknown): Uint8Array {
  if (data instanceof Uint8Array) {
    return data;
  }
  if (data instanceof ArrayBuffer) {
    return new Uint8Array(data);
  }
  throw new TypeError("expected a binary WebSocket message");
}

export class ViewerConnection {
  private jsonHandlers = new Set<JsonHandler>();
  private frameHandlers = new Set<FrameHandler>();
  private closed = false;

  constructor(private sock: SocketLike) {
    sock.binaryType = "arraybuffer";
    sock.addEventListener("message", (event) => {
      const decoded = decodePayload(toBytes(event.data));
      if (decoded.kind === "frame") {
        for (const h of this.frameHandlers) h(decoded.frame);
      } else {
        for (const h of this.jsonHandlers) h(decoded.msg);
      }
    });
    sock.addEventListener("close", () => {
      this.closed = true;
    });
  }

  onJson(handler: JsonHandler): () => void {
    this.jsonHandlers.add(handler);
    return () => this.jsonHandlers.delete(handler);
  }

  onFrame(handler: FrameHandler): () => void {
    this.frameHandlers.add(handler);
    return () => this.frameHandlers.delete(handler);
  }

  send(cmd: Command): void {
    validateCommand(cmd);
    this.sock.send(encodeJsonPayload(cmd));
  }

  /** Resolve with the first JSON message matching `predicate`. */
  waitForJson(
    predicate: (msg: unknown) => boolean,
    timeoutMs = 30_000,
  ): Promise<unknown> {
    return new Promise((resolve, reject) => {
      const off = this.onJson((msg) => {
        if (predicate(msg)) {
          clearTimeout(timer);
          off();
          resolve(msg);
        }
      });
      const timer = setTimeout(() => {
        off();
        reject(new Error("timed out waiting for a matching message"));
      }, timeoutMs);
    });
  }

  /** Send a command and resolve with the service's next reply to it. */
  request(cmd: Command, timeoutMs = 30_000): Promise<unknown> {
    const replyFor = (msg: unknown): boolean => {
      if (typeof msg !== "object" || msg === null) return false;
      const m = msg as Record<string, unknown>;
      // Replies either acknowledge the command ("of"/"in_reply_to") or are
      // its direct response (pong, capabilities, volume_loaded, stats...).
      return m.of === cmd.cmd || m.in_reply_to === cmd.cmd || m.cmd !== "frame_stats";
    };
    const reply = this.waitForJson(replyFor, timeoutMs);
    this.send(cmd);
    return reply;
  }

  close(): void {
    if (!this.closed) {
      this.closed = true;
      this.sock.close();
    }
  }
}
