import { describe, expect, it } from "vitest";

import {
  decodeMessage,
  decodePayload,
  encodeFramePayload,
  encodeJsonPayload,
  FORMAT_RAW,
  MAX_PAYLOAD,
  prefixPayload,
  ProtocolError,
  TYPE_FRAME,
  TYPE_JSON,
} from "../src/protocol.js";

function hex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

function fromHex(s: string): Uint8Array {
  const clean = s.replace(/\s+/g, "");
  const out = new Uint8Array(clean.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(clean.slice(2 * i, 2 * i + 2), 16);
  }
  return out;
}

// Golden wire bytes shared with the Python service test-suite.  The TCP form
// is `u32be length | payload`; the WebSocket form is the bare payload.
const PING_MESSAGE_HEX =
  "0000000f" + "01" + hex(new TextEncoder().encode('{"cmd":"ping"}'));
const FRAME_MESSAGE_HEX =
  "00000019" + "02" + "00000002" + "00000001" + "00000007" + "00000000" +
  "0000000000000000";

describe("golden vectors", () => {
  it("encodes the ping command to the exact TCP bytes", () => {
    const payload = encodeJsonPayload({ cmd: "ping" });
    expect(hex(prefixPayload(payload))).toBe(PING_MESSAGE_HEX);
  });

  it("decodes the golden ping bytes", () => {
    const got = decodeMessage(fromHex(PING_MESSAGE_HEX));
    expect(got).not.toBeNull();
    expect(got!.consumed).toBe(4 + 15);
    expect(got!.decoded).toEqual({ kind: "json", msg: { cmd: "ping" } });
  });

  it("round-trips the golden 2x1 raw frame", () => {
    const raw = fromHex(FRAME_MESSAGE_HEX);
    const got = decodeMessage(raw);
    expect(got).not.toBeNull();
    expect(got!.consumed).toBe(raw.length);
    const decoded = got!.decoded;
    expect(decoded.kind).toBe("frame");
    if (decoded.kind !== "frame") return;
    expect(decoded.frame.width).toBe(2);
    expect(decoded.frame.height).toBe(1);
    expect(decoded.frame.frameId).toBe(7);
    expect(decoded.frame.format).toBe(FORMAT_RAW);
    expect(decoded.frame.pixels).toEqual(new Uint8Array(8));
    expect(hex(prefixPayload(encodeFramePayload(decoded.frame)))).toBe(
      FRAME_MESSAGE_HEX,
    );
  });
});

describe("payload round-trips", () => {
  it("JSON payloads survive encode/decode", () => {
    const msg = {
      cmd: "set_camera",
      position: [1.5, -2, 3e8],
      target: [0, 0, 0],
      up: [0, 1, 0],
      fov: 45,
      note: "uñïcödé ✓",
    };
    const payload = encodeJsonPayload(msg);
    expect(payload[0]).toBe(TYPE_JSON);
    expect(decodePayload(payload)).toEqual({ kind: "json", msg });
  });

  it("frame payloads survive encode/decode", () => {
    const pixels = new Uint8Array(32 * 16 * 4);
    for (let i = 0; i < pixels.length; i++) pixels[i] = (i * 7 + 3) & 0xff;
    const frame = {
      width: 32,
      height: 16,
      frameId: 123456789,
      format: FORMAT_RAW,
      pixels,
    };
    const payload = encodeFramePayload(frame);
    expect(payload[0]).toBe(TYPE_FRAME);
    expect(payload.length).toBe(1 + 16 + pixels.length);
    expect(decodePayload(payload)).toEqual({ kind: "frame", frame });
  });
});

describe("malformed input", () => {
  it("rejects empty payloads", () => {
    expect(() => decodePayload(new Uint8Array(0))).toThrow(ProtocolError);
  });

  it("rejects unknown type bytes", () => {
    for (const type of [0x00, 0x03, 0x7f, 0xff]) {
      expect(() => decodePayload(new Uint8Array([type, 1, 2, 3]))).toThrow(
        /unknown message type/,
      );
    }
  });

  it("rejects invalid UTF-8 and invalid JSON", () => {
    expect(() =>
      decodePayload(new Uint8Array([TYPE_JSON, 0xff, 0xfe, 0x01])),
    ).toThrow(/UTF-8/);
    const notJson = new TextEncoder().encode("{nope");
    const payload = new Uint8Array([TYPE_JSON, ...notJson]);
    expect(() => decodePayload(payload)).toThrow(/not valid JSON/);
  });

  it("rejects truncated frame headers", () => {
    const good = encodeFramePayload({
      width: 2,
      height: 2,
      frameId: 1,
      format: FORMAT_RAW,
      pixels: new Uint8Array(16),
    });
    expect(() => decodePayload(good.subarray(0, 4))).toThrow(/frame header/);
    expect(() => decodePayload(good.subarray(0, 16))).toThrow(/frame header/);
  });

  it("rejects absurd stream lengths without consuming", () => {
    const bad = new Uint8Array([0xff, 0xff, 0xff, 0xff, 0x01]);
    expect(() => decodeMessage(bad)).toThrow(/invalid message length/);
    const zero = new Uint8Array([0, 0, 0, 0, 0x01]);
    expect(() => decodeMessage(zero)).toThrow(/invalid message length/);
    expect(MAX_PAYLOAD).toBe(64 * 1024 * 1024);
  });

  it("returns null for incomplete stream data", () => {
    const full = prefixPayload(encodeJsonPayload({ cmd: "ping" }));
    for (const cut of [0, 1, 3, 4, full.length - 1]) {
      expect(decodeMessage(full.subarray(0, cut))).toBeNull();
    }
  });

  it("decodes back-to-back messages one at a time", () => {
    const first = prefixPayload(encodeJsonPayload({ cmd: "ping" }));
    const second = prefixPayload(encodeJsonPayload({ cmd: "stats" }));
    const joined = new Uint8Array(first.length + second.length);
    joined.set(first, 0);
    joined.set(second, first.length);
    const a = decodeMessage(joined)!;
    expect(a.decoded).toEqual({ kind: "json", msg: { cmd: "ping" } });
    const b = decodeMessage(joined.subarray(a.consumed))!;
    expect(b.decoded).toEqual({ kind: "json", msg: { cmd: "stats" } });
    expect(a.consumed + b.consumed).toBe(joined.length);
  });
});
