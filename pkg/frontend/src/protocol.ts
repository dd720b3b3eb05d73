/**
 * Binary codec for the volume streaming service.
 *
 * A payload is one type byte followed by the body:
 *
 *   0x01 JSON   UTF-8 encoded JSON value.
 *   0x02 frame  u32be width | u32be height | u32be frame_id | u32be format,
 *               then the pixel bytes (format 0 = raw RGBA8, 1 = PNG).
 *
 * Over WebSocket each binary message carries exactly one payload.  Over raw
 * TCP every payload is prefixed with a u32be length that counts the type
 * byte, so a message is `u32be length | payload`.
 */

export const TYPE_JSON = 0x01;
export const TYPE_FRAME = 0x02;

export const FORMAT_RAW = 0;
export const FORMAT_PNG = 1;

/** Largest payload (type byte included) either side will accept. */
export const MAX_PAYLOAD = 64 * 1024 * 1024;

const FRAME_HEADER_BYTES = 16;

export class ProtocolError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ProtocolError";
  }
}

export interface Frame {
  width: number;
  height: number;
  frameId: number;
  format: number;
  pixels: Uint8Array;
}

export type Decoded =
  | { kind: "json"; msg: unknown }
  | { kind: "frame"; frame: Frame };

function writeU32be(out: Uint8Array, offset: number, value: number): void {
  new DataView(out.buffer, out.byteOffset, out.byteLength).setUint32(
    offset,
    value >>> 0,
  );
}

/** Encode a JSON value as a `type | body` payload (WebSocket message body). */
export function encodeJsonPayload(msg: unknown): Uint8Array {
  const body = new TextEncoder().encode(JSON.stringify(msg));
  const out = new Uint8Array(1 + body.length);
  out[0] = TYPE_JSON;
  out.set(body, 1);
  if (out.length > MAX_PAYLOAD) {
    throw new ProtocolError(`payload of ${out.length} bytes exceeds limit`);
  }
  return out;
}

/** Encode a frame as a `type | body` payload (WebSocket message body). */
export function encodeFramePayload(frame: Frame): Uint8Array {
  const out = new Uint8Array(1 + FRAME_HEADER_BYTES + frame.pixels.length);
  out[0] = TYPE_FRAME;
  writeU32be(out, 1, frame.width);
  writeU32be(out, 5, frame.height);
  writeU32be(out, 9, frame.frameId);
  writeU32be(out, 13, frame.format);
  out.set(frame.pixels, 1 + FRAME_HEADER_BYTES);
  if (out.length > MAX_PAYLOAD) {
    throw new ProtocolError(`payload of ${out.length} bytes exceeds limit`);
  }
  return out;
}

/** Decode one `type | body` payload, e.g. a binary WebSocket message. */
export function decodePayload(payload: Uint8Array): Decoded {
  if (payload.length < 1) {
    throw new ProtocolError("empty payload");
  }
  if (payload.length > MAX_PAYLOAD) {
    throw new ProtocolError(`payload of ${payload.length} bytes exceeds limit`);
  }
  const type = payload[0];
  const body = payload.subarray(1);
  if (type === TYPE_JSON) {
    let text: string;
    try {
      text = new TextDecoder("utf-8", { fatal: true }).decode(body);
    } catch {
      throw new ProtocolError("JSON payload is not valid UTF-8");
    }
    try {
      return { kind: "json", msg: JSON.parse(text) };
    } catch {
      throw new ProtocolError("JSON payload is not valid JSON");
    }
  }
  if (type === TYPE_FRAME) {
    if (body.length < FRAME_HEADER_BYTES) {
      throw new ProtocolError(
        `frame header needs ${FRAME_HEADER_BYTES} bytes, got ${body.length}`,
      );
    }
    const dv = new DataView(body.buffer, body.byteOffset, body.byteLength);
    return {
      kind: "frame",
      frame: {
        width: dv.getUint32(0),
        height: dv.getUint32(4),
        frameId: dv.getUint32(8),
        format: dv.getUint32(12),
        pixels: body.subarray(FRAME_HEADER_BYTES),
      },
    };
  }
  throw new ProtocolError(`unknown message type 0x${type.toString(16)}`);
}

/** Wrap a payload in the u32be length prefix used by the raw TCP transport. */
export function prefixPayload(payload: Uint8Array): Uint8Array {
  if (payload.length < 1 || payload.length > MAX_PAYLOAD) {
    throw new ProtocolError(`cannot frame payload of ${payload.length} bytes`);
  }
  const out = new Uint8Array(4 + payload.length);
  writeU32be(out, 0, payload.length);
  out.set(payload, 4);
  return out;
}

/**
 * Decode one length-prefixed message from the front of a TCP byte stream.
 *
 * Returns `null` when `data` does not yet hold a complete message, otherwise
 * the decoded payload and the number of bytes consumed.
 */
export function decodeMessage(
  data: Uint8Array,
): { decoded: Decoded; consumed: number } | null {
  if (data.length < 4) {
    return null;
  }
  const length = new DataView(
    data.buffer,
    data.byteOffset,
    data.byteLength,
  ).getUint32(0);
  if (length < 1 || length > MAX_PAYLOAD) {
    throw new ProtocolError(`invalid message length ${length}`);
  }
  if (data.length < 4 + length) {
    return null;
  }
  return {
    decoded: decodePayload(data.subarray(4, 4 + length)),
    consumed: 4 + length,
  };
}
