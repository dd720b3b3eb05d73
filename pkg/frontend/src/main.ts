/**
 * Browser entry point: connects to the render service's WebSocket gateway,
 * streams frames onto a canvas, and turns pointer input into camera and
 * transfer-function commands.
 *
 * Query parameters: `?ws=host:port` points at the gateway (defaults to the
 * page host on port 9700) and `?volume=<spec>` picks the dataset (a server
 * path or a procedural spec such as `noise:128`).
 */

import { OrbitCamera } from "./camera.js";
import {
  hello,
  loadVolume,
  requestFrame,
  setContinuous,
  setPipeline,
  setSettings,
} from "./commands.js";
import { ViewerConnection } from "./net.js";
import { Frame, FORMAT_PNG, FORMAT_RAW } from "./protocol.js";
import { SessionTracker } from "./state.js";
import { TransferFunctionModel } from "./tf.js";

const PIPELINES = ["ea-default", "mip"];

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

function drawRawFrame(ctx: CanvasRenderingContext2D, frame: Frame): void {
  if (frame.pixels.length !== frame.width * frame.height * 4) {
    throw new Error("raw frame size does not match its header");
  }
  const image = new ImageData(
    new Uint8ClampedArray(frame.pixels.slice().buffer),
    frame.width,
    frame.height,
  );
  ctx.canvas.width = frame.width;
  ctx.canvas.height = frame.height;
  ctx.putImageData(image, 0, 0);
}

async function drawPngFrame(
  ctx: CanvasRenderingContext2D,
  frame: Frame,
): Promise<void> {
  const blob = new Blob([frame.pixels.slice().buffer], { type: "image/png" });
  const bitmap = await createImageBitmap(blob);
  ctx.canvas.width = bitmap.width;
  ctx.canvas.height = bitmap.height;
  ctx.drawImage(bitmap, 0, 0);
  bitmap.close();
}

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const gateway = params.get("ws") ?? `${window.location.hostname || "127.0.0.1"}:9700`;
  const volume = params.get("volume") ?? "noise:128";

  const canvas = byId<HTMLCanvasElement>("view");
  const status = byId<HTMLElement>("status");
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("canvas 2d context unavailable");

  const sock = new WebSocket(`ws://${gateway}`);
  const conn = new ViewerConnection(sock as never);
  const camera = new OrbitCamera();
  const tracker = new SessionTracker();
  let pipelineIndex = 0;

  const pushCamera = (): void => conn.send(camera.command());

  conn.onFrame((frame) => {
    tracker.ingestFrame(frame);
    if (frame.format === FORMAT_RAW) {
      drawRawFrame(ctx, frame);
    } else if (frame.format === FORMAT_PNG) {
      void drawPngFrame(ctx, frame);
    }
  });
  conn.onJson((msg) => {
    tracker.ingestJson(msg);
    const m = msg as Record<string, unknown>;
    if (m.cmd === "error") {
      status.textContent = `error: ${String(m.message)}`;
    } else if (m.cmd === "frame_stats" && tracker.lastStats !== null) {
      const r = tracker.lastStats.render;
      status.textContent =
        `frame ${tracker.lastFrameId} | ${r.backend} | ` +
        `${r.renderMs.toFixed(1)} ms | fallback ${r.fallbackSamples} | ` +
        (tracker.converged ? "converged" : "streaming");
    } else if (m.cmd === "volume_loaded") {
      const dims = m.dims as number[];
      const voxel = m.voxel_size as number[];
      camera.frame([
        dims[0] * voxel[0],
        dims[1] * voxel[1],
        dims[2] * voxel[2],
      ]);
      pushCamera();
      conn.send(setContinuous(true));
    }
  });

  sock.addEventListener("open", () => {
    status.textContent = `connected to ${gateway}`;
    conn.send(hello());
    conn.send(setSettings({ width: canvas.width, height: canvas.height }));
    conn.send(
      volume.includes(":") || !volume.includes("/")
        ? loadVolume({ procedural: volume })
        : loadVolume({ path: volume }),
    );
  });
  sock.addEventListener("close", () => {
    status.textContent = "disconnected";
  });

  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (e) => {
    dragging = true;
    lastX = e.clientX;
    lastY = e.clientY;
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointerup", () => {
    dragging = false;
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    const dx = e.clientX - lastX;
    const dy = e.clientY - lastY;
    lastX = e.clientX;
    lastY = e.clientY;
    if (e.shiftKey) {
      const scale = camera.distance / 300;
      camera.pan(-dx * scale, dy * scale);
    } else {
      camera.orbit(-dx * 0.4, dy * 0.4);
    }
    pushCamera();
  });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    camera.zoom(e.deltaY > 0 ? 1.1 : 1 / 1.1);
    pushCamera();
  });
  window.addEventListener("keydown", (e) => {
    if (e.key === "p") {
      pipelineIndex = (pipelineIndex + 1) % PIPELINES.length;
      conn.send(setPipeline(PIPELINES[pipelineIndex]));
    } else if (e.key === "f") {
      conn.send(requestFrame("png"));
    } else if (e.key === "t") {
      // A quick soft-tissue style preset to demonstrate TF editing.
      const tf = new TransferFunctionModel();
      tf.movePoint(0, 0, [0, 0, 0, 0]);
      tf.addPoint(0.3, [0.8, 0.4, 0.2, 0.05]);
      tf.addPoint(0.7, [1.0, 0.9, 0.6, 0.4]);
      tf.movePoint(tf.size - 1, 1, [1, 1, 1, 0.9]);
      conn.send(tf.command());
    }
  });
}

main();
