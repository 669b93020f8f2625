/**
 * Browser shell: a segmentation canvas you paint with class brushes on the
 * left, the rendered head with orbit controls on the right.  All model work
 * happens server side; this file only moves pixels and wires events.
 */

import { createApi, PaletteEntry, StylePayload } from "./api.js";
import {
  brushStroke,
  CanvasState,
  createCanvas,
  NUM_CLASSES,
  PathPoint,
  undo,
} from "./canvas.js";
import { createEditController, DecodedSeg } from "./controller.js";
import { base64ToBytes, bytesToBase64 } from "./png.js";
import { createViewer } from "./viewer.js";

const CANVAS_SIZE = 128;
const VIEW_SCALE = 3;

/** Fallback colors used until a /segment response supplies the palette. */
function defaultPalette(): Map<number, [number, number, number]> {
  const palette = new Map<number, [number, number, number]>();
  palette.set(0, [24, 24, 24]);
  for (let cls = 1; cls < NUM_CLASSES; cls++) {
    const hue = ((cls - 1) * 360) / (NUM_CLASSES - 1);
    palette.set(cls, hslToRgb(hue, 0.55, 0.55));
  }
  return palette;
}

function hslToRgb(h: number, s: number, l: number): [number, number, number] {
  const c = (1 - Math.abs(2 * l - 1)) * s;
  const x = c * (1 - Math.abs(((h / 60) % 2) - 1));
  const m = l - c / 2;
  const [r, g, b] =
    h < 60 ? [c, x, 0] : h < 120 ? [x, c, 0] : h < 180 ? [0, c, x]
    : h < 240 ? [0, x, c] : h < 300 ? [x, 0, c] : [c, 0, x];
  return [Math.round((r + m) * 255), Math.round((g + m) * 255), Math.round((b + m) * 255)];
}

/** Decode an 8-bit grayscale PNG through the browser's own image pipeline. */
async function decodeSegBrowser(png: Uint8Array): Promise<DecodedSeg> {
  const bitmap = await createImageBitmap(new Blob([png as BufferSource], { type: "image/png" }));
  const scratch = document.createElement("canvas");
  scratch.width = bitmap.width;
  scratch.height = bitmap.height;
  const ctx = scratch.getContext("2d", { willReadFrequently: true })!;
  ctx.drawImage(bitmap, 0, 0);
  const data = ctx.getImageData(0, 0, bitmap.width, bitmap.height).data;
  const pixels = new Uint8Array(bitmap.width * bitmap.height);
  for (let i = 0; i < pixels.length; i++) pixels[i] = data[i * 4];
  return { width: bitmap.width, height: bitmap.height, pixels };
}

function require<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing #${id}`);
  return el as T;
}

export function startApp(): void {
  const segCanvasEl = require<HTMLCanvasElement>("seg-canvas");
  const renderImg = require<HTMLImageElement>("render-view");
  const classBar = require<HTMLDivElement>("class-bar");
  const brushInput = require<HTMLInputElement>("brush-radius");
  const undoButton = require<HTMLButtonElement>("undo");
  const fileInput = require<HTMLInputElement>("photo-input");
  const styleText = require<HTMLInputElement>("style-text");
  const styleFile = require<HTMLInputElement>("style-image");
  const applyButton = require<HTMLButtonElement>("apply-style");
  const baseUrlInput = require<HTMLInputElement>("base-url");
  const stubBanner = require<HTMLDivElement>("stub-banner");
  const toast = require<HTMLDivElement>("toast");

  const canvas: CanvasState = createCanvas(CANVAS_SIZE);
  const viewer = createViewer();
  let palette = defaultPalette();
  let styleImageB64: string | null = null;

  segCanvasEl.width = CANVAS_SIZE * VIEW_SCALE;
  segCanvasEl.height = CANVAS_SIZE * VIEW_SCALE;
  const segCtx = segCanvasEl.getContext("2d")!;

  function showToast(message: string): void {
    toast.textContent = message;
    toast.classList.add("visible");
    window.setTimeout(() => toast.classList.remove("visible"), 4000);
  }

  function makeController() {
    const api = createApi(baseUrlInput.value || "http://127.0.0.1:8000");
    return createEditController(api, viewer, decodeSegBrowser, base64ToBytes, {
      onDisplay: (image) => {
        renderImg.src = `data:image/png;base64,${image}`;
      },
      onError: showToast,
    });
  }
  let controller = makeController();
  baseUrlInput.addEventListener("change", () => {
    controller = makeController();
  });

  function redraw(): void {
    const cell = VIEW_SCALE;
    for (let y = 0; y < canvas.size; y++) {
      for (let x = 0; x < canvas.size; x++) {
        const cls = canvas.grid[y * canvas.size + x];
        const rgb = palette.get(cls) ?? [255, 0, 255];
        segCtx.fillStyle = `rgb(${rgb[0]},${rgb[1]},${rgb[2]})`;
        segCtx.fillRect(x * cell, y * cell, cell, cell);
      }
    }
  }

  function rebuildClassBar(names: Map<number, string>): void {
    classBar.replaceChildren();
    for (let cls = 0; cls < NUM_CLASSES; cls++) {
      const rgb = palette.get(cls) ?? [255, 0, 255];
      const button = document.createElement("button");
      button.className = "swatch";
      button.title = names.get(cls) ?? `class ${cls}`;
      button.style.background = `rgb(${rgb[0]},${rgb[1]},${rgb[2]})`;
      button.addEventListener("click", () => {
        canvas.activeClass = cls;
        for (const other of classBar.children) other.classList.remove("active");
        button.classList.add("active");
      });
      if (cls === canvas.activeClass) button.classList.add("active");
      classBar.append(button);
    }
  }

  // Painting: collect the pointer path during a drag and commit it as one
  // stroke on release so a single undo reverts the whole gesture.
  let strokePath: PathPoint[] = [];
  let painting = false;

  function gridPoint(event: PointerEvent): PathPoint {
    const rect = segCanvasEl.getBoundingClientRect();
    return {
      x: ((event.clientX - rect.left) / rect.width) * canvas.size,
      y: ((event.clientY - rect.top) / rect.height) * canvas.size,
    };
  }

  segCanvasEl.addEventListener("pointerdown", (event) => {
    painting = true;
    strokePath = [gridPoint(event)];
    segCanvasEl.setPointerCapture(event.pointerId);
  });
  segCanvasEl.addEventListener("pointermove", (event) => {
    if (!painting) return;
    strokePath.push(gridPoint(event));
    const rgb = palette.get(canvas.activeClass) ?? [255, 0, 255];
    segCtx.fillStyle = `rgb(${rgb[0]},${rgb[1]},${rgb[2]})`;
    const point = strokePath[strokePath.length - 1];
    const radius = canvas.brushRadius * VIEW_SCALE;
    segCtx.beginPath();
    segCtx.arc(point.x * VIEW_SCALE, point.y * VIEW_SCALE, radius, 0, Math.PI * 2);
    segCtx.fill();
  });
  segCanvasEl.addEventListener("pointerup", () => {
    if (!painting) return;
    painting = false;
    brushStroke(canvas, strokePath);
    strokePath = [];
    redraw();
  });

  undoButton.addEventListener("click", () => {
    undo(canvas);
    redraw();
  });
  brushInput.addEventListener("input", () => {
    canvas.brushRadius = Number(brushInput.value);
  });

  async function readFileB64(file: File): Promise<string> {
    return bytesToBase64(new Uint8Array(await file.arrayBuffer()));
  }

  fileInput.addEventListener("change", async () => {
    const file = fileInput.files?.[0];
    if (!file) return;
    try {
      const result = await controller.loadFromImage(canvas, await readFileB64(file));
      const names = new Map<number, string>();
      palette = defaultPalette();
      for (const [key, entry] of Object.entries(result.palette) as [string, PaletteEntry][]) {
        palette.set(Number(key), entry.rgb);
        names.set(Number(key), entry.name);
      }
      stubBanner.hidden = !result.stub;
      rebuildClassBar(names);
      redraw();
    } catch (err) {
      showToast(err instanceof Error ? err.message : String(err));
    }
  });

  styleFile.addEventListener("change", async () => {
    const file = styleFile.files?.[0];
    styleImageB64 = file ? await readFileB64(file) : null;
  });

  applyButton.addEventListener("click", () => {
    const style: StylePayload = styleImageB64
      ? { type: "image", value: styleImageB64 }
      : { type: "text", value: styleText.value };
    void controller.applyStyleAndRender(canvas, style);
  });

  // Orbit: drag on the rendered view re-renders the live session without
  // re-running the edit.
  let orbiting = false;
  let lastX = 0;
  let lastY = 0;
  renderImg.addEventListener("pointerdown", (event) => {
    orbiting = true;
    lastX = event.clientX;
    lastY = event.clientY;
    renderImg.setPointerCapture(event.pointerId);
  });
  renderImg.addEventListener("pointermove", (event) => {
    if (!orbiting) return;
    controller.orbitDrag((event.clientX - lastX) * 0.5, (lastY - event.clientY) * 0.5);
    lastX = event.clientX;
    lastY = event.clientY;
  });
  renderImg.addEventListener("pointerup", () => {
    orbiting = false;
  });

  rebuildClassBar(new Map());
  redraw();
}
