import { describe, expect, it } from "vitest";
import * as zlib from "node:zlib";

import { ApiError, HeadliftApi, RenderParams, StylePayload } from "../src/api.js";
import { brushStroke, createCanvas, exportPng } from "../src/canvas.js";
import { createEditController, EditController } from "../src/controller.js";
import { base64ToBytes, bytesToBase64, decodeGrayPng, encodeGrayPng } from "../src/png.js";
import { createViewer, ViewerState } from "../src/viewer.js";

const inflate = (data: Uint8Array): Uint8Array => new Uint8Array(zlib.inflateSync(data));
const decodeSeg = (png: Uint8Array) => decodeGrayPng(png, inflate);
const STYLE: StylePayload = { type: "text", value: "short red hair" };

interface ServerLog {
  edits: Array<{ segMap: string; style: StylePayload }>;
  renders: Array<{ sessionId: string; params: RenderParams }>;
}

function makeApi(overrides: Partial<HeadliftApi> = {}): { api: HeadliftApi; log: ServerLog } {
  const log: ServerLog = { edits: [], renders: [] };
  const api: HeadliftApi = {
    async health() {
      return { status: "ok" };
    },
    async segment() {
      throw new Error("segment not stubbed");
    },
    async reconstruct() {
      return { session_id: "recon" };
    },
    async edit(segMap, style) {
      log.edits.push({ segMap, style });
      return { session_id: `s${log.edits.length}` };
    },
    async render(sessionId, params) {
      log.renders.push({ sessionId, params });
      return { image: `render:${sessionId}:${params.yaw}:${params.pitch}`, alpha: "A" };
    },
    ...overrides,
  };
  return { api, log };
}

function build(api: HeadliftApi): {
  controller: EditController;
  viewer: ViewerState;
  displays: Array<{ image: string; token: number }>;
  errors: string[];
} {
  const viewer = createViewer(64);
  const displays: Array<{ image: string; token: number }> = [];
  const errors: string[] = [];
  const controller = createEditController(api, viewer, decodeSeg, base64ToBytes, {
    onDisplay: (image, token) => displays.push({ image, token }),
    onError: (message) => errors.push(message),
  });
  return { controller, viewer, displays, errors };
}

describe("loadFromImage", () => {
  it("paints the server segmentation onto the canvas", async () => {
    const classes = Uint8Array.from({ length: 16 * 16 }, (_, i) => (i * 7) % 19);
    const { api } = makeApi({
      async segment() {
        return {
          seg_map: bytesToBase64(encodeGrayPng(classes, 16, 16)),
          palette: { "0": { name: "background", rgb: [0, 0, 0] } },
          stub: true,
        };
      },
    });
    const { controller } = build(api);
    const canvas = createCanvas(16);
    const result = await controller.loadFromImage(canvas, "PHOTO");
    expect(canvas.grid).toEqual(classes);
    expect(result.stub).toBe(true);
    expect(result.palette["0"].name).toBe("background");
  });

  it("leaves the canvas untouched when the request fails", async () => {
    const { api } = makeApi({
      async segment() {
        throw new ApiError(503, "segmenter down");
      },
    });
    const { controller } = build(api);
    const canvas = createCanvas(16);
    brushStroke(canvas, [{ x: 8, y: 8 }], 4, 3);
    const before = canvas.grid.slice();
    const undosBefore = canvas.undoStack.length;
    await expect(controller.loadFromImage(canvas, "PHOTO")).rejects.toThrow("segmenter down");
    expect(canvas.grid).toEqual(before);
    expect(canvas.undoStack.length).toBe(undosBefore);
  });

  it("rejects a seg map that does not fit the canvas", async () => {
    const { api } = makeApi({
      async segment() {
        return {
          seg_map: bytesToBase64(encodeGrayPng(new Uint8Array(64), 8, 8)),
          palette: {},
          stub: false,
        };
      },
    });
    const { controller } = build(api);
    const canvas = createCanvas(16);
    await expect(controller.loadFromImage(canvas, "PHOTO")).rejects.toThrow(RangeError);
    expect(canvas.grid).toEqual(new Uint8Array(256));
  });
});

describe("applyStyleAndRender", () => {
  it("sends the exported PNG bytes verbatim and displays the render", async () => {
    const { api, log } = makeApi();
    const { controller, viewer, displays } = build(api);
    const canvas = createCanvas(32);
    brushStroke(canvas, [{ x: 10, y: 10 }, { x: 20, y: 22 }], 5, 4);

    await controller.applyStyleAndRender(canvas, STYLE);

    expect(log.edits.length).toBe(1);
    expect(base64ToBytes(log.edits[0].segMap)).toEqual(exportPng(canvas));
    expect(log.edits[0].style).toEqual(STYLE);
    expect(log.renders).toEqual([
      { sessionId: "s1", params: { yaw: 0, pitch: 0, distance: 1.8, size: 64 } },
    ]);
    expect(viewer.sessionId).toBe("s1");
    expect(displays).toEqual([{ image: "render:s1:0:0", token: 1 }]);
    expect(viewer.lastImage).toBe("render:s1:0:0");
  });

  it("refuses an empty canvas without touching the network", async () => {
    const { api, log } = makeApi();
    const { controller, errors } = build(api);
    await controller.applyStyleAndRender(createCanvas(8), STYLE);
    expect(errors).toEqual(["segmentation canvas is empty"]);
    expect(log.edits).toEqual([]);
    expect(log.renders).toEqual([]);
  });

  it("reports edit failures and keeps the previous session", async () => {
    const { api } = makeApi({
      async edit() {
        throw new ApiError(400, "bad seg map");
      },
    });
    const { controller, viewer, errors, displays } = build(api);
    viewer.sessionId = "old";
    const canvas = createCanvas(8);
    brushStroke(canvas, [{ x: 4, y: 4 }], 3, 2);
    await controller.applyStyleAndRender(canvas, STYLE);
    expect(errors).toEqual(["bad seg map"]);
    expect(viewer.sessionId).toBe("old");
    expect(displays).toEqual([]);
  });

  it("reports render failures without changing the display", async () => {
    const { api } = makeApi({
      async render() {
        throw new ApiError(404, "unknown session");
      },
    });
    const { controller, viewer, errors } = build(api);
    viewer.lastImage = "previous";
    const canvas = createCanvas(8);
    brushStroke(canvas, [{ x: 4, y: 4 }], 3, 2);
    await controller.applyStyleAndRender(canvas, STYLE);
    expect(errors).toEqual(["unknown session"]);
    expect(viewer.lastImage).toBe("previous");
  });
});

describe("orbitDrag", () => {
  it("does nothing without a live session", async () => {
    const { api, log } = makeApi();
    const { controller } = build(api);
    controller.orbitDrag(15, 5);
    await controller.idle();
    expect(log.renders).toEqual([]);
  });

  it("re-renders the live session without re-editing", async () => {
    const { api, log } = makeApi();
    const { controller, viewer } = build(api);
    const canvas = createCanvas(8);
    brushStroke(canvas, [{ x: 4, y: 4 }], 3, 2);
    await controller.applyStyleAndRender(canvas, STYLE);

    controller.orbitDrag(30, 10);
    await controller.idle();
    expect(log.edits.length).toBe(1);
    expect(log.renders.length).toBe(2);
    expect(log.renders[1]).toEqual({
      sessionId: "s1",
      params: { yaw: 30, pitch: 10, distance: 1.8, size: 64 },
    });
    expect(viewer.lastImage).toBe("render:s1:30:10");
  });

  it("coalesces a drag burst to the trailing orbit", async () => {
    let release!: () => void;
    const hold = new Promise<void>((r) => {
      release = r;
    });
    let held = true;
    const { api, log } = makeApi();
    const slowApi: HeadliftApi = {
      ...api,
      async render(sessionId, params) {
        if (held) {
          held = false;
          await hold;
        }
        return api.render(sessionId, params);
      },
    };
    const { controller, viewer } = build(slowApi);
    viewer.sessionId = "s1";

    controller.orbitDrag(10, 0);
    controller.orbitDrag(10, 0);
    controller.orbitDrag(10, 0);
    release();
    await controller.idle();

    // First render went out immediately; the two follow-ups collapsed into
    // one trailing render that saw the final orbit.
    expect(log.renders.length).toBe(2);
    expect(log.renders[1].params.yaw).toBe(30);
    expect(viewer.lastImage).toBe("render:s1:30:0");
  });
});
