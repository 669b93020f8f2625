/**
 * Wires canvas, viewer and API together.  Every display-affecting request
 * takes a token from a monotonic gate when it starts; a response is shown
 * only if its token is still the newest, so late arrivals from slow requests
 * can never overwrite a newer image.  Orbit renders additionally go through
 * a one-in-flight throttle that coalesces bursts to the trailing edge.
 */

import { ApiError, HeadliftApi, RenderResponse, StylePayload } from "./api.js";
import {
  CanvasState,
  exportPngBase64,
  hasForeground,
  loadSegmentation,
} from "./canvas.js";
import { createRenderThrottle, createRequestGate } from "./gate.js";
import { ViewerState, dragOrbit } from "./viewer.js";

export interface ControllerEvents {
  onDisplay?: (image: string, token: number) => void;
  onError?: (message: string) => void;
}

export interface DecodedSeg {
  width: number;
  height: number;
  pixels: Uint8Array;
}

export interface SegDecoder {
  (pngBytes: Uint8Array): DecodedSeg | Promise<DecodedSeg>;
}

export interface LoadResult {
  stub: boolean;
  palette: Record<string, { name: string; rgb: [number, number, number] }>;
}

export interface EditController {
  /** Segment an uploaded photo and replace the canvas contents. */
  loadFromImage(canvas: CanvasState, imageB64: string): Promise<LoadResult>;
  /** Push the current seg map through /edit, then render the new session. */
  applyStyleAndRender(canvas: CanvasState, style: StylePayload): Promise<void>;
  /** Accumulate an orbit drag and request a re-render of the live session. */
  orbitDrag(dYaw: number, dPitch: number): void;
  /** Resolves once no render is queued or in flight (test hook). */
  idle(): Promise<void>;
  currentToken(): number;
}

export function createEditController(
  api: HeadliftApi,
  viewer: ViewerState,
  decodeSeg: SegDecoder,
  base64ToBytes: (b64: string) => Uint8Array,
  events: ControllerEvents = {},
): EditController {
  const gate = createRequestGate();
  // Edit responses may arrive out of order; only adopt a session id if it
  // came from a newer edit than the one currently adopted.
  let lastEditToken = 0;

  function display(image: string, token: number): void {
    if (token <= viewer.lastToken) return;
    viewer.lastImage = image;
    viewer.lastToken = token;
    events.onDisplay?.(image, token);
  }

  function describe(err: unknown): string {
    if (err instanceof ApiError) return err.message;
    return err instanceof Error ? err.message : String(err);
  }

  async function renderOnce(): Promise<void> {
    const sessionId = viewer.sessionId;
    if (sessionId === null) return;
    const token = gate.next();
    try {
      const resp = await api.render(sessionId, {
        yaw: viewer.yaw,
        pitch: viewer.pitch,
        distance: viewer.distance,
        size: viewer.size,
      });
      if (gate.isLatest(token)) display(resp.image, token);
    } catch (err) {
      if (gate.isLatest(token)) events.onError?.(describe(err));
    }
  }

  const throttle = createRenderThrottle<null>(() => renderOnce());

  return {
    async loadFromImage(canvas: CanvasState, imageB64: string): Promise<LoadResult> {
      // The canvas is mutated only after the response decodes cleanly, so a
      // failed load leaves the existing segmentation untouched.
      const resp = await api.segment(imageB64);
      const decoded = await decodeSeg(base64ToBytes(resp.seg_map));
      if (decoded.width !== decoded.height) {
        throw new RangeError("segmentation map must be square");
      }
      loadSegmentation(canvas, decoded.pixels, decoded.width);
      return { stub: resp.stub, palette: resp.palette };
    },

    async applyStyleAndRender(canvas: CanvasState, style: StylePayload): Promise<void> {
      if (!hasForeground(canvas)) {
        events.onError?.("segmentation canvas is empty");
        return;
      }
      const token = gate.next();
      let edited: { session_id: string };
      try {
        edited = await api.edit(exportPngBase64(canvas), style);
      } catch (err) {
        if (gate.isLatest(token)) events.onError?.(describe(err));
        return;
      }
      if (token > lastEditToken) {
        lastEditToken = token;
        viewer.sessionId = edited.session_id;
      }
      if (!gate.isLatest(token)) {
        // A newer chain owns the display; refresh it with the new session.
        throttle.request(null);
        return;
      }
      let resp: RenderResponse;
      try {
        resp = await api.render(edited.session_id, {
          yaw: viewer.yaw,
          pitch: viewer.pitch,
          distance: viewer.distance,
          size: viewer.size,
        });
      } catch (err) {
        if (gate.isLatest(token)) events.onError?.(describe(err));
        return;
      }
      if (gate.isLatest(token)) display(resp.image, token);
    },

    orbitDrag(dYaw: number, dPitch: number): void {
      dragOrbit(viewer, dYaw, dPitch);
      if (viewer.sessionId !== null) throttle.request(null);
    },

    idle(): Promise<void> {
      return throttle.idle();
    },

    currentToken(): number {
      return gate.current();
    },
  };
}
