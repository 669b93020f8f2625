/**
 * Segmentation canvas state: an S x S grid of class indices with a bounded
 * undo stack.  The grid is only ever touched through brushStroke / undo /
 * loadSegmentation, and every mutating operation snapshots the grid first,
 * so undo restores it bit-exactly.
 */

import { bytesToBase64, encodeGrayPng } from "./png.js";

export const NUM_CLASSES = 19;
export const UNDO_LIMIT = 50;

export type PathPoint = { x: number; y: number };

export interface CanvasState {
  size: number;
  grid: Uint8Array;
  activeClass: number;
  brushRadius: number;
  undoStack: Uint8Array[];
}

export function createCanvas(size: number, fillClass = 0): CanvasState {
  if (!Number.isInteger(size) || size <= 0) {
    throw new RangeError(`canvas size must be a positive integer, got ${size}`);
  }
  checkClass(fillClass);
  return {
    size,
    grid: new Uint8Array(size * size).fill(fillClass),
    activeClass: 1,
    brushRadius: 3,
    undoStack: [],
  };
}

function checkClass(cls: number): void {
  if (!Number.isInteger(cls) || cls < 0 || cls >= NUM_CLASSES) {
    throw new RangeError(`class ${cls} outside [0, ${NUM_CLASSES})`);
  }
}

function pushUndo(state: CanvasState): void {
  state.undoStack.push(state.grid.slice());
  if (state.undoStack.length > UNDO_LIMIT) {
    state.undoStack.shift();
  }
}

/** Distance from cell center (px, py) to the segment a-b. */
function segmentDistance(px: number, py: number, a: PathPoint, b: PathPoint): number {
  const dx = b.x - a.x;
  const dy = b.y - a.y;
  const lengthSq = dx * dx + dy * dy;
  let t = 0;
  if (lengthSq > 0) {
    t = Math.max(0, Math.min(1, ((px - a.x) * dx + (py - a.y) * dy) / lengthSq));
  }
  const cx = a.x + t * dx;
  const cy = a.y + t * dy;
  return Math.hypot(px - cx, py - cy);
}

/**
 * Paint a polyline onto the grid with a round brush: a cell is painted when
 * its center lies within radius of any path segment.  A single-point (or
 * zero-length) path paints one disc of the given radius.
 */
export function brushStroke(
  state: CanvasState,
  path: PathPoint[],
  cls: number = state.activeClass,
  radius: number = state.brushRadius,
): CanvasState {
  checkClass(cls);
  if (path.length === 0) return state;
  if (!(radius >= 0)) throw new RangeError(`brush radius must be >= 0, got ${radius}`);
  pushUndo(state);
  const segments: Array<[PathPoint, PathPoint]> = [];
  if (path.length === 1) {
    segments.push([path[0], path[0]]);
  } else {
    for (let i = 1; i < path.length; i++) segments.push([path[i - 1], path[i]]);
  }
  const s = state.size;
  for (const [a, b] of segments) {
    const x0 = Math.max(0, Math.floor(Math.min(a.x, b.x) - radius));
    const x1 = Math.min(s - 1, Math.ceil(Math.max(a.x, b.x) + radius));
    const y0 = Math.max(0, Math.floor(Math.min(a.y, b.y) - radius));
    const y1 = Math.min(s - 1, Math.ceil(Math.max(a.y, b.y) + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        if (segmentDistance(x, y, a, b) <= radius) {
          state.grid[y * s + x] = cls;
        }
      }
    }
  }
  return state;
}

/** Restore the grid to the previous snapshot; false when nothing to undo. */
export function undo(state: CanvasState): boolean {
  const snapshot = state.undoStack.pop();
  if (!snapshot) return false;
  state.grid.set(snapshot);
  return true;
}

/** Replace the whole grid (server segmentation result); undoable. */
export function loadSegmentation(state: CanvasState, classes: ArrayLike<number>, size: number): CanvasState {
  if (size !== state.size || classes.length !== size * size) {
    throw new RangeError(`segmentation ${classes.length} px does not fit ${state.size}x${state.size} canvas`);
  }
  for (let i = 0; i < classes.length; i++) checkClass(classes[i]);
  pushUndo(state);
  state.grid.set(classes);
  return state;
}

/** The grid as a grayscale PNG of raw class ids: the /edit wire format. */
export function exportPng(state: CanvasState): Uint8Array {
  return encodeGrayPng(state.grid, state.size, state.size);
}

export function exportPngBase64(state: CanvasState): string {
  return bytesToBase64(exportPng(state));
}

/** True when any cell differs from the background class. */
export function hasForeground(state: CanvasState): boolean {
  return state.grid.some((cls) => cls !== 0);
}
