/**
 * Orbit-camera viewer state.  The viewer never talks to the network itself;
 * the controller reads yaw/pitch from here when it issues render requests.
 */

export const PITCH_LIMIT = 80;
export const DEFAULT_DISTANCE = 1.8;
export const DEFAULT_SIZE = 128;

export interface ViewerState {
  yaw: number;
  pitch: number;
  distance: number;
  size: number;
  sessionId: string | null;
  lastImage: string | null;
  lastToken: number;
}

export function createViewer(size: number = DEFAULT_SIZE): ViewerState {
  return {
    yaw: 0,
    pitch: 0,
    distance: DEFAULT_DISTANCE,
    size,
    sessionId: null,
    lastImage: null,
    lastToken: 0,
  };
}

export function clampPitch(pitch: number): number {
  return Math.min(PITCH_LIMIT, Math.max(-PITCH_LIMIT, pitch));
}

/** Accumulate a drag delta in degrees; pitch saturates at the clamp. */
export function dragOrbit(state: ViewerState, dYaw: number, dPitch: number): void {
  state.yaw = (state.yaw + dYaw) % 360;
  state.pitch = clampPitch(state.pitch + dPitch);
}
