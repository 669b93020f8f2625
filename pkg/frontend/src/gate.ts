/**
 * Stale-response suppression and render throttling.
 *
 * Every server round trip that can change the displayed image takes a token
 * from a monotonic counter; a response is applied only if its token is still
 * the newest one issued.  Orbit renders additionally flow through a
 * one-in-flight throttle with trailing-edge coalescing: dragging fires many
 * requests, only the current one and the latest pending one survive.
 */

export interface RequestGate {
  next(): number;
  isLatest(token: number): boolean;
  current(): number;
}

export function createRequestGate(): RequestGate {
  let counter = 0;
  return {
    next() {
      counter += 1;
      return counter;
    },
    isLatest(token) {
      return token === counter;
    },
    current() {
      return counter;
    },
  };
}

export type Throttled<T> = {
  request(arg: T): void;
  /** Settles once no request is running or pending (for tests). */
  idle(): Promise<void>;
};

export function createRenderThrottle<T>(run: (arg: T) => Promise<void>): Throttled<T> {
  let busy = false;
  let pending: { arg: T } | null = null;
  let waiters: Array<() => void> = [];

  function settle(): void {
    if (!busy && !pending) {
      const ready = waiters;
      waiters = [];
      for (const resolve of ready) resolve();
    }
  }

  async function pump(arg: T): Promise<void> {
    busy = true;
    try {
      await run(arg);
    } catch {
      // errors are the runner's concern; the pump must keep draining
    }
    busy = false;
    if (pending) {
      const next = pending.arg;
      pending = null;
      void pump(next);
    } else {
      settle();
    }
  }

  return {
    request(arg: T) {
      if (busy) {
        pending = { arg }; // trailing edge: keep only the newest
      } else {
        void pump(arg);
      }
    },
    idle() {
      return new Promise((resolve) => {
        waiters.push(resolve);
        settle();
      });
    },
  };
}
