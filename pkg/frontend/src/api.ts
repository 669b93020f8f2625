/**
 * Typed client for the headlift editing service.  This is the only channel
 * the frontend has to the model: base64 PNG images in, base64 PNG images and
 * session ids out.  fetch is injected so tests can stand in a mock server.
 */

export interface PaletteEntry {
  name: string;
  rgb: [number, number, number];
}

export interface SegmentResponse {
  seg_map: string;
  palette: Record<string, PaletteEntry>;
  stub: boolean;
}

export interface SessionResponse {
  session_id: string;
}

export interface RenderResponse {
  image: string;
  alpha: string;
}

export interface HealthResponse {
  status: string;
  checkpoint_id?: string | null;
}

export interface StylePayload {
  type: "text" | "image";
  value: string;
}

export interface RenderParams {
  yaw: number;
  pitch: number;
  distance?: number;
  size?: number;
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
    this.status = status;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface HeadliftApi {
  health(): Promise<HealthResponse>;
  segment(imageB64: string): Promise<SegmentResponse>;
  reconstruct(imageB64: string, maskB64?: string): Promise<SessionResponse>;
  edit(segMapB64: string, style: StylePayload): Promise<SessionResponse>;
  render(sessionId: string, params: RenderParams): Promise<RenderResponse>;
}

export function createApi(baseUrl: string, fetchImpl?: FetchLike): HeadliftApi {
  const doFetch = fetchImpl ?? ((url, init) => fetch(url, init));
  const root = baseUrl.replace(/\/+$/, "");

  async function parse<T>(response: Response): Promise<T> {
    if (!response.ok) {
      let detail = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { detail?: string };
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body, keep the status line
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  async function post<T>(path: string, payload: unknown): Promise<T> {
    const response = await doFetch(`${root}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    return parse<T>(response);
  }

  return {
    async health() {
      return parse<HealthResponse>(await doFetch(`${root}/health`));
    },

    async segment(imageB64: string) {
      return post<SegmentResponse>("/segment", { image: imageB64 });
    },

    async reconstruct(imageB64: string, maskB64?: string) {
      const payload: Record<string, string> = { image: imageB64 };
      if (maskB64 !== undefined) payload.mask = maskB64;
      return post<SessionResponse>("/reconstruct", payload);
    },

    async edit(segMapB64: string, style: StylePayload) {
      return post<SessionResponse>("/edit", { seg_map: segMapB64, style });
    },

    async render(sessionId: string, params: RenderParams) {
      const query = new URLSearchParams({
        session_id: sessionId,
        yaw: String(params.yaw),
        pitch: String(params.pitch),
      });
      if (params.distance !== undefined) query.set("distance", String(params.distance));
      if (params.size !== undefined) query.set("size", String(params.size));
      return parse<RenderResponse>(await doFetch(`${root}/render?${query.toString()}`));
    },
  };
}
