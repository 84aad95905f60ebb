/** Typed client for the session service JSON API. */

import type { RleMask } from "./rle.js";

export interface CatalogInfo {
  classes: string[];
  strengths: Record<string, number>;
  modes: string[];
  grid: [number, number];
  image_size: [number, number];
  styles: string[];
  checkpoint_id: string;
}

export interface EditOpJson {
  id: number;
  mode: string;
  class: string;
  region: RleMask;
  strength: number;
  style_source: string | null;
}

export interface SessionSnapshot {
  id: string;
  state: string;
  history: EditOpJson[];
  error: string | null;
  inversion_psnr: number | null;
  preview_png?: string | null;
}

export interface EditResponse {
  history: EditOpJson[];
  preview_png: string;
}

export interface RenderStatus {
  state: string;
  image?: string;
  detail?: string;
}

export interface EditRequest {
  mode: string;
  class: string;
  region: RleMask;
  strength?: number;
  strength_level?: string;
  style_source?: string;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const detail = typeof payload?.detail === "string" ? payload.detail : JSON.stringify(payload);
      throw new ApiError(resp.status, detail);
    }
    return payload as T;
  }

  getCatalog(): Promise<CatalogInfo> {
    return this.request("GET", "/catalog");
  }

  createSession(imageB64: string): Promise<{ id: string; state: string }> {
    return this.request("POST", "/sessions", { image: imageB64 });
  }

  getSession(id: string): Promise<SessionSnapshot> {
    return this.request("GET", `/sessions/${id}`);
  }

  postEdit(id: string, edit: EditRequest): Promise<EditResponse> {
    return this.request("POST", `/sessions/${id}/edits`, edit);
  }

  deleteEdit(id: string, editId: number): Promise<EditResponse> {
    return this.request("DELETE", `/sessions/${id}/edits/${editId}`);
  }

  startRender(id: string): Promise<{ state: string }> {
    return this.request("POST", `/sessions/${id}/render`);
  }

  getRender(id: string): Promise<RenderStatus> {
    return this.request("GET", `/sessions/${id}/render`);
  }

  cancelRender(id: string): Promise<{ state: string }> {
    return this.request("DELETE", `/sessions/${id}/render`);
  }
}
