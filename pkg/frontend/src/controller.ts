/** Editor session controller: owns the client-side view of one session.
 *
 * The server history is the single source of truth; local state only ever
 * changes from acknowledged API responses. At most one mutating request is
 * in flight at a time.
 */

import { ApiClient, CatalogInfo, EditOpJson, EditRequest } from "./api.js";
import { encodeMaskRle } from "./rle.js";
import { rasterizeStroke, Point } from "./stroke.js";

export interface BrushState {
  mode: "draw" | "erase" | "restyle";
  classId: string;
  radius: number;
  strengthLevel: "low" | "med" | "high";
  styleSource: string | null;
}

export interface ControllerState {
  sessionId: string | null;
  sessionState: string;
  history: EditOpJson[];
  previewPng: string | null;
  finalPng: string | null;
  busy: boolean;
  error: string | null;
}

export class EditorController {
  readonly state: ControllerState = {
    sessionId: null,
    sessionState: "new",
    history: [],
    previewPng: null,
    finalPng: null,
    busy: false,
    error: null,
  };
  catalog: CatalogInfo | null = null;
  onChange: (state: ControllerState) => void = () => undefined;

  constructor(private api: ApiClient) {}

  private emit(patch: Partial<ControllerState>): void {
    Object.assign(this.state, patch);
    this.onChange(this.state);
  }

  private async mutate<T>(fn: () => Promise<T>): Promise<T> {
    if (this.state.busy) throw new Error("another request is in flight");
    this.emit({ busy: true, error: null });
    try {
      return await fn();
    } catch (err) {
      this.emit({ error: err instanceof Error ? err.message : String(err) });
      throw err;
    } finally {
      this.emit({ busy: false });
    }
  }

  async loadCatalog(): Promise<CatalogInfo> {
    this.catalog = await this.api.getCatalog();
    return this.catalog;
  }

  async upload(imageB64: string): Promise<string> {
    return this.mutate(async () => {
      const { id, state } = await this.api.createSession(imageB64);
      this.emit({ sessionId: id, sessionState: state, history: [], previewPng: null, finalPng: null });
      return id;
    });
  }

  /** Poll until the session leaves its background initialization states. */
  async waitReady(pollMs = 150, timeoutMs = 120_000): Promise<void> {
    const id = this.requireSession();
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const snap = await this.api.getSession(id);
      this.emit({
        sessionState: snap.state,
        history: snap.history,
        previewPng: snap.preview_png ?? this.state.previewPng,
      });
      if (snap.state === "ready") return;
      if (snap.state === "error") throw new Error(snap.error ?? "session failed");
      if (Date.now() > deadline) throw new Error("timed out waiting for session");
      await new Promise((r) => setTimeout(r, pollMs));
    }
  }

  /** Capture a pointer path as a stroke mask and submit it as one edit. */
  async submitStroke(brush: BrushState, path: Point[]): Promise<void> {
    if (path.length === 0) return; // empty path: no request
    const catalog = this.requireCatalog();
    const [h, w] = catalog.image_size;
    const mask = rasterizeStroke(path, brush.radius, w, h);
    const edit: EditRequest = {
      mode: brush.mode,
      class: brush.classId,
      region: encodeMaskRle(mask, w, h),
      strength_level: brush.strengthLevel,
    };
    if (brush.mode === "restyle" && brush.styleSource) edit.style_source = brush.styleSource;
    await this.submitEdit(edit);
  }

  async submitEdit(edit: EditRequest): Promise<void> {
    const id = this.requireSession();
    await this.mutate(async () => {
      const resp = await this.api.postEdit(id, edit);
      // the preview only swaps after a successful response
      this.emit({ history: resp.history, previewPng: resp.preview_png });
    });
  }

  async removeEdit(editId: number): Promise<void> {
    const id = this.requireSession();
    await this.mutate(async () => {
      const resp = await this.api.deleteEdit(id, editId);
      this.emit({ history: resp.history, previewPng: resp.preview_png });
    });
  }

  /** Start the final render and poll until it completes. */
  async requestFinal(pollMs = 250, timeoutMs = 600_000): Promise<string> {
    const id = this.requireSession();
    return this.mutate(async () => {
      await this.api.startRender(id);
      this.emit({ sessionState: "adapting" });
      const deadline = Date.now() + timeoutMs;
      for (;;) {
        const status = await this.api.getRender(id);
        this.emit({ sessionState: status.state });
        if (status.state === "done" && status.image) {
          this.emit({ finalPng: status.image });
          return status.image;
        }
        if (status.state === "error") throw new Error(status.detail ?? "render failed");
        if (status.state === "ready") throw new Error("render was cancelled");
        if (Date.now() > deadline) throw new Error("timed out waiting for render");
        await new Promise((r) => setTimeout(r, pollMs));
      }
    });
  }

  async cancelFinal(): Promise<void> {
    const id = this.requireSession();
    const { state } = await this.api.cancelRender(id);
    this.emit({ sessionState: state });
  }

  private requireSession(): string {
    if (!this.state.sessionId) throw new Error("no session");
    return this.state.sessionId;
  }

  private requireCatalog(): CatalogInfo {
    if (!this.catalog) throw new Error("catalog not loaded");
    return this.catalog;
  }
}
