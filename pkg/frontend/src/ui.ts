/** DOM wiring: canvas painting, toolbar, history panel, previews. */

import { ApiClient } from "./api.js";
import { BrushState, EditorController } from "./controller.js";
import { decodeMaskRle, RleMask } from "./rle.js";
import { Point, rasterizeStroke, regionFromStroke } from "./stroke.js";

const SCALE = 8; // display pixels per image pixel

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class EditorView {
  private controller: EditorController;
  private brush: BrushState = {
    mode: "draw",
    classId: "tree",
    radius: 2,
    strengthLevel: "med",
    styleSource: null,
  };
  private imgW = 64;
  private imgH = 64;
  private gridW = 4;
  private gridH = 4;
  private path: Point[] = [];
  private painting = false;
  private hoverRegion: RleMask | null = null;

  constructor(baseUrl = "") {
    this.controller = new EditorController(new ApiClient(baseUrl));
    this.controller.onChange = () => this.render();
  }

  async init(): Promise<void> {
    const catalog = await this.controller.loadCatalog();
    [this.imgH, this.imgW] = catalog.image_size;
    [this.gridH, this.gridW] = catalog.grid;
    const classSel = el<HTMLSelectElement>("class-select");
    classSel.innerHTML = catalog.classes.map((c) => `<option value="${c}">${c}</option>`).join("");
    this.brush.classId = catalog.classes[0];
    this.bindToolbar();
    this.bindCanvas();
    this.bindUpload();
    this.render();
  }

  private bindToolbar(): void {
    for (const mode of ["draw", "erase", "restyle"] as const) {
      el<HTMLButtonElement>(`mode-${mode}`).onclick = () => {
        this.brush.mode = mode;
        this.refreshStylePicker();
        this.render();
      };
    }
    el<HTMLSelectElement>("class-select").onchange = (ev) => {
      this.brush.classId = (ev.target as HTMLSelectElement).value;
    };
    el<HTMLSelectElement>("strength-select").onchange = (ev) => {
      this.brush.strengthLevel = (ev.target as HTMLSelectElement).value as BrushState["strengthLevel"];
    };
    el<HTMLInputElement>("brush-radius").oninput = (ev) => {
      this.brush.radius = Number((ev.target as HTMLInputElement).value);
      el<HTMLSpanElement>("brush-radius-label").textContent = `${this.brush.radius}px`;
    };
    el<HTMLSelectElement>("style-select").onchange = (ev) => {
      this.brush.styleSource = (ev.target as HTMLSelectElement).value || null;
    };
    el<HTMLButtonElement>("render-final").onclick = () => {
      this.controller.requestFinal().catch(() => undefined);
    };
    el<HTMLButtonElement>("cancel-final").onclick = () => {
      this.controller.cancelFinal().catch(() => undefined);
    };
  }

  private async refreshStylePicker(): Promise<void> {
    const catalog = await this.controller.loadCatalog();
    const sel = el<HTMLSelectElement>("style-select");
    sel.innerHTML = catalog.styles
      .map((s) => `<option value="${s}">${s}</option>`)
      .join("");
    this.brush.styleSource = catalog.styles[0] ?? null;
    sel.parentElement!.style.display = this.brush.mode === "restyle" ? "" : "none";
  }

  private canvasPoint(ev: MouseEvent): Point {
    const canvas = el<HTMLCanvasElement>("paint-canvas");
    const rect = canvas.getBoundingClientRect();
    return {
      x: ((ev.clientX - rect.left) / rect.width) * this.imgW,
      y: ((ev.clientY - rect.top) / rect.height) * this.imgH,
    };
  }

  private bindCanvas(): void {
    const canvas = el<HTMLCanvasElement>("paint-canvas");
    canvas.width = this.imgW * SCALE;
    canvas.height = this.imgH * SCALE;
    canvas.onmousedown = (ev) => {
      if (this.controller.state.sessionState !== "ready" || this.controller.state.busy) return;
      this.painting = true;
      this.path = [this.canvasPoint(ev)];
      this.render();
    };
    canvas.onmousemove = (ev) => {
      if (!this.painting) return;
      this.path.push(this.canvasPoint(ev));
      this.render();
    };
    const finish = () => {
      if (!this.painting) return;
      this.painting = false;
      const path = this.path;
      this.path = [];
      this.controller
        .submitStroke(this.brush, path)
        .catch(() => undefined)
        .finally(() => this.render());
    };
    canvas.onmouseup = finish;
    canvas.onmouseleave = finish;
  }

  private bindUpload(): void {
    el<HTMLInputElement>("upload-input").onchange = async (ev) => {
      const file = (ev.target as HTMLInputElement).files?.[0];
      if (!file) return;
      const bytes = new Uint8Array(await file.arrayBuffer());
      let binary = "";
      bytes.forEach((b) => (binary += String.fromCharCode(b)));
      try {
        await this.controller.upload(btoa(binary));
        await this.controller.waitReady();
      } catch {
        /* surfaced through state.error */
      }
      this.render();
    };
  }

  private drawPreview(): void {
    const canvas = el<HTMLCanvasElement>("paint-canvas");
    const ctx = canvas.getContext("2d")!;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    const png = this.controller.state.previewPng;
    if (png) {
      const img = new Image();
      img.onload = () => {
        ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
        this.drawOverlays(ctx);
      };
      img.src = `data:image/png;base64,${png}`;
    } else {
      ctx.fillStyle = "#223";
      ctx.fillRect(0, 0, canvas.width, canvas.height);
      this.drawOverlays(ctx);
    }
  }

  private drawOverlays(ctx: CanvasRenderingContext2D): void {
    // in-progress stroke plus the latent cells it will select
    if (this.path.length) {
      const mask = rasterizeStroke(this.path, this.brush.radius, this.imgW, this.imgH);
      const region = regionFromStroke(mask, this.imgW, this.imgH, this.gridW, this.gridH);
      ctx.fillStyle = "rgba(255, 210, 0, 0.25)";
      const bw = (this.imgW / this.gridW) * SCALE;
      const bh = (this.imgH / this.gridH) * SCALE;
      for (let gy = 0; gy < this.gridH; gy++) {
        for (let gx = 0; gx < this.gridW; gx++) {
          if (region[gy * this.gridW + gx]) ctx.fillRect(gx * bw, gy * bh, bw, bh);
        }
      }
      ctx.fillStyle = "rgba(255, 80, 40, 0.6)";
      for (let y = 0; y < this.imgH; y++) {
        for (let x = 0; x < this.imgW; x++) {
          if (mask[y * this.imgW + x]) ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
        }
      }
    }
    // hovered history entry: highlight its region
    if (this.hoverRegion) {
      const region = decodeMaskRle(this.hoverRegion);
      ctx.fillStyle = "rgba(80, 160, 255, 0.35)";
      const bw = (this.imgW / this.hoverRegion.width) * SCALE;
      const bh = (this.imgH / this.hoverRegion.height) * SCALE;
      for (let gy = 0; gy < this.hoverRegion.height; gy++) {
        for (let gx = 0; gx < this.hoverRegion.width; gx++) {
          if (region[gy * this.hoverRegion.width + gx]) ctx.fillRect(gx * bw, gy * bh, bw, bh);
        }
      }
    }
  }

  private renderHistory(): void {
    const list = el<HTMLUListElement>("history-list");
    list.innerHTML = "";
    for (const op of this.controller.state.history) {
      const item = document.createElement("li");
      const label = document.createElement("span");
      label.textContent = `#${op.id} ${op.mode} ${op.class} (s=${op.strength})`;
      const remove = document.createElement("button");
      remove.textContent = "remove";
      remove.disabled = this.controller.state.busy || this.controller.state.sessionState !== "ready";
      remove.onclick = () => this.controller.removeEdit(op.id).catch(() => undefined);
      item.onmouseenter = () => {
        this.hoverRegion = op.region;
        this.render();
      };
      item.onmouseleave = () => {
        this.hoverRegion = null;
        this.render();
      };
      item.append(label, remove);
      list.append(item);
    }
  }

  render(): void {
    const state = this.controller.state;
    el<HTMLSpanElement>("session-state").textContent = state.sessionId
      ? `${state.sessionId} - ${state.sessionState}${state.busy ? " (busy)" : ""}`
      : "no session";
    const toast = el<HTMLDivElement>("error-toast");
    toast.textContent = state.error ?? "";
    toast.style.display = state.error ? "" : "none";
    const busyOrNotReady = state.busy || state.sessionState !== "ready";
    el<HTMLButtonElement>("render-final").disabled = busyOrNotReady;
    el<HTMLButtonElement>("cancel-final").disabled = state.sessionState !== "adapting";
    this.renderHistory();
    this.drawPreview();
    const final = el<HTMLImageElement>("final-image");
    if (state.finalPng) {
      final.src = `data:image/png;base64,${state.finalPng}`;
      el<HTMLDivElement>("final-panel").style.display = "";
    } else {
      el<HTMLDivElement>("final-panel").style.display = "none";
    }
  }
}
