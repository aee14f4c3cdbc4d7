/**
 * DOM wiring for the mask/prompt editor. All state decisions live in
 * Session; this module only paints and forwards events.
 */

import { ApiClient } from "./api.js";
import { CanvasMask, N_MAX, PALETTE_RGB, PaletteColor } from "./mask.js";
import { Deflate, bytesToBase64 } from "./png.js";
import { Session, SessionError } from "./session.js";

export interface UiDeps {
  client: ApiClient;
  deflate: Deflate;
}

export class EditorUi {
  private session: Session | null = null;
  private activeMask = 0;
  private erasing = false;
  private dragStart: [number, number] | null = null;

  constructor(private rootEl: HTMLElement, private deps: UiDeps) {}

  mount(): void {
    this.rootEl.innerHTML = `
      <div class="toolbar">
        <input type="file" id="file" accept="image/png" />
        <button id="add-mask">add mask</button>
        <button id="tool-rect">rect</button>
        <button id="tool-brush">brush</button>
        <button id="tool-erase">erase</button>
        <label>temperature <input id="temp" type="range" min="0" max="1"
          step="0.05" value="0.5" /></label>
        <button id="suggest">suggest prompts</button>
        <select id="mode"><option value="rca">single pass (rca)</option>
          <option value="repeated">repeated per mask</option></select>
        <button id="run">inpaint</button>
        <span id="status"></span>
      </div>
      <canvas id="canvas"></canvas>
      <div id="panels"></div>
      <div id="history"></div>`;
    this.el("file").addEventListener("change", (e) => this.onFile(e));
    this.el("add-mask").addEventListener("click", () => this.onAddMask());
    this.el("tool-erase").addEventListener("click", () => { this.erasing = !this.erasing; });
    (this.el("temp") as HTMLInputElement).addEventListener("input", (e) => {
      this.session?.setTemperature(parseFloat((e.target as HTMLInputElement).value));
    });
    (this.el("mode") as HTMLSelectElement).addEventListener("change", (e) => {
      if (this.session) {
        this.session.mode = (e.target as HTMLSelectElement).value as "rca" | "repeated";
      }
    });
    this.el("suggest").addEventListener("click", () => this.onSuggest());
    this.el("run").addEventListener("click", () => this.onRun());
    const canvas = this.el("canvas") as HTMLCanvasElement;
    canvas.addEventListener("mousedown", (e) => { this.dragStart = [e.offsetX, e.offsetY]; });
    canvas.addEventListener("mouseup", (e) => this.onDragEnd(e));
  }

  private el(id: string): HTMLElement {
    return this.rootEl.querySelector(`#${id}`) as HTMLElement;
  }

  private status(text: string): void {
    this.el("status").textContent = text;
  }

  private async onFile(event: Event): Promise<void> {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    const bitmap = await createImageBitmap(new Blob([bytes]));
    this.session = new Session(bitmap.width, bitmap.height, bytesToBase64(bytes));
    const canvas = this.el("canvas") as HTMLCanvasElement;
    canvas.width = bitmap.width;
    canvas.height = bitmap.height;
    canvas.getContext("2d")!.drawImage(bitmap, 0, 0);
    this.status(`loaded ${bitmap.width}x${bitmap.height}`);
  }

  private onAddMask(): void {
    if (!this.session) return this.status("load an image first");
    try {
      this.session.addMask("rect");
      this.activeMask = this.session.masks.length - 1;
      this.status(`mask ${this.activeMask + 1}/${N_MAX} active`);
    } catch (err) {
      this.status((err as SessionError).message);
    }
  }

  private onDragEnd(event: MouseEvent): void {
    if (!this.session || !this.dragStart) return;
    const mask = this.session.masks[this.activeMask];
    if (!mask) return;
    const [x0, y0] = this.dragStart;
    mask.drawRect(x0, y0, event.offsetX, event.offsetY, this.erasing);
    this.dragStart = null;
    this.paintOverlay();
  }

  private paintOverlay(): void {
    if (!this.session) return;
    const canvas = this.el("canvas") as HTMLCanvasElement;
    const ctx = canvas.getContext("2d")!;
    const image = ctx.getImageData(0, 0, canvas.width, canvas.height);
    this.session.masks.forEach((mask: CanvasMask, i: number) => {
      const color = PALETTE_RGB[this.session!.colorOf(i) as PaletteColor] ?? [255, 0, 255];
      for (let p = 0; p < mask.data.length; p++) {
        if (mask.data[p]) {
          image.data[p * 4] = color[0];
          image.data[p * 4 + 1] = color[1];
          image.data[p * 4 + 2] = color[2];
        }
      }
    });
    ctx.putImageData(image, 0, 0);
  }

  private async onSuggest(): Promise<void> {
    if (!this.session) return this.status("load an image first");
    try {
      this.status("suggesting...");
      await this.session.requestSuggestions(this.deps.client, this.deps.deflate);
      this.renderPanels();
      this.status("pick or edit a prompt per region");
    } catch (err) {
      this.status(`suggest failed: ${(err as Error).message}`);
    }
  }

  private renderPanels(): void {
    if (!this.session) return;
    const panels = this.el("panels");
    panels.innerHTML = "";
    for (const region of this.session.suggestionsByRegion) {
      const div = document.createElement("div");
      div.className = "region";
      div.innerHTML = `<strong style="color:${region.color}">${region.color}</strong>`;
      region.options.forEach((option, j) => {
        const chip = document.createElement("button");
        chip.textContent = option.status === "ok" ? option.text : "(no suggestion)";
        chip.disabled = option.status !== "ok";
        chip.addEventListener("click", () => {
          this.session!.choose(region.maskIndex, j);
          this.status(`region ${region.color}: "${option.text}"`);
        });
        div.appendChild(chip);
      });
      const input = document.createElement("input");
      input.placeholder = "or type your own";
      input.addEventListener("change", () => {
        this.session!.edit(region.maskIndex, input.value);
      });
      div.appendChild(input);
      panels.appendChild(div);
    }
  }

  private async onRun(): Promise<void> {
    if (!this.session) return this.status("load an image first");
    if (!this.session.readyToRun()) {
      return this.status("every region needs a prompt before inpainting");
    }
    try {
      this.status("inpainting...");
      const entry = await this.session.runAndCompare(this.deps.client, this.deps.deflate);
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${bytesToBase64(entry.resultPng)}`;
      img.title = entry.prompts.join(" / ");
      img.addEventListener("dblclick", () => {
        this.session!.adoptResult(this.session!.history.indexOf(entry));
        this.status("result adopted as working image");
      });
      this.el("history").appendChild(img);
      this.status(`done (job ${entry.jobId})`);
    } catch (err) {
      this.status(`inpaint failed: ${(err as Error).message}`);
    }
  }
}
