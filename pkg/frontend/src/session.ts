/**
 * Editing-session state: masks, per-region suggestions, chosen prompts,
 * and the run history.
 *
 * The region-to-color binding is owned by the server's suggest response,
 * so chips, tags, and overlay colors always agree. Invariants enforced
 * here: at most N_MAX masks, no export with an empty mask, and inpaint
 * submissions always carry exactly one prompt per mask.
 */

import {
  ApiClient,
  InpaintRequest,
  JobRecord,
  MaskPayload,
  PollOptions,
  SuggestionItem,
} from "./api.js";
import { CanvasMask, MaskTool, N_MAX, PALETTE } from "./mask.js";
import { Deflate, bytesToBase64 } from "./png.js";

export interface RegionSuggestions {
  maskIndex: number;
  color: string;
  options: SuggestionItem[]; // one per sample, order preserved
}

export interface HistoryEntry {
  jobId: string;
  mode: string;
  seed: number;
  prompts: string[];
  resultPng: Uint8Array;
  manifest: Record<string, unknown>;
}

export interface MaskExport {
  maskIndex: number;
  color: string;
  png: Uint8Array;
}

export class SessionError extends Error {}

export class Session {
  readonly width: number;
  readonly height: number;
  imagePngBase64: string;
  masks: CanvasMask[] = [];
  suggestionsByRegion: RegionSuggestions[] = [];
  chosen: Map<number, string> = new Map();
  temperature = 0.5; // paper-suggested middle of the useful range
  numSamples = 4;
  steps = 50;
  guidanceWeight = 7.5;
  mode: "rca" | "repeated" = "rca";
  seed = 0;
  history: HistoryEntry[] = [];

  constructor(width: number, height: number, imagePngBase64: string) {
    this.width = width;
    this.height = height;
    this.imagePngBase64 = imagePngBase64;
  }

  // --- masks ---------------------------------------------------------------

  addMask(tool: MaskTool = "rect"): CanvasMask {
    if (this.masks.length >= N_MAX) {
      throw new SessionError(`at most ${N_MAX} masks per image`);
    }
    const mask = new CanvasMask(this.width, this.height, tool);
    this.masks.push(mask);
    return mask;
  }

  removeMask(index: number): void {
    if (index < 0 || index >= this.masks.length) {
      throw new SessionError(`no mask at index ${index}`);
    }
    this.masks.splice(index, 1);
    this.chosen.delete(index);
    // re-key chosen prompts above the removed slot
    const rekeyed = new Map<number, string>();
    for (const [i, text] of this.chosen) {
      rekeyed.set(i > index ? i - 1 : i, text);
    }
    this.chosen = rekeyed;
    this.suggestionsByRegion = [];
  }

  setTemperature(value: number): void {
    // slider is bound to [0, 1]
    this.temperature = Math.min(1, Math.max(0, value));
  }

  canExport(): boolean {
    return this.masks.length > 0 && this.masks.every((m) => !m.isEmpty());
  }

  /** Binary mask PNGs plus the index<->color manifest. */
  exportMasks(deflate: Deflate): MaskExport[] {
    if (this.masks.length === 0) {
      throw new SessionError("draw at least one mask before exporting");
    }
    const empty = this.masks.findIndex((m) => m.isEmpty());
    if (empty >= 0) {
      throw new SessionError(`mask ${empty + 1} is empty; draw or remove it`);
    }
    return this.masks.map((mask, i) => ({
      maskIndex: i,
      color: this.colorOf(i),
      png: mask.toPngBytes(deflate),
    }));
  }

  colorOf(maskIndex: number): string {
    const region = this.suggestionsByRegion.find((r) => r.maskIndex === maskIndex);
    return region ? region.color : PALETTE[maskIndex % PALETTE.length]!;
  }

  private maskPayloads(deflate: Deflate): MaskPayload[] {
    return this.exportMasks(deflate).map((m) => ({ png: bytesToBase64(m.png) }));
  }

  // --- suggestions -----------------------------------------------------------

  async requestSuggestions(client: ApiClient, deflate: Deflate): Promise<void> {
    const response = await client.suggest({
      image: this.imagePngBase64,
      masks: this.maskPayloads(deflate),
      temperature: this.temperature,
      num_samples: this.numSamples,
      seed: this.seed,
    });
    const regions: RegionSuggestions[] = response.color_assignment.map((a) => ({
      maskIndex: a.mask_index,
      color: a.color,
      options: [],
    }));
    for (const sample of response.samples) {
      for (const item of sample) {
        regions.find((r) => r.maskIndex === item.mask_index)?.options.push(item);
      }
    }
    this.suggestionsByRegion = regions;
  }

  /** Usable chips for one region; missing/malformed render as retryable gaps. */
  panelFor(maskIndex: number): RegionSuggestions | undefined {
    return this.suggestionsByRegion.find((r) => r.maskIndex === maskIndex);
  }

  choose(maskIndex: number, optionIndex: number): void {
    const panel = this.panelFor(maskIndex);
    if (!panel) throw new SessionError("no suggestions for this region yet");
    const option = panel.options[optionIndex];
    if (!option || option.status !== "ok" || !option.text.trim()) {
      throw new SessionError("that suggestion has no usable text; retry or edit");
    }
    this.chosen.set(maskIndex, option.text);
  }

  /** Manual edit always wins over a selected chip. */
  edit(maskIndex: number, text: string): void {
    if (!text.trim()) {
      this.chosen.delete(maskIndex);
      return;
    }
    this.chosen.set(maskIndex, text.trim());
  }

  readyToRun(): boolean {
    return this.masks.length > 0 && this.canExport()
      && this.masks.every((_, i) => !!this.chosen.get(i)?.trim());
  }

  // --- inpainting ------------------------------------------------------------

  buildInpaintRequest(deflate: Deflate, requestId?: string): InpaintRequest {
    const masks = this.maskPayloads(deflate);
    const prompts = this.masks.map((_, i) => this.chosen.get(i) ?? "");
    if (prompts.some((p) => !p.trim())) {
      throw new SessionError("every region needs a chosen or edited prompt");
    }
    if (prompts.length !== masks.length) {
      throw new SessionError("prompt/mask count mismatch"); // unreachable by construction
    }
    const request: InpaintRequest = {
      image: this.imagePngBase64,
      masks,
      prompts,
      mode: this.mode,
      steps: this.steps,
      guidance_weight: this.guidanceWeight,
      seed: this.seed,
      composite: true,
    };
    if (requestId) request.request_id = requestId;
    return request;
  }

  /** Submit, poll to completion, and append exactly one history entry. */
  async runAndCompare(client: ApiClient, deflate: Deflate,
                      poll: PollOptions = {}): Promise<HistoryEntry> {
    const request = this.buildInpaintRequest(deflate);
    const queued = await client.inpaint(request);
    let record: JobRecord;
    try {
      record = await client.pollUntilDone(queued.id, poll);
    } catch (err) {
      throw new SessionError(`inpainting failed: ${(err as Error).message}`);
    }
    const png = await client.fetchResultPng(record);
    const entry: HistoryEntry = {
      jobId: record.id,
      mode: this.mode,
      seed: this.seed,
      prompts: this.masks.map((_, i) => this.chosen.get(i)!),
      resultPng: png,
      manifest: record.manifest,
    };
    this.history.push(entry);
    return entry;
  }

  /** Iterate: a past result becomes the working image; masks start fresh. */
  adoptResult(entryIndex: number): void {
    const entry = this.history[entryIndex];
    if (!entry) throw new SessionError(`no history entry ${entryIndex}`);
    this.imagePngBase64 = bytesToBase64(entry.resultPng);
    this.masks = [];
    this.chosen.clear();
    this.suggestionsByRegion = [];
  }
}
