// Editing session: working parameter set, debounced decoding with a
// single in-flight request, stale-response rejection, and bounded undo.
//
// Rapid slider moves coalesce into exactly one decode after the
// debounce window; a response is applied only if no newer request was
// issued meanwhile (sequence numbers). Drag edits decode at a coarse
// interactive resolution, releases at the fidelity resolution.

import type { DecodeResponse, MeshPayload, ModelInfo, ShapeDetail, Transport } from "./api.js";

export const DEBOUNCE_MS = 150;
export const DRAG_RESOLUTION = 48;
export const RELEASE_RESOLUTION = 96;
const HISTORY_LIMIT = 32;

export interface SessionSnapshot {
  shapeId: string | null;
  parameters: Record<string, number>;
  latent: number[];
  mesh: MeshPayload | null;
}

export interface SessionEvents {
  onMesh?: (mesh: MeshPayload, echo: Record<string, number>) => void;
  onError?: (err: unknown) => void;
}

export class Session {
  private model: ModelInfo | null = null;
  private shapeId: string | null = null;
  private baseParameters: Record<string, number> = {};
  private parameters: Record<string, number> = {};
  private latent: number[] = [];
  private useCustomLatent = false;
  private mesh: MeshPayload | null = null;
  private lastEcho: Record<string, number> = {};
  private history: SessionSnapshot[] = [];

  private debounceTimer: ReturnType<typeof setTimeout> | null = null;
  private sequence = 0;
  private applied = 0;
  private inFlight = false;
  private queued: number | null = null;
  private pendingResolution = DRAG_RESOLUTION;
  decodeCount = 0;

  constructor(private transport: Transport, private events: SessionEvents = {}) {}

  async start(): Promise<ModelInfo> {
    this.model = await this.transport.model();
    return this.model;
  }

  get modelInfo(): ModelInfo {
    if (!this.model) throw new Error("session not started");
    return this.model;
  }

  get workingParameters(): Record<string, number> {
    return { ...this.parameters };
  }

  get currentMesh(): MeshPayload | null {
    return this.mesh;
  }

  get echoedParameters(): Record<string, number> {
    return { ...this.lastEcho };
  }

  get hasPendingRequest(): boolean {
    return this.inFlight || this.debounceTimer !== null;
  }

  parameterRange(name: string): [number, number] {
    const info = this.modelInfo.parameters.find((p) => p.name === name);
    if (!info) throw new Error(`unknown parameter ${name}`);
    return info.range;
  }

  async loadShape(detail: ShapeDetail): Promise<void> {
    this.shapeId = detail.id;
    this.baseParameters = { ...detail.parameters };
    this.parameters = { ...detail.parameters };
    this.latent = [...detail.latent];
    this.useCustomLatent = false;
    this.history = [];
    await this.decodeNow(RELEASE_RESOLUTION);
  }

  // Clamp into the schema range; out-of-range values never reach the wire.
  clampToRange(name: string, value: number): number {
    const [lo, hi] = this.parameterRange(name);
    return Math.min(hi, Math.max(lo, value));
  }

  editParameter(name: string, value: number, opts: { dragging?: boolean } = {}): void {
    const clamped = this.clampToRange(name, value);
    this.pushHistory();
    this.parameters = { ...this.parameters, [name]: clamped };
    this.scheduleDecode(opts.dragging ? DRAG_RESOLUTION : RELEASE_RESOLUTION);
  }

  // The catalog-preset workflow: a new generic latent, constant S/R/T.
  swapLatent(latent: number[]): void {
    this.pushHistory();
    this.latent = [...latent];
    this.useCustomLatent = true;
    this.scheduleDecode(RELEASE_RESOLUTION);
  }

  undo(): boolean {
    const prev = this.history.pop();
    if (!prev) return false;
    this.shapeId = prev.shapeId;
    this.parameters = { ...prev.parameters };
    this.latent = [...prev.latent];
    this.mesh = prev.mesh;
    if (prev.mesh) this.events.onMesh?.(prev.mesh, this.parameters);
    return true;
  }

  private pushHistory(): void {
    this.history.push({
      shapeId: this.shapeId,
      parameters: { ...this.parameters },
      latent: [...this.latent],
      mesh: this.mesh,
    });
    if (this.history.length > HISTORY_LIMIT) this.history.shift();
  }

  private scheduleDecode(resolution: number): void {
    this.pendingResolution = resolution;
    if (this.debounceTimer !== null) clearTimeout(this.debounceTimer);
    this.debounceTimer = setTimeout(() => {
      this.debounceTimer = null;
      void this.decodeNow(this.pendingResolution);
    }, DEBOUNCE_MS);
  }

  async decodeNow(resolution: number): Promise<void> {
    const seq = ++this.sequence;
    if (this.inFlight) {
      this.queued = resolution;
      return;
    }
    this.inFlight = true;
    try {
      let req;
      if (this.useCustomLatent || !this.shapeId) {
        // custom latent: pin every explicit parameter so S/R/T stay put
        req = { latent: this.latent, overrides: { ...this.parameters }, resolution };
      } else {
        const overrides: Record<string, number> = {};
        for (const [name, value] of Object.entries(this.parameters)) {
          if (this.baseParameters[name] !== value) overrides[name] = value;
        }
        req = { shape_id: this.shapeId, overrides, resolution };
      }
      this.decodeCount += 1;
      const response: DecodeResponse = await this.transport.decode(req);
      if (seq > this.applied) {
        this.applied = seq;
        this.mesh = response.mesh;
        this.lastEcho = response.effective_parameters;
        this.events.onMesh?.(response.mesh, response.effective_parameters);
      }
    } catch (err) {
      this.events.onError?.(err);
    } finally {
      this.inFlight = false;
      if (this.queued !== null) {
        const next = this.queued;
        this.queued = null;
        void this.decodeNow(next);
      }
    }
  }
}
