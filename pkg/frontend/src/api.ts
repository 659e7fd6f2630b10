// Typed client for the decode service. All shapes of the payloads the
// backend serves; the session layer only goes through this interface so
// tests can swap in a fake transport.

export interface ParameterInfo {
  name: string;
  range: [number, number];
  positive: boolean;
}

export interface PrimitiveInfo {
  id: string;
  role: string;
  kind: string;
  parameters: string[];
  assist_latent_id: string | null;
}

export interface ModelInfo {
  variant: string;
  latent_dim: number;
  assist_ids: string[];
  primitives: PrimitiveInfo[];
  parameters: ParameterInfo[];
  resolution: { min: number; max: number; interactive_max: number; slow_above: number };
}

export interface ShapeEntry {
  id: string;
  split: string;
  has_part_labels: boolean;
  stored: boolean;
}

export interface ShapeDetail {
  id: string;
  parameters: Record<string, number>;
  latent: number[];
  assist_latents: Record<string, number[]>;
}

export interface MeshPayload {
  positions: number[];
  indices: number[];
  vertex_count: number;
  triangle_count: number;
}

export interface DecodeRequest {
  shape_id?: string;
  latent?: number[];
  overrides: Record<string, number>;
  resolution: number;
}

export interface DecodeResponse {
  mesh: MeshPayload;
  effective_parameters: Record<string, number>;
  resolution: number;
}

export interface Transport {
  model(): Promise<ModelInfo>;
  shapes(): Promise<ShapeEntry[]>;
  shape(id: string): Promise<ShapeDetail>;
  decode(req: DecodeRequest): Promise<DecodeResponse>;
}

export class HttpTransport implements Transport {
  constructor(private base: string = "") {}

  private async get<T>(path: string): Promise<T> {
    const res = await fetch(this.base + path);
    if (!res.ok) throw new Error(`${path}: HTTP ${res.status}`);
    return (await res.json()) as T;
  }

  model(): Promise<ModelInfo> {
    return this.get("/api/model");
  }

  shapes(): Promise<ShapeEntry[]> {
    return this.get("/api/shapes");
  }

  shape(id: string): Promise<ShapeDetail> {
    return this.get(`/api/shapes/${id}`);
  }

  async decode(req: DecodeRequest): Promise<DecodeResponse> {
    const res = await fetch(this.base + "/api/decode", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!res.ok) {
      const body = await res.text();
      throw new Error(`decode: HTTP ${res.status}: ${body}`);
    }
    return (await res.json()) as DecodeResponse;
  }
}
