// Studio wiring: catalog, parameter sliders from the model schema,
// latent presets, undo, and the live viewport.

import { HttpTransport, type ShapeEntry } from "./api.js";
import { DRAG_RESOLUTION, RELEASE_RESOLUTION, Session } from "./session.js";
import { MeshViewer } from "./viewer.js";

const transport = new HttpTransport();
const viewport = document.getElementById("viewport") as HTMLElement;
const catalogEl = document.getElementById("catalog") as HTMLSelectElement;
const presetEl = document.getElementById("preset") as HTMLSelectElement;
const slidersEl = document.getElementById("sliders") as HTMLElement;
const statsEl = document.getElementById("stats") as HTMLElement;
const statusEl = document.getElementById("status") as HTMLElement;
const undoBtn = document.getElementById("undo") as HTMLButtonElement;
const latentField = document.getElementById("latent-field") as HTMLTextAreaElement;
const latentApply = document.getElementById("latent-apply") as HTMLButtonElement;

const viewer = new MeshViewer(viewport);
const session = new Session(transport, {
  onMesh: (mesh, echo) => {
    viewer.setMesh(mesh);
    statsEl.textContent = `${mesh.vertex_count} vertices / ${mesh.triangle_count} triangles`;
    statusEl.textContent = "ready";
    syncSliders(echo);
  },
  onError: (err) => {
    statusEl.textContent = String(err);
  },
});

const sliderInputs = new Map<string, { input: HTMLInputElement; label: HTMLElement }>();

function syncSliders(echo: Record<string, number>): void {
  for (const [name, entry] of sliderInputs) {
    if (name in echo) {
      entry.label.textContent = echo[name].toFixed(4);
      // the displayed value is the service's echo, not a local guess
      if (document.activeElement !== entry.input) entry.input.value = String(echo[name]);
    }
  }
}

function buildSliders(): void {
  slidersEl.innerHTML = "";
  sliderInputs.clear();
  for (const info of session.modelInfo.parameters) {
    const row = document.createElement("div");
    row.className = "slider-row";
    const title = document.createElement("span");
    title.textContent = info.name;
    const value = document.createElement("span");
    value.className = "value";
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(info.range[0]);
    input.max = String(info.range[1]);
    input.step = String((info.range[1] - info.range[0]) / 200);
    input.addEventListener("input", () => {
      statusEl.textContent = `decoding at ${DRAG_RESOLUTION}...`;
      session.editParameter(info.name, Number(input.value), { dragging: true });
    });
    input.addEventListener("change", () => {
      statusEl.textContent = `decoding at ${RELEASE_RESOLUTION}...`;
      session.editParameter(info.name, Number(input.value));
    });
    row.append(title, input, value);
    slidersEl.appendChild(row);
    sliderInputs.set(info.name, { input, label: value });
  }
}

async function selectShape(id: string): Promise<void> {
  statusEl.textContent = "loading shape...";
  const detail = await transport.shape(id);
  latentField.value = detail.latent.map((v) => v.toFixed(4)).join(", ");
  await session.loadShape(detail);
}

async function boot(): Promise<void> {
  await session.start();
  buildSliders();
  const shapes = await transport.shapes();
  const stored = shapes.filter((s: ShapeEntry) => s.stored);
  for (const target of [catalogEl, presetEl]) {
    target.innerHTML = "";
    for (const s of stored) {
      const opt = document.createElement("option");
      opt.value = s.id;
      opt.textContent = s.id + (s.has_part_labels ? " (labeled)" : "");
      target.appendChild(opt);
    }
  }
  catalogEl.addEventListener("change", () => void selectShape(catalogEl.value));
  presetEl.addEventListener("change", async () => {
    const detail = await transport.shape(presetEl.value);
    latentField.value = detail.latent.map((v) => v.toFixed(4)).join(", ");
    session.swapLatent(detail.latent);
    statusEl.textContent = "decoding with preset latent...";
  });
  latentApply.addEventListener("click", () => {
    const values = latentField.value.split(",").map((t) => Number(t.trim()));
    if (values.some((v) => !Number.isFinite(v)) || values.length !== session.modelInfo.latent_dim) {
      statusEl.textContent = `latent needs ${session.modelInfo.latent_dim} numbers`;
      return;
    }
    session.swapLatent(values);
  });
  undoBtn.addEventListener("click", () => {
    if (!session.undo()) statusEl.textContent = "nothing to undo";
  });
  if (stored.length) await selectShape(stored[0].id);
}

void boot();
