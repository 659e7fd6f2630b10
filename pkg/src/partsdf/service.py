"""HTTP service exposing decoding and manipulation to UIs and scripts.

All endpoints speak JSON over HTTP/1.1. Handlers never mutate the loaded
model; a reload builds a whole new state object and swaps one reference.
Error contract: 400 malformed request, 404 unknown ids, 422 parameter or
range violations, 500 with a correlation id for internal faults.
"""

from __future__ import annotations

import logging
import uuid
from dataclasses import dataclass, field as dc_field
from threading import Lock

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .dataset import Dataset
from .meshing import GridSpec, marching_cubes, mesh_to_json
from .training import ModelBundle, manipulate_direct, manipulate_shared

logger = logging.getLogger("partsdf.service")

MIN_RESOLUTION = 16
MAX_RESOLUTION = 256
INTERACTIVE_RESOLUTION = 64


class DecodeRequest(BaseModel):
    shape_id: str | None = None
    latent: list[float] | None = None
    overrides: dict[str, float] = {}
    assist_latents: dict[str, list[float]] | None = None
    resolution: int = 48


class ManipulateSharedRequest(BaseModel):
    targets: dict[str, float]
    shape_id: str | None = None
    latent: list[float] | None = None
    steps: int = 300
    resolution: int = 48


@dataclass
class ServiceState:
    """Immutable per-model state; request counters are the only mutation."""

    bundle: ModelBundle
    dataset: Dataset | None
    counters: dict = dc_field(default_factory=dict)
    lock: Lock = dc_field(default_factory=Lock)

    def bump(self, name):
        with self.lock:
            self.counters[name] = self.counters.get(name, 0) + 1

    def stored_ids(self):
        return set(self.bundle.shape_ids)


def load_state(model_path, data_dir=None):
    bundle = ModelBundle.load(model_path)
    dataset = Dataset(data_dir) if data_dir else None
    return ServiceState(bundle=bundle, dataset=dataset)


def create_app(model_path, data_dir=None, static_dir=None):
    app = FastAPI(title="partsdf decode service")
    app.state.service = load_state(model_path, data_dir)

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc):  # noqa: ANN001
        return JSONResponse(status_code=400, content={"error": "malformed request", "detail": str(exc)})

    @app.exception_handler(Exception)
    async def internal(request: Request, exc):  # noqa: ANN001
        error_id = uuid.uuid4().hex[:12]
        logger.exception("internal error %s", error_id)
        return JSONResponse(status_code=500, content={"error": "internal fault", "error_id": error_id})

    @app.get("/api/health")
    def health():
        state = app.state.service
        state.bump("health")
        return {"status": "ok", "requests": dict(state.counters)}

    @app.get("/api/model")
    def model_info():
        state = app.state.service
        state.bump("model")
        bundle = state.bundle
        primitives = []
        for prim in bundle.composite_template.all_primitives():
            primitives.append(
                {
                    "id": prim.id,
                    "role": prim.role,
                    "kind": prim.params.kind,
                    "parameters": [f.qualified for f in bundle.layout.fields if f.prim_id == prim.id],
                    "assist_latent_id": prim.assist_latent_id,
                }
            )
        parameters = [
            {
                "name": f.qualified,
                "range": list(bundle.param_ranges.get(f.qualified, (0.0, 1.0))),
                "positive": f.transform in ("softplus", "thickness"),
            }
            for f in bundle.layout.fields
        ]
        return {
            "variant": bundle.variant,
            "latent_dim": bundle.latent_dim,
            "assist_ids": bundle.assist_ids,
            "primitives": primitives,
            "parameters": parameters,
            "resolution": {
                "min": MIN_RESOLUTION,
                "max": MAX_RESOLUTION,
                "interactive_max": INTERACTIVE_RESOLUTION,
                "slow_above": INTERACTIVE_RESOLUTION,
            },
            "family": bundle.family_meta,
        }

    @app.get("/api/shapes")
    def shapes():
        state = app.state.service
        state.bump("shapes")
        stored = state.stored_ids()
        if state.dataset is not None:
            return [
                {
                    "id": entry["id"],
                    "split": entry["split"],
                    "has_part_labels": entry["has_part_labels"],
                    "stored": entry["id"] in stored,
                }
                for entry in state.dataset.manifest["shapes"]
            ]
        return [{"id": sid, "split": "train", "has_part_labels": False, "stored": True} for sid in state.bundle.shape_ids]

    @app.get("/api/shapes/{shape_id}")
    def shape_detail(shape_id: str):
        state = app.state.service
        state.bump("shape_detail")
        bundle = state.bundle
        if shape_id not in state.stored_ids():
            raise HTTPException(status_code=404, detail=f"unknown or un-stored shape {shape_id!r}")
        vec, latent, assists = bundle.stored_shape_state(shape_id)
        return {
            "id": shape_id,
            "parameters": {name: float(v) for name, v in zip(bundle.layout.names(), vec)},
            "latent": [float(v) for v in latent],
            "assist_latents": {aid: [float(v) for v in a] for aid, a in assists.items()},
        }

    @app.post("/api/decode")
    def decode(req: DecodeRequest):
        state = app.state.service
        state.bump("decode")
        bundle = state.bundle
        _check_resolution(req.resolution)
        vec, latent, assists = _resolve_base(bundle, state, req.shape_id, req.latent)
        if req.assist_latents:
            for aid, values in req.assist_latents.items():
                if aid not in assists:
                    raise HTTPException(status_code=422, detail=f"unknown assist latent id {aid!r}")
                if len(values) != len(assists[aid]):
                    raise HTTPException(status_code=422, detail=f"assist latent {aid!r} must have {len(assists[aid])} values")
                assists[aid] = np.asarray(values, dtype=np.float64)
        vec = _apply_overrides(bundle, vec, req.overrides)
        mesh = marching_cubes(bundle.evaluator(vec, latent, assists), GridSpec(resolution=req.resolution))
        return {
            "mesh": mesh_to_json(mesh),
            "effective_parameters": {name: float(v) for name, v in zip(bundle.layout.names(), vec)},
            "resolution": req.resolution,
        }

    @app.post("/api/manipulate-shared")
    def manipulate_shared_endpoint(req: ManipulateSharedRequest):
        state = app.state.service
        state.bump("manipulate_shared")
        bundle = state.bundle
        _check_resolution(req.resolution)
        if bundle.variant != "shared":
            raise HTTPException(status_code=422, detail="loaded model is not the shared-latent variant")
        known = set(bundle.layout.names())
        for name in req.targets:
            if name not in known:
                raise HTTPException(status_code=422, detail=f"unknown parameter {name!r}")
        if req.shape_id is not None:
            if req.shape_id not in state.stored_ids():
                raise HTTPException(status_code=404, detail=f"unknown shape {req.shape_id!r}")
            lv_init = bundle.shared_table.data[bundle.shape_index(req.shape_id)]
        elif req.latent is not None:
            lv_init = np.asarray(req.latent, dtype=np.float64)
        else:
            raise HTTPException(status_code=422, detail="provide shape_id or latent")
        lv, decoded, history = manipulate_shared(bundle, lv_init, req.targets, steps=req.steps)
        _, assists = bundle.decode_shared(lv)
        mesh = marching_cubes(bundle.evaluator(decoded, lv, assists), GridSpec(resolution=req.resolution))
        return {
            "mesh": mesh_to_json(mesh),
            "latent": [float(v) for v in lv],
            "parameters": {name: float(v) for name, v in zip(bundle.layout.names(), decoded)},
            "objective": history,
        }

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="studio")

    return app


def _check_resolution(resolution):
    if not MIN_RESOLUTION <= resolution <= MAX_RESOLUTION:
        raise HTTPException(
            status_code=422,
            detail=f"resolution must be in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {resolution}",
        )


def _resolve_base(bundle, state, shape_id, latent):
    if shape_id is not None:
        if shape_id not in state.stored_ids():
            raise HTTPException(status_code=404, detail=f"unknown or un-stored shape {shape_id!r}")
        return bundle.stored_shape_state(shape_id)
    if latent is None:
        raise HTTPException(status_code=422, detail="provide shape_id or latent")
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (bundle.latent_dim,):
        raise HTTPException(status_code=422, detail=f"latent must have {bundle.latent_dim} values")
    if bundle.variant == "shared":
        vec, assists = bundle.decode_shared(latent)
        return vec, latent, assists
    vec = bundle.stored_params.mean(axis=0)
    assists = {aid: bundle.stored_assists[:, j].mean(axis=0) for j, aid in enumerate(bundle.assist_ids)}
    return vec, latent, assists


def _apply_overrides(bundle, vec, overrides):
    if not overrides:
        return vec
    try:
        return manipulate_direct(bundle, vec, overrides)
    except KeyError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def reload_model(app, model_path, data_dir=None):
    """Atomically swap in a freshly loaded model between requests."""
    app.state.service = load_state(model_path, data_dir)
