"""Joint training, inference-time reconstruction, and manipulation.

The composite model evaluated at a query point is the union (pointwise
min) of three kinds of streams:

* the generic decoder's SDF, conditioned on a per-shape latent and (in
  the disentangled variant) on every explicit parameter;
* one analytic SDF per geometric primitive, computed from decoded
  parameters so gradients reach whatever produced them;
* one part-decoder SDF per assisted primitive, evaluated in the
  primitive's canonical frame, with its anchoring geometry evaluated
  alongside for the assistance and consistency terms.

In the disentangled variant a point encoder predicts parameters and
assist latents from surface clouds; in the shared variant a latent
decoder produces them from one per-shape code and the consistency head
is disabled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Adam, Parameter, load_checkpoint, save_checkpoint
from .geometry import PARAM_NAMES, SDF_KERNELS, CompositeSpec, clamp_delta, rotate_inverse_columns
from .losses import LossTerms, LossWeights
from .networks import (
    GenericDecoder,
    LatentDecoder,
    NetworkConfig,
    ParamLayout,
    PartDecoder,
    PointEncoder,
    VariantError,
    _concat,
)
from .shapegen import derive_rng

METRIC_COLUMNS = ("epoch", "recon_full", "recon_part", "assist", "overlap", "consistency", "latent_reg", "total")

ABLATION_FLAGS = (
    "disable_part_loss",
    "disable_assist_loss",
    "disable_overlap_loss",
    "disable_consistency_loss",
    "disable_point_encoder",
)


class TrainingDiverged(FloatingPointError):
    """Raised when the objective turns non-finite; carries context."""


@dataclass
class TrainConfig:
    variant: str = "disentangled"
    epochs: int = 2000
    batch_size: int = 32
    samples_per_iteration: int = 2000
    lr_generic: float = 5e-4
    lr_latent: float = 1e-3
    lr_encoder: float = 2e-4  # point encoder and part decoder
    lr_latent_decoder: float = 2e-4
    lr_shared_latent: float = 5e-3
    weights: LossWeights = field(default_factory=LossWeights)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    disable_part_loss: bool = False
    disable_assist_loss: bool = False
    disable_overlap_loss: bool = False
    disable_consistency_loss: bool = False
    disable_point_encoder: bool = False
    encoder_points: int = 2048
    seed: int = 0
    dtype: str = "float32"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.variant not in ("disentangled", "shared"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if min(self.epochs, self.batch_size, self.samples_per_iteration, self.encoder_points) < 1:
            raise ValueError("epochs, batch size, and sample counts must be positive")
        for name in ("lr_generic", "lr_latent", "lr_encoder", "lr_latent_decoder", "lr_shared_latent"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype is float32 or float64")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_json(self):
        doc = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("weights", "network")}
        doc["weights"] = self.weights.to_json()
        doc["network"] = self.network.to_json()
        return doc

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        doc["weights"] = LossWeights.from_json(doc.get("weights", {}))
        doc["network"] = NetworkConfig.from_json(doc["network"]) if "network" in doc else NetworkConfig()
        return cls(**doc)


@dataclass
class InferConfig:
    iterations: int = 800
    samples_per_iteration: int = 8000
    lr_latent: float = 5e-3
    lr_params: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.samples_per_iteration < 1:
            raise ValueError("inference sizes must be positive")

    def to_json(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


class ModelBundle:
    """Everything needed to decode shapes: networks, latent tables,
    per-shape stored parameters, and the loss configuration."""

    def __init__(self, composite_template, config, shape_ids, rng, raw_prior=None, param_ranges=None, family_meta=None):
        self.variant = config.variant
        self.config = config
        self.composite_template = composite_template
        self.layout = ParamLayout(composite_template, config.network.predict_rotation)
        self.assist_ids = composite_template.assist_latent_ids()
        self.shape_ids = list(shape_ids)
        self.param_ranges = {k: tuple(v) for k, v in (param_ranges or {}).items()}
        self.family_meta = family_meta or {}
        net, dtype = config.network, config.np_dtype

        assisted = composite_template.assisted
        s_dims = {len(PARAM_NAMES[p.params.kind]) for p in assisted}
        if len(s_dims) > 1:
            raise ValueError("assisted primitives must share one parameter arity for the part decoder")
        self.assist_s_dim = s_dims.pop() if s_dims else 0

        if self.variant == "disentangled":
            self.latent_dim = net.generic_input_budget - self.layout.dim
            if self.latent_dim < 4:
                raise ValueError(
                    f"input budget {net.generic_input_budget} leaves latent width {self.latent_dim}; increase it"
                )
            generic_in = self.latent_dim + self.layout.dim + 3
            self.generic_decoder = GenericDecoder(generic_in, net, rng, with_aux=True, dtype=dtype)
            self.point_encoder = (
                None
                if config.disable_point_encoder
                else PointEncoder(self.layout, self.assist_ids, net, rng, raw_prior, dtype)
            )
            self.latent_decoder = None
            self.latent_table = Parameter(
                rng.normal(0.0, 0.01, size=(len(self.shape_ids), self.latent_dim)).astype(dtype),
                "latents.generic",
                sparse_rows=True,
            )
            self.shared_table = None
        else:
            self.latent_dim = net.shared_latent_dim
            self.generic_decoder = GenericDecoder(self.latent_dim + 3, net, rng, with_aux=False, dtype=dtype)
            self.point_encoder = None
            self.latent_decoder = LatentDecoder(self.layout, self.assist_ids, net, rng, raw_prior, dtype)
            self.latent_table = None
            self.shared_table = Parameter(
                rng.normal(0.0, 0.01, size=(len(self.shape_ids), self.latent_dim)).astype(dtype),
                "latents.shared",
                sparse_rows=True,
            )

        self.part_decoder = (
            PartDecoder(net.assist_latent_dim + self.assist_s_dim + 3, net, rng, dtype)
            if assisted
            else None
        )
        # Free parameter/assist tables for the encoder-less ablation,
        # initialized near zero like any auto-decoded latent (they get one
        # update per epoch, which is the failure mode this ablation shows).
        if config.disable_point_encoder and self.variant == "disentangled":
            self.free_raw_params = Parameter(
                rng.normal(0.0, 0.01, size=(len(self.shape_ids), self.layout.dim)).astype(dtype),
                "free.params",
                sparse_rows=True,
            )
            self.free_assists = Parameter(
                rng.normal(0.0, 0.01, size=(len(self.shape_ids), len(self.assist_ids), net.assist_latent_dim)).astype(dtype),
                "free.assists",
                sparse_rows=True,
            )
        else:
            self.free_raw_params = None
            self.free_assists = None

        n = len(self.shape_ids)
        self.stored_params = np.zeros((n, self.layout.dim), dtype=np.float64)
        self.stored_assists = np.zeros((n, len(self.assist_ids), net.assist_latent_dim), dtype=np.float64)

    # -- parameter plumbing -------------------------------------------------
    def network_parameters(self):
        ps = self.generic_decoder.parameters()
        if self.part_decoder is not None:
            ps += self.part_decoder.parameters()
        if self.point_encoder is not None:
            ps += self.point_encoder.parameters()
        if self.latent_decoder is not None:
            ps += self.latent_decoder.parameters()
        return ps

    def all_parameters(self):
        ps = list(self.network_parameters())
        for table in (self.latent_table, self.shared_table, self.free_raw_params, self.free_assists):
            if table is not None:
                ps.append(table)
        return ps

    def shape_index(self, shape_id):
        return self.shape_ids.index(shape_id)

    # -- persistence ---------------------------------------------------------
    def save(self, path):
        params = list(self.all_parameters())
        extra = {
            "stored.params": self.stored_params,
            "stored.assists": self.stored_assists,
        }
        meta = {
            "variant": self.variant,
            "train_config": self.config.to_json(),
            "composite": self.composite_template.to_json(),
            "shape_ids": self.shape_ids,
            "assist_ids": self.assist_ids,
            "param_ranges": {k: list(v) for k, v in self.param_ranges.items()},
            "family_meta": self.family_meta,
        }
        arrays = {p.name: p.data for p in params}
        arrays.update(extra)
        save_checkpoint(path, [Parameter(v, k) for k, v in arrays.items()], meta)

    @classmethod
    def load(cls, path):
        arrays, meta = load_checkpoint(path)
        config = TrainConfig.from_json(meta["train_config"])
        composite = CompositeSpec.from_json(meta["composite"])
        rng = np.random.default_rng(0)  # immediately overwritten below
        bundle = cls(
            composite,
            config,
            meta["shape_ids"],
            rng,
            param_ranges={k: tuple(v) for k, v in meta["param_ranges"].items()},
            family_meta=meta.get("family_meta", {}),
        )
        for p in bundle.all_parameters():
            if p.name not in arrays:
                raise ValueError(f"checkpoint is missing parameter {p.name!r}")
            if arrays[p.name].shape != p.data.shape:
                raise ValueError(f"checkpoint parameter {p.name!r} has shape {arrays[p.name].shape}, expected {p.data.shape}")
            p.data = arrays[p.name].astype(p.data.dtype)
        bundle.stored_params = arrays["stored.params"].astype(np.float64)
        bundle.stored_assists = arrays["stored.assists"].astype(np.float64)
        return bundle

    # -- decoding ------------------------------------------------------------
    def stored_shape_state(self, shape_id):
        """(params vector, generic latent, assist latents) of a training shape."""
        idx = self.shape_index(shape_id)
        assists = {aid: self.stored_assists[idx, j] for j, aid in enumerate(self.assist_ids)}
        if self.variant == "disentangled":
            latent = self.latent_table.data[idx].astype(np.float64)
        else:
            latent = self.shared_table.data[idx].astype(np.float64)
        return self.stored_params[idx].copy(), latent, assists

    def decode_shared(self, lv_shared):
        """Parameters and assist latents decoded from one shared code."""
        if self.variant != "shared":
            raise VariantError("latent decoding requires the shared-latent variant")
        lv = np.asarray(lv_shared, dtype=self.config.np_dtype).reshape(1, -1)
        raw, assists = self.latent_decoder(lv)
        actual = self.layout.decode_raw(raw)
        return actual[0].astype(np.float64), {aid: np.asarray(a[0], dtype=np.float64) for aid, a in assists.items()}

    def evaluator(self, params_vector, latent, assists, chunk=65536):
        return CompositeEvaluator(self, params_vector, latent, assists, chunk)


def _geometry_columns(layout, prim, params_pp, px, py, pz, predict_rotation):
    """Local-frame coordinates and size parameters of one primitive,
    sliced out of the per-point parameter matrix."""
    sl = layout.prim_slices[prim.id]
    n_s = len(PARAM_NAMES[prim.params.kind])
    s_cols = [params_pp[:, sl.start + i] for i in range(n_s)]
    tx = params_pp[:, sl.start + n_s]
    ty = params_pp[:, sl.start + n_s + 1]
    tz = params_pp[:, sl.start + n_s + 2]
    x, y, z = px - tx, py - ty, pz - tz
    if predict_rotation:
        rx = params_pp[:, sl.start + n_s + 3]
        ry = params_pp[:, sl.start + n_s + 4]
        rz = params_pp[:, sl.start + n_s + 5]
        x, y, z = rotate_inverse_columns(rx, ry, rz, x, y, z)
    return s_cols, x, y, z


def forward_streams(bundle, points, params_pp, assists_pp, latent_pp):
    """All SDF streams of the composite model at flattened query points.

    ``points`` is (N, 3) (plain array); ``params_pp`` the per-point
    explicit parameters (N, dim); ``assists_pp`` maps assist id to
    (N, 8); ``latent_pp`` the per-point generic (or shared) latent.
    Inputs may be tensors or arrays, and the streams come back matching.
    Returns a dict with ``generic``, ``aux``, ``geometric`` (list),
    ``assist`` (list), ``anchor`` (list, the assisted primitives'
    geometry), and ``full``.
    """
    px, py, pz = points[:, 0], points[:, 1], points[:, 2]
    layout = bundle.layout
    predict_rot = layout.predict_rotation

    # The generic decoder conditions on the explicit parameters but must
    # not steer them: parameter placement is driven by the analytic
    # branches (reconstruction, part labels, assistance, overlap), while
    # the decoder weights learn the parameter dependency from varied
    # inputs. A live input path lets the trunk push parameters toward
    # whatever is easiest to predict, which empirically ejects parts.
    generic_in = (
        _concat([latent_pp, ad.detach(params_pp), points], axis=1)
        if bundle.variant == "disentangled"
        else _concat([latent_pp, points], axis=1)
    )
    generic, aux = bundle.generic_decoder(generic_in)

    geometric = []
    for prim in bundle.composite_template.geometric:
        s_cols, x, y, z = _geometry_columns(layout, prim, params_pp, px, py, pz, predict_rot)
        geometric.append(SDF_KERNELS[prim.params.kind](*s_cols, x, y, z))

    assist, anchor = [], []
    for prim in bundle.composite_template.assisted:
        s_cols, x, y, z = _geometry_columns(layout, prim, params_pp, px, py, pz, predict_rot)
        anchor.append(SDF_KERNELS[prim.params.kind](*s_cols, x, y, z))
        cols = [assists_pp[prim.assist_latent_id]]
        cols += [ad.reshape(c, (-1, 1)) for c in s_cols]
        cols += [ad.reshape(c, (-1, 1)) for c in (x, y, z)]
        assist.append(bundle.part_decoder(_concat(cols, axis=1)))

    full = ad.reduce_min([generic] + geometric + assist)
    return {
        "generic": generic,
        "aux": aux,
        "geometric": geometric,
        "assist": assist,
        "anchor": anchor,
        "full": full,
    }


class CompositeEvaluator:
    """Inference-time SDF of one decoded shape (pure numpy, chunked)."""

    def __init__(self, bundle, params_vector, latent, assists, chunk=65536):
        self.bundle = bundle
        dtype = bundle.config.np_dtype
        self.params_vector = np.asarray(params_vector, dtype=dtype).reshape(1, -1)
        self.latent = np.asarray(latent, dtype=dtype).reshape(1, -1)
        self.assists = {k: np.asarray(v, dtype=dtype).reshape(1, -1) for k, v in assists.items()}
        self.chunk = chunk

    def streams(self, points):
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=self.bundle.config.np_dtype)
        outs = None
        for start in range(0, points.shape[0], self.chunk):
            pts = points[start : start + self.chunk]
            n = pts.shape[0]
            streams = forward_streams(
                self.bundle,
                pts,
                np.repeat(self.params_vector, n, axis=0),
                {k: np.repeat(v, n, axis=0) for k, v in self.assists.items()},
                np.repeat(self.latent, n, axis=0),
            )
            if outs is None:
                outs = {k: [] for k in streams}
            for k, v in streams.items():
                if isinstance(v, list):
                    outs.setdefault(k, [])
                    outs[k].append([np.asarray(s, dtype=np.float64) for s in v])
                elif v is None:
                    outs[k] = None
                else:
                    outs[k].append(np.asarray(v, dtype=np.float64))
        merged = {}
        for k, v in outs.items():
            if v is None:
                merged[k] = None
            elif k in ("geometric", "assist", "anchor"):
                merged[k] = [np.concatenate(parts) for parts in zip(*v)] if v and v[0] else []
            else:
                merged[k] = np.concatenate(v)
        return merged

    def __call__(self, points):
        return self.streams(points)["full"]


# ---------------------------------------------------------------------------
# Training


class _BatchBuilder:
    """In-memory training views of a dataset, with per-iteration subsampling."""

    def __init__(self, dataset, config):
        records = dataset.records("train", with_samples=True)
        if not records:
            raise ValueError("training requires at least one shape")
        self.records = records
        dtype = config.np_dtype
        self.points = [r.samples.points.astype(dtype) for r in records]
        self.sdf_full = [r.samples.sdf_full.astype(dtype) for r in records]
        self.part_sdfs = [
            {k: v.astype(dtype) for k, v in r.samples.part_sdfs.items()} if r.has_part_labels else None
            for r in records
        ]
        self.clouds = [r.surface_cloud.astype(dtype) for r in records]
        self.labeled = np.array([r.has_part_labels for r in records])
        self.gt_vectors = None  # filled lazily by evaluation helpers

    def batch(self, indices, k, encoder_points, rng, dtype):
        # uniform counts across the batch keep the per-shape slicing valid
        k = min(k, min(self.points[i].shape[0] for i in indices))
        encoder_points = min(encoder_points, min(self.clouds[i].shape[0] for i in indices))
        pts, gts, clouds = [], [], []
        part_gts = []
        for i in indices:
            n = self.points[i].shape[0]
            sel = rng.choice(n, size=min(k, n), replace=False)
            pts.append(self.points[i][sel])
            gts.append(self.sdf_full[i][sel])
            if self.part_sdfs[i] is not None:
                part_gts.append({key: v[sel] for key, v in self.part_sdfs[i].items()})
            else:
                part_gts.append(None)
            cloud = self.clouds[i]
            csel = rng.choice(cloud.shape[0], size=min(encoder_points, cloud.shape[0]), replace=False)
            clouds.append(cloud[csel])
        return (
            np.concatenate(pts).astype(dtype),
            np.concatenate(gts).astype(dtype),
            part_gts,
            np.stack(clouds).astype(dtype),
        )


def _batch_losses(bundle, config, streams, gt_full, part_gts, latent_rows, assists_rows, k):
    w = config.weights
    band = w.clamp_band
    b = len(part_gts)
    terms = LossTerms()
    terms.recon_full = L.full_reconstruction_loss(streams["full"], gt_full, band)

    if not config.disable_part_loss and any(p is not None for p in part_gts):
        # Labeled shapes supervise the geometric streams, the learned
        # assisted streams, and the assisted parts' anchoring geometry
        # (the analytic route is what pins those parts' parameters).
        part_streams = streams["geometric"] + streams["assist"] + streams["anchor"]
        part_ids = [p.id for p in bundle.composite_template.geometric] + 2 * [
            p.id for p in bundle.composite_template.assisted
        ]
        total = 0.0
        for i, gts in enumerate(part_gts):
            if gts is None:
                continue
            sl = slice(i * k, (i + 1) * k)
            preds = [s[sl] for s in part_streams]
            labels = [gts[pid] for pid in part_ids]
            total = total + L.part_reconstruction_loss(preds, labels, w.keep_fraction, band)
        terms.recon_part = total * (1.0 / b)

    if streams["assist"] and not config.disable_assist_loss:
        # Live coupling in both directions: the learned part chases its
        # anchor and the anchor's parameters feel the part. Co-drift is
        # held off by the part labels supervising the anchors directly.
        terms.assist = L.geometry_assist_loss(streams["assist"], streams["anchor"], band)
    if not config.disable_overlap_loss:
        # Band-clamped streams, like every other loss input: deep containment
        # saturates, so the penalty acts on near-surface interpenetration.
        clamped = [
            clamp_delta(s, band)
            for s in [streams["generic"]] + streams["geometric"] + streams["assist"]
        ]
        terms.overlap = L.intersection_loss(clamped)
    if streams["aux"] is not None and not config.disable_consistency_loss:
        # The union of analytic geometry is the regression TARGET of the
        # auxiliary head; detaching it keeps the head chasing the geometry
        # rather than the geometry fleeing the head (which degenerates into
        # ejecting every primitive so the target becomes constant).
        geom_targets = [ad.detach(s) for s in streams["geometric"] + streams["anchor"]]
        terms.consistency = L.consistency_loss(streams["aux"], geom_targets, band)

    reg = ad.sum_(ad.square(latent_rows)) * (1.0 / b)
    for rows in assists_rows.values():
        reg = reg + ad.sum_(ad.square(rows)) * (1.0 / b)
    terms.latent_reg = reg
    return terms


def train(dataset, config, out_dir=None, log=None):
    """Train a model on a dataset's training split.

    Returns ``(bundle, metrics)`` where ``metrics`` is one dict per epoch
    with per-iteration-averaged loss components. Deterministic for fixed
    (dataset, config). Raises :class:`TrainingDiverged` on a non-finite
    objective, after writing the last finite checkpoint when ``out_dir``
    is given.
    """
    import pathlib

    builder = _BatchBuilder(dataset, config)
    records = builder.records
    layout = ParamLayout(records[0].composite, config.network.predict_rotation)
    gt_vectors = np.stack([layout.pack(r.composite) for r in records])
    raw_prior = layout.encode_actual(gt_vectors.mean(axis=0, keepdims=True))[0]

    rng_init = derive_rng(config.seed, "init")
    bundle = ModelBundle(
        records[0].composite,
        config,
        [r.id for r in records],
        rng_init,
        raw_prior=raw_prior,
        param_ranges=dataset.manifest.get("param_ranges", {}),
        family_meta={"family_name": dataset.manifest.get("family_name"), "family": dataset.manifest.get("family")},
    )

    optimizers = [Adam(bundle.generic_decoder.parameters(), config.lr_generic)]
    enc_params = []
    if bundle.part_decoder is not None:
        enc_params += bundle.part_decoder.parameters()
    if bundle.point_encoder is not None:
        enc_params += bundle.point_encoder.parameters()
    if enc_params:
        optimizers.append(Adam(enc_params, config.lr_encoder))
    if bundle.latent_decoder is not None:
        optimizers.append(Adam(bundle.latent_decoder.parameters(), config.lr_latent_decoder))
    if bundle.latent_table is not None:
        optimizers.append(Adam([bundle.latent_table], config.lr_latent))
    if bundle.shared_table is not None:
        optimizers.append(Adam([bundle.shared_table], config.lr_shared_latent))
    for table in (bundle.free_raw_params, bundle.free_assists):
        if table is not None:
            optimizers.append(Adam([table], config.lr_latent))

    rng = derive_rng(config.seed, "batches")
    n = len(records)
    k = config.samples_per_iteration
    dtype = config.np_dtype
    metrics = []
    out_path = pathlib.Path(out_dir) if out_dir else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)
    snapshot = None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_terms = np.zeros(len(METRIC_COLUMNS) - 1)
        n_iter = 0
        for start in range(0, n, config.batch_size):
            indices = order[start : start + config.batch_size]
            pts, gt_full, part_gts, clouds = builder.batch(indices, k, config.encoder_points, rng, dtype)
            b = len(indices)
            k_used = pts.shape[0] // b

            if bundle.variant == "disentangled":
                latent_rows = bundle.latent_table[np.asarray(indices)]
                if bundle.point_encoder is not None:
                    # Wrap as a (constant) tensor so the encoder records a graph.
                    raw, assist_rows = bundle.point_encoder(ad.Tensor(clouds))
                else:
                    raw = bundle.free_raw_params[np.asarray(indices)]
                    assist_rows = {
                        aid: bundle.free_assists[np.asarray(indices), j]
                        for j, aid in enumerate(bundle.assist_ids)
                    }
                params_rows = bundle.layout.decode_raw(raw)
            else:
                latent_rows = bundle.shared_table[np.asarray(indices)]
                raw, assist_rows = bundle.latent_decoder(latent_rows)
                params_rows = bundle.layout.decode_raw(raw)

            params_pp = ad.repeat_rows(params_rows, k_used)
            latent_pp = ad.repeat_rows(latent_rows, k_used)
            assists_pp = {aid: ad.repeat_rows(rows, k_used) for aid, rows in assist_rows.items()}

            streams = forward_streams(bundle, pts, params_pp, assists_pp, latent_pp)
            terms = _batch_losses(bundle, config, streams, gt_full, part_gts, latent_rows, assist_rows, k_used)
            total = L.total_loss(terms, config.weights)

            total_value = float(total.data)
            if not np.isfinite(total_value):
                if out_path and snapshot is not None:
                    _restore_snapshot(bundle, snapshot)
                    bundle.save(out_path / "last_good.npz")
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, iteration {n_iter + 1}")

            for opt in optimizers:
                opt.zero_grad()
            total.backward()
            for opt in optimizers:
                opt.step()

            vals = terms.as_floats()
            epoch_terms += np.array([vals[c] for c in METRIC_COLUMNS[1:-1]] + [total_value])
            n_iter += 1

        row = {"epoch": epoch}
        row.update({c: epoch_terms[i] / n_iter for i, c in enumerate(METRIC_COLUMNS[1:])})
        metrics.append(row)
        if log:
            log(row)
        snapshot = _take_snapshot(bundle)
        if out_path and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            _finalize_stored(bundle, builder)
            bundle.save(out_path / f"checkpoint_{epoch:05d}.npz")

    _finalize_stored(bundle, builder)
    if out_path:
        bundle.save(out_path / "model.npz")
        write_metrics_csv(out_path / "metrics.csv", metrics)
    return bundle, metrics


def _take_snapshot(bundle):
    return {p.name: p.data.copy() for p in bundle.all_parameters()}


def _restore_snapshot(bundle, snapshot):
    for p in bundle.all_parameters():
        p.data = snapshot[p.name].copy()


def _finalize_stored(bundle, builder):
    """Record each training shape's decoded parameters and assist codes
    (full-cloud encoder pass, or latent-decoder pass for shared)."""
    for i, record in enumerate(builder.records):
        if bundle.variant == "shared":
            vec, assists = bundle.decode_shared(bundle.shared_table.data[i])
        elif bundle.point_encoder is not None:
            vec, assists = predict_parameters(bundle, record.surface_cloud)
        else:
            vec = bundle.layout.decode_raw(bundle.free_raw_params.data[i : i + 1])[0].astype(np.float64)
            assists = {
                aid: bundle.free_assists.data[i, j].astype(np.float64)
                for j, aid in enumerate(bundle.assist_ids)
            }
        bundle.stored_params[i] = vec
        for j, aid in enumerate(bundle.assist_ids):
            bundle.stored_assists[i, j] = assists[aid]


def predict_parameters(bundle, cloud):
    """Encoder estimate of (actual parameter vector, assist latents) from
    a surface cloud; free-table models fall back to the stored values."""
    if bundle.variant != "disentangled":
        raise VariantError("parameter prediction applies to the disentangled variant")
    if bundle.point_encoder is None:
        raise VariantError("this bundle was trained without a point encoder")
    cloud = np.asarray(cloud, dtype=bundle.config.np_dtype)[None]
    raw, assists = bundle.point_encoder(cloud)
    actual = bundle.layout.decode_raw(raw)[0].astype(np.float64)
    return actual, {aid: np.asarray(v[0], dtype=np.float64) for aid, v in assists.items()}


def write_metrics_csv(path, metrics):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in metrics:
            writer.writerow(row)


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


# ---------------------------------------------------------------------------
# Inference-time reconstruction


@dataclass
class ReconstructionResult:
    params_vector: np.ndarray
    latent: np.ndarray
    assists: dict
    initial_loss: float
    final_loss: float

    def evaluator(self, bundle):
        return bundle.evaluator(self.params_vector, self.latent, self.assists)


def reconstruct(bundle, samples, cloud, config):
    """Fit a new shape by optimizing latents and explicit parameters
    against observed full-shape SDF samples; network weights stay fixed.

    The point encoder initializes the explicit parameters (disentangled
    variant); with ``iterations=0`` those estimates are returned as-is.
    """
    dtype = bundle.config.np_dtype
    rng = derive_rng(config.seed, "reconstruct")
    pts_all = samples.points.astype(dtype)
    gt_all = samples.sdf_full.astype(dtype)
    w = bundle.config.weights

    if bundle.variant == "disentangled":
        raw_init, assist_init = _encoder_raw(bundle, cloud)
        free_raw = Parameter(raw_init.astype(dtype), "infer.params")
        free_assists = {
            aid: Parameter(assist_init[aid].reshape(1, -1).astype(dtype), f"infer.assist.{aid}")
            for aid in bundle.assist_ids
        }
        latent = Parameter(rng.normal(0.0, 0.01, size=(1, bundle.latent_dim)).astype(dtype), "infer.latent")
        opts = [Adam([latent], config.lr_latent)]
        slow = [free_raw] + list(free_assists.values())
        if slow:
            opts.append(Adam(slow, config.lr_params))
    else:
        latent = Parameter(rng.normal(0.0, 0.01, size=(1, bundle.latent_dim)).astype(dtype), "infer.latent")
        free_raw, free_assists = None, None
        opts = [Adam([latent], config.lr_latent)]

    def evaluate(points, gt):
        n = points.shape[0]
        if bundle.variant == "disentangled":
            params_rows = bundle.layout.decode_raw(free_raw)
            assist_rows = free_assists
        else:
            raw, assist_rows = bundle.latent_decoder(latent)
            params_rows = bundle.layout.decode_raw(raw)
        streams = forward_streams(
            bundle,
            points,
            ad.repeat_rows(params_rows, n),
            {aid: ad.repeat_rows(rows, n) for aid, rows in assist_rows.items()},
            ad.repeat_rows(latent, n),
        )
        loss = L.full_reconstruction_loss(streams["full"], gt, w.clamp_band)
        reg = ad.sum_(ad.square(latent))
        for rows in assist_rows.values():
            reg = reg + ad.sum_(ad.square(rows))
        return loss + reg * w.latent_reg_weight

    sel = rng.choice(pts_all.shape[0], size=min(config.samples_per_iteration, pts_all.shape[0]), replace=False)
    initial = float(evaluate(pts_all[sel], gt_all[sel]).data)
    for _ in range(config.iterations):
        sel = rng.choice(pts_all.shape[0], size=min(config.samples_per_iteration, pts_all.shape[0]), replace=True)
        loss = evaluate(pts_all[sel], gt_all[sel])
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged("non-finite loss during reconstruction")
        for opt in opts:
            opt.zero_grad()
        loss.backward()
        for opt in opts:
            opt.step()

    if bundle.variant == "disentangled":
        params_vector = bundle.layout.decode_raw(free_raw.data)[0].astype(np.float64)
        assists = {aid: p.data[0].astype(np.float64) for aid, p in free_assists.items()}
    else:
        params_vector, assists = bundle.decode_shared(latent.data[0])
    sel = rng.choice(pts_all.shape[0], size=min(config.samples_per_iteration, pts_all.shape[0]), replace=False)
    final = float(evaluate(pts_all[sel], gt_all[sel]).data)
    return ReconstructionResult(
        params_vector=params_vector,
        latent=latent.data[0].astype(np.float64),
        assists=assists,
        initial_loss=initial,
        final_loss=final,
    )


def _encoder_raw(bundle, cloud):
    if bundle.point_encoder is None:
        raise VariantError("reconstruction needs a point encoder for initial estimates")
    cloud = np.asarray(cloud, dtype=bundle.config.np_dtype)[None]
    raw, assists = bundle.point_encoder(cloud)
    raw = np.asarray(raw.data if isinstance(raw, ad.Tensor) else raw)
    return raw.copy(), {aid: np.asarray(v.data if isinstance(v, ad.Tensor) else v)[0] for aid, v in assists.items()}


# ---------------------------------------------------------------------------
# Manipulation


def manipulate_direct(bundle, base_vector, edits):
    """Apply explicit parameter edits; exact by construction.

    ``edits`` maps qualified names (``tube.outer_radius``) to new values.
    Unknown names raise KeyError; values violating positivity or the
    thickness-under-radius invariant raise ValueError.
    """
    vector = np.asarray(base_vector, dtype=np.float64).copy()
    by_name = {f.qualified: f for f in bundle.layout.fields}
    for name, value in edits.items():
        if name not in by_name:
            raise KeyError(f"unknown parameter {name!r}; known: {sorted(by_name)}")
        vector[by_name[name].column] = float(value)
    for f in bundle.layout.fields:
        if f.transform in ("softplus", "thickness") and vector[f.column] <= 0:
            raise ValueError(f"{f.qualified} must stay positive")
        if f.transform == "thickness" and vector[f.column] >= vector[f.anchor_column]:
            raise ValueError(f"{f.qualified} must stay below its outer radius")
    return vector


def manipulate_shared(bundle, lv_init, targets, steps=400, lr=5e-3, reg_weight=None, seed=0):
    """Optimize a shared code so targeted decoded parameters hit their
    target values: L1 on the selected outputs plus latent L2.

    ``targets`` maps qualified parameter names to desired (actual)
    values. Returns ``(lv, decoded_vector, history)``.
    """
    if bundle.variant != "shared":
        raise VariantError("target-driven manipulation requires the shared-latent variant")
    if reg_weight is None:
        reg_weight = bundle.config.weights.latent_reg_weight
    columns = np.array([bundle.layout.column(name) for name in targets], dtype=int)
    values = np.array([targets[name] for name in targets], dtype=np.float64)
    dtype = bundle.config.np_dtype

    lv = Parameter(np.asarray(lv_init, dtype=dtype).reshape(1, -1).copy(), "manip.latent")
    opt = Adam([lv], lr)
    history = []
    for _ in range(max(steps, 1)):
        raw, _ = bundle.latent_decoder(lv)
        actual = bundle.layout.decode_raw(raw)
        picked = actual[(np.zeros_like(columns), columns)]
        objective = ad.sum_(ad.absolute(picked - values.astype(dtype))) + reg_weight * ad.sum_(ad.square(lv))
        history.append(float(objective.data))
        if steps == 0:
            break
        opt.zero_grad()
        objective.backward()
        opt.step()

    decoded, _ = bundle.decode_shared(lv.data[0])
    return lv.data[0].astype(np.float64), decoded, history
