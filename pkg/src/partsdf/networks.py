"""Networks of the hybrid model and the explicit-parameter codec.

Four small MLPs cover the whole method:

* ``GenericDecoder`` -- DeepSDF-style trunk with an input skip, mapping
  (shape latent, explicit parameters, query point) to the generic part's
  SDF plus an auxiliary head that must reproduce the union of all
  analytic geometry (the coupling that makes edits propagate).
* ``PartDecoder`` -- three dense layers mapping (assist latent, anchor
  parameters, canonical-frame point) to an assisted part's SDF.
* ``PointEncoder`` -- shared per-point MLP, channelwise max pool, then
  one head per output group; exactly permutation invariant.
* ``LatentDecoder`` -- shared-latent variant: one trunk layer plus
  independent branches decoding explicit parameters and assist latents
  from a single code.

``ParamLayout`` owns the flattened explicit-parameter vector: ordering,
names, the raw->actual transforms that keep sizes positive and wall
thickness below the outer radius, and packing from composite specs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Dense, Parameter
from .geometry import PARAM_NAMES, CompositeSpec, GeomParams, Pose, PrimitiveSpec

TRANSLATION_NAMES = ("tx", "ty", "tz")
ROTATION_NAMES = ("rx", "ry", "rz")


@dataclass(frozen=True)
class ParamField:
    """One column of the explicit-parameter vector."""

    prim_id: str
    name: str
    transform: str  # "softplus" | "thickness" | "identity"
    column: int
    anchor_column: int = -1  # outer-radius column for "thickness"

    @property
    def qualified(self):
        return f"{self.prim_id}.{self.name}"


class ParamLayout:
    """Flattened (S, T[, R]) vector over all explicit primitives."""

    def __init__(self, composite, predict_rotation=False):
        self.predict_rotation = predict_rotation
        self.fields = []
        self.prim_slices = {}
        col = 0
        for prim in composite.all_primitives():
            start = col
            names = PARAM_NAMES[prim.params.kind]
            outer_col = -1
            for name in names:
                if prim.params.kind == "hollow_cylinder" and name == "thickness":
                    self.fields.append(ParamField(prim.id, name, "thickness", col, outer_col))
                else:
                    if name == "outer_radius":
                        outer_col = col
                    self.fields.append(ParamField(prim.id, name, "softplus", col))
                col += 1
            for name in TRANSLATION_NAMES:
                self.fields.append(ParamField(prim.id, name, "identity", col))
                col += 1
            if predict_rotation:
                for name in ROTATION_NAMES:
                    self.fields.append(ParamField(prim.id, name, "identity", col))
                    col += 1
            self.prim_slices[prim.id] = slice(start, col)

    @property
    def dim(self):
        return len(self.fields)

    def names(self):
        return [f.qualified for f in self.fields]

    def column(self, qualified):
        for f in self.fields:
            if f.qualified == qualified:
                return f.column
        raise KeyError(f"unknown parameter {qualified!r}")

    def pack(self, composite):
        """Actual parameter values of a composite, in layout order."""
        out = np.zeros(self.dim, dtype=np.float64)
        for prim in composite.all_primitives():
            sl = self.prim_slices[prim.id]
            vals = list(prim.params.values) + list(prim.pose.translation)
            if self.predict_rotation:
                vals += list(prim.pose.rotation)
            out[sl] = vals
        return out

    def update_composite(self, composite, vector):
        """Rebuild a composite with parameter values taken from ``vector``."""
        vector = np.asarray(vector, dtype=np.float64)
        geometric, assisted = [], []
        for prim in composite.all_primitives():
            sl = self.prim_slices[prim.id]
            vals = vector[sl]
            n_s = len(PARAM_NAMES[prim.params.kind])
            params = GeomParams(prim.params.kind, tuple(vals[:n_s]))
            translation = tuple(vals[n_s : n_s + 3])
            rotation = tuple(vals[n_s + 3 : n_s + 6]) if self.predict_rotation else prim.pose.rotation
            new = PrimitiveSpec(prim.id, prim.role, params, Pose(rotation, translation), prim.assist_latent_id)
            (geometric if prim.role == "geometric" else assisted).append(new)
        return CompositeSpec(geometric=tuple(geometric), assisted=tuple(assisted))

    def decode_raw(self, raw):
        """Map unconstrained raw columns to actual parameter values.

        Sizes go through softplus; a wall thickness is the decoded outer
        radius times a sigmoid, which keeps every composite valid no
        matter what the encoder emits. Works on (B, dim) tensors or
        arrays; returns the same kind.
        """
        cols = [raw[:, f.column : f.column + 1] for f in self.fields]
        out = [None] * self.dim
        for f in self.fields:
            if f.transform == "softplus":
                out[f.column] = ad.softplus(cols[f.column])
            elif f.transform == "identity":
                out[f.column] = cols[f.column]
        for f in self.fields:
            if f.transform == "thickness":
                out[f.column] = ad.sigmoid(cols[f.column]) * out[f.anchor_column]
        if isinstance(raw, ad.Tensor):
            return ad.concat(out, axis=1)
        return np.concatenate(out, axis=1)

    def encode_actual(self, actual):
        """Inverse of :meth:`decode_raw` (numpy only), for seeding raw
        parameters from known-good actual values."""
        actual = np.atleast_2d(np.asarray(actual, dtype=np.float64))
        raw = np.zeros_like(actual)
        for f in self.fields:
            v = actual[:, f.column]
            if f.transform == "softplus":
                raw[:, f.column] = v + np.log1p(-np.exp(-np.maximum(v, 1e-12)))
            elif f.transform == "thickness":
                frac = np.clip(v / actual[:, f.anchor_column], 1e-6, 1 - 1e-6)
                raw[:, f.column] = np.log(frac / (1.0 - frac))
            else:
                raw[:, f.column] = v
        return raw

    def ranges_from_samples(self, vectors, pad=0.15):
        """Per-field (lo, hi) bounds from observed vectors, padded."""
        vectors = np.asarray(vectors, dtype=np.float64)
        lo = vectors.min(axis=0)
        hi = vectors.max(axis=0)
        span = np.maximum(hi - lo, 1e-3)
        lo_p, hi_p = lo - pad * span, hi + pad * span
        out = {}
        for f in self.fields:
            low = lo_p[f.column]
            if f.transform in ("softplus", "thickness"):
                low = max(low, 1e-3)
            out[f.qualified] = (float(low), float(hi_p[f.column]))
        return out


@dataclass
class NetworkConfig:
    """Architecture sizes. Defaults are desk scale; ``paper_scale`` gives
    the full-size configuration (input budget 256, hidden 512)."""

    generic_input_budget: int = 64  # latent width + explicit-parameter width
    generic_hidden: int = 128
    generic_layers: int = 8
    generic_skip_at: int = 4
    part_hidden: int = 64
    part_layers: int = 3
    assist_latent_dim: int = 8
    encoder_mlp: tuple = (64, 128, 256)
    encoder_head_hidden: int = 128
    latent_decoder_hidden: int = 128
    shared_latent_dim: int = 64
    predict_rotation: bool = False

    @classmethod
    def paper_scale(cls):
        return cls(
            generic_input_budget=256,
            generic_hidden=512,
            shared_latent_dim=256,
            latent_decoder_hidden=256,
        )

    def to_json(self):
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["encoder_mlp"] = list(self.encoder_mlp)
        return doc

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        doc["encoder_mlp"] = tuple(doc["encoder_mlp"])
        return cls(**doc)


def _as_rows(x):
    """Promote a single input vector to a one-row batch."""
    if isinstance(x, ad.Tensor):
        return (ad.reshape(x, (1, -1)), True) if x.ndim == 1 else (x, False)
    x = np.asarray(x)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _concat(parts, axis=1):
    if any(isinstance(p, ad.Tensor) for p in parts):
        return ad.concat(parts, axis=axis)
    return np.concatenate(parts, axis=axis)


class GenericDecoder:
    """Trunk MLP with one full-input skip connection and up to two heads."""

    def __init__(self, in_dim, config, rng, with_aux=True, dtype=np.float64, name="generic"):
        hidden, layers, skip_at = config.generic_hidden, config.generic_layers, config.generic_skip_at
        if not 1 <= skip_at < layers:
            raise ValueError("skip layer index out of range")
        if hidden - in_dim < 8:
            raise ValueError(f"hidden width {hidden} too small for input width {in_dim} with a skip")
        self.in_dim = in_dim
        self.skip_at = skip_at
        self.with_aux = with_aux
        self.trunk = []
        cur = in_dim
        for i in range(layers):
            out_w = hidden - in_dim if i == skip_at - 1 else hidden
            self.trunk.append(Dense(cur, out_w, rng, f"{name}.trunk{i}", dtype))
            cur = out_w + in_dim if i == skip_at - 1 else out_w
        self.sdf_head = Dense(cur, 1, rng, f"{name}.sdf", dtype, init_scale=0.05)
        self.aux_head = Dense(cur, 1, rng, f"{name}.aux", dtype, init_scale=0.05) if with_aux else None

    def __call__(self, z):
        """``z`` is (N, in_dim); returns ``(sdf, aux)`` of shape (N,)
        (``aux`` is None without the auxiliary head)."""
        z, single = _as_rows(z)
        h = z
        for i, layer in enumerate(self.trunk):
            h = ad.relu(layer(h))
            if i == self.skip_at - 1:
                h = _concat([h, z], axis=1)
        sdf = ad.reshape(self.sdf_head(h), (-1,))
        aux = ad.reshape(self.aux_head(h), (-1,)) if self.with_aux else None
        if single:
            sdf = sdf[0] if isinstance(sdf, ad.Tensor) else float(sdf[0])
            if aux is not None:
                aux = aux[0] if isinstance(aux, ad.Tensor) else float(aux[0])
        return sdf, aux

    def parameters(self):
        ps = [p for layer in self.trunk for p in layer.parameters()]
        ps += self.sdf_head.parameters()
        if self.aux_head is not None:
            ps += self.aux_head.parameters()
        return ps


class PartDecoder:
    """Small MLP for assisted parts: (assist latent, anchor S, local p) -> sdf."""

    def __init__(self, in_dim, config, rng, dtype=np.float64, name="part"):
        widths = [in_dim] + [config.part_hidden] * (config.part_layers - 1) + [1]
        self.layers = [
            Dense(widths[i], widths[i + 1], rng, f"{name}.l{i}", dtype, init_scale=0.05 if i == len(widths) - 2 else 1.0)
            for i in range(len(widths) - 1)
        ]

    def __call__(self, z):
        z, single = _as_rows(z)
        h = z
        for layer in self.layers[:-1]:
            h = ad.relu(layer(h))
        out = ad.reshape(self.layers[-1](h), (-1,))
        if single:
            out = out[0] if isinstance(out, ad.Tensor) else float(out[0])
        return out

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class _Head:
    """Per-group regression head: dense + relu, one residual block, output
    layer seeded at ``raw_init`` with damped weights so decoding starts
    near the family prior."""

    def __init__(self, in_dim, hidden, out_dim, rng, name, raw_init=None, dtype=np.float64):
        self.fc1 = Dense(in_dim, hidden, rng, f"{name}.fc1", dtype)
        self.fc2 = Dense(hidden, hidden, rng, f"{name}.fc2", dtype)
        self.out = Dense(hidden, out_dim, rng, f"{name}.out", dtype)
        self.out.W.data *= 0.1
        if raw_init is not None:
            self.out.b.data = np.asarray(raw_init, dtype=dtype).copy()

    def __call__(self, g):
        h = ad.relu(self.fc1(g))
        h = h + ad.relu(self.fc2(h))
        return self.out(h)

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters() + self.out.parameters()


class PointEncoder:
    """PointNet-style regressor from surface clouds to raw explicit
    parameters and assist latents."""

    def __init__(self, layout, assist_ids, config, rng, raw_prior=None, dtype=np.float64, name="encoder"):
        self.layout = layout
        self.assist_ids = list(assist_ids)
        widths = [3] + list(config.encoder_mlp)
        self.mlp = [
            Dense(widths[i], widths[i + 1], rng, f"{name}.mlp{i}", dtype) for i in range(len(widths) - 1)
        ]
        feat = widths[-1]
        self.prim_heads = {}
        for prim_id, sl in layout.prim_slices.items():
            init = None if raw_prior is None else raw_prior[sl]
            self.prim_heads[prim_id] = _Head(
                feat, config.encoder_head_hidden, sl.stop - sl.start, rng, f"{name}.head.{prim_id}", init, dtype
            )
        self.assist_heads = {
            aid: _Head(feat, config.encoder_head_hidden, config.assist_latent_dim, rng, f"{name}.assist.{aid}", None, dtype)
            for aid in self.assist_ids
        }

    def __call__(self, clouds):
        """``clouds`` is (B, P, 3); returns ``(raw_params, assists)`` with
        ``raw_params`` (B, layout.dim) and ``assists`` a dict of (B, 8)."""
        clouds = np.asarray(clouds) if not isinstance(clouds, ad.Tensor) else clouds
        if isinstance(clouds, ad.Tensor):
            b, p = clouds.shape[0], clouds.shape[1]
            h = ad.reshape(clouds, (b * p, 3))
        else:
            if clouds.ndim != 3 or clouds.shape[-1] != 3 or clouds.shape[1] == 0:
                raise ValueError(f"expected a (B, P>=1, 3) cloud batch, got {clouds.shape}")
            b, p = clouds.shape[0], clouds.shape[1]
            h = clouds.reshape(b * p, 3)
        for layer in self.mlp:
            h = ad.relu(layer(h))
        g = ad.maxpool_rows(h, b)
        cols = [self.prim_heads[prim_id](g) for prim_id in self.layout.prim_slices]
        raw = _concat(cols, axis=1)
        assists = {aid: head(g) for aid, head in self.assist_heads.items()}
        return raw, assists

    def parameters(self):
        ps = [p for layer in self.mlp for p in layer.parameters()]
        for head in self.prim_heads.values():
            ps += head.parameters()
        for head in self.assist_heads.values():
            ps += head.parameters()
        return ps


class LatentDecoder:
    """Shared-variant decoder from one code to raw parameters + assist
    latents: a single shared trunk layer, then independent branches."""

    def __init__(self, layout, assist_ids, config, rng, raw_prior=None, dtype=np.float64, name="latdec"):
        self.layout = layout
        self.assist_ids = list(assist_ids)
        hidden = config.latent_decoder_hidden
        self.trunk = Dense(config.shared_latent_dim, hidden, rng, f"{name}.trunk", dtype)
        self.prim_heads = {}
        for prim_id, sl in layout.prim_slices.items():
            init = None if raw_prior is None else raw_prior[sl]
            self.prim_heads[prim_id] = _Head(
                hidden, hidden, sl.stop - sl.start, rng, f"{name}.head.{prim_id}", init, dtype
            )
        self.assist_heads = {
            aid: _Head(hidden, hidden, config.assist_latent_dim, rng, f"{name}.assist.{aid}", None, dtype)
            for aid in self.assist_ids
        }

    def __call__(self, lv_shared):
        lv, single = _as_rows(lv_shared)
        g = ad.relu(self.trunk(lv))
        cols = [self.prim_heads[prim_id](g) for prim_id in self.layout.prim_slices]
        raw = _concat(cols, axis=1)
        assists = {aid: head(g) for aid, head in self.assist_heads.items()}
        return raw, assists

    def parameters(self):
        ps = self.trunk.parameters()
        for head in self.prim_heads.values():
            ps += head.parameters()
        for head in self.assist_heads.values():
            ps += head.parameters()
        return ps


class VariantError(RuntimeError):
    """Operation invoked on a bundle of the wrong model variant."""
