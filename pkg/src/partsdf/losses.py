"""Training losses for the hybrid shape model.

All functions accept plain arrays or tape tensors (gradients flow when
given tensors) and operate on vectors of per-sample signed distances.
Reconstruction, assistance, and consistency terms compare band-clamped
distances; the overlap term works on raw values so deep interpenetration
is penalised at full depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from itertools import combinations

import numpy as np

from . import autodiff as ad
from .geometry import clamp_delta, overlap_theta


@dataclass
class LossWeights:
    """Scalar weights of the summed objective.

    ``assist_weight``, ``overlap_weight``, ``latent_reg_weight`` scale the
    geometry-assistance, pairwise-overlap, and latent L2 terms; the two
    reconstruction terms and the consistency term enter unweighted.
    ``keep_fraction`` is the robust part-loss quantile; ``clamp_band``
    the distance truncation half-width.
    """

    assist_weight: float = 0.1
    overlap_weight: float = 5.0
    latent_reg_weight: float = 1e-4
    keep_fraction: float = 1.0
    clamp_band: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must be in [0, 1], got {self.keep_fraction}")
        if self.clamp_band <= 0.0:
            raise ValueError("clamp_band must be positive")

    def to_json(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


def _check_same_length(a, b, what):
    na = a.shape[-1] if hasattr(a, "shape") else len(a)
    nb = b.shape[-1] if hasattr(b, "shape") else len(b)
    if na != nb:
        raise ValueError(f"{what}: length mismatch {na} vs {nb}")


def full_reconstruction_loss(pred, gt, clamp_band):
    """Mean L1 between band-clamped predicted and true full-shape SDFs."""
    _check_same_length(pred, gt, "full reconstruction")
    return ad.mean(ad.absolute(clamp_delta(pred, clamp_band) - clamp_delta(gt, clamp_band)))


def part_reconstruction_loss(part_preds, part_gts, keep_fraction, clamp_band):
    """Robust per-part reconstruction: per part, keep only the
    ``floor(keep_fraction * K)`` samples with the smallest clamped error
    and average those; parts are summed. An empty part list (shape
    without labels) contributes exactly zero.

    The sort is error-ascending and stable, and is frozen during
    backpropagation (gradients reach only the kept samples).
    """
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in [0, 1], got {keep_fraction}")
    if len(part_preds) != len(part_gts):
        raise ValueError("per-part predictions and labels disagree in part count")
    total = 0.0
    for pred, gt in zip(part_preds, part_gts):
        _check_same_length(pred, gt, "part reconstruction")
        errors = ad.absolute(clamp_delta(pred, clamp_band) - clamp_delta(gt, clamp_band))
        k = int(np.floor(keep_fraction * (errors.shape[-1])))
        total = total + ad.smallest_k(errors, k)
    return total


def geometry_assist_loss(assist_preds, anchor_geom_sdfs, clamp_band):
    """Mean L1 tying each learned assisted part to its anchoring
    geometry's analytic SDF, summed over assisted primitives."""
    if len(assist_preds) != len(anchor_geom_sdfs):
        raise ValueError("assisted predictions and anchor geometries disagree in count")
    total = 0.0
    for pred, anchor in zip(assist_preds, anchor_geom_sdfs):
        _check_same_length(pred, anchor, "geometry assistance")
        total = total + ad.mean(
            ad.absolute(clamp_delta(pred, clamp_band) - clamp_delta(anchor, clamp_band))
        )
    return total


def intersection_loss(streams):
    """Mean overlap depth summed over all unordered pairs of parts.

    ``streams`` holds the SDF vectors of every part of the final shape
    (generic, geometric, assisted); anchoring geometries of assisted
    parts do not participate.
    """
    total = 0.0
    for a, b in combinations(streams, 2):
        _check_same_length(a, b, "intersection")
        total = total + ad.mean(overlap_theta(a, b))
    return total


def consistency_loss(aux_pred, geom_streams, clamp_band):
    """Mean L1 between the auxiliary head and the union (pointwise min)
    of every analytic geometry stream, anchoring geometries included."""
    if len(geom_streams) == 0:
        raise ValueError("consistency loss needs at least one geometry stream")
    target = ad.reduce_min(list(geom_streams))
    _check_same_length(aux_pred, target, "consistency")
    return ad.mean(
        ad.absolute(clamp_delta(aux_pred, clamp_band) - clamp_delta(target, clamp_band))
    )


def latent_regularization(latents):
    """Sum of squared L2 norms over all latent vectors in scope."""
    total = 0.0
    for v in latents:
        total = total + ad.sum_(ad.square(v))
    return total


@dataclass
class LossTerms:
    """The six components, pre-weighting, of one evaluation."""

    recon_full: object = 0.0
    recon_part: object = 0.0
    assist: object = 0.0
    overlap: object = 0.0
    consistency: object = 0.0
    latent_reg: object = 0.0

    def as_floats(self):
        def val(x):
            return float(x.data) if isinstance(x, ad.Tensor) else float(x)

        return {f.name: val(getattr(self, f.name)) for f in fields(self)}


def total_loss(terms, weights):
    """Weighted sum: recon_full + recon_part + w_ga*assist + w_ic*overlap
    + consistency + w_reg*latent_reg."""
    return (
        terms.recon_full
        + terms.recon_part
        + terms.assist * weights.assist_weight
        + terms.overlap * weights.overlap_weight
        + terms.consistency
        + terms.latent_reg * weights.latent_reg_weight
    )
