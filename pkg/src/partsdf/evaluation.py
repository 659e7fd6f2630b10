"""Quantitative evaluation: point-set metrics, shell IoU, tube
detection via a circle Hough transform, and model-vs-dataset reports.

Chamfer convention: sum of the two directed mean *squared* nearest-
neighbor distances. This matches the magnitude convention of common
benchmarks only up to their (unstated) normalizations, so numbers are
comparable within this codebase, not across papers; reports record the
convention. The Earth Mover's distance is the exact Hungarian matching
for sets up to ``EMD_EXACT_LIMIT`` points and an entropy-regularized
(log-domain Sinkhorn) approximation above, with the regularization
recorded in report summaries.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .geometry import clamp_delta, evaluate_primitive, overlap_theta
from .networks import TRANSLATION_NAMES

EMD_EXACT_LIMIT = 512
SINKHORN_EPS_SCALE = 0.01  # epsilon = scale * mean pairwise cost
SINKHORN_ITERS = 500
CHAMFER_CONVENTION = "sum of directed mean squared nearest-neighbor distances"


class DetectionError(RuntimeError):
    """The cross-section did not contain a concentric circle pair."""


def chamfer(a, b):
    """Symmetric squared-distance Chamfer value between two point sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance of an empty point set")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float(np.mean(d_ab**2) + np.mean(d_ba**2))


def emd(a, b, exact_limit=EMD_EXACT_LIMIT):
    """Minimum mean matching cost under a bijection between equal-size
    sets: exact assignment up to ``exact_limit`` points, Sinkhorn above."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b):
        raise ValueError(f"EMD needs equal-size sets, got {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("EMD of empty sets")
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    if len(a) <= exact_limit:
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean())
    return _sinkhorn_mean_cost(cost)


def _sinkhorn_mean_cost(cost):
    n = cost.shape[0]
    eps = SINKHORN_EPS_SCALE * float(cost.mean())
    log_mu = -np.log(n)
    f = np.zeros(n)
    g = np.zeros(n)
    for _ in range(SINKHORN_ITERS):
        # log-domain updates with uniform marginals
        f = -eps * np.logaddexp.reduce((-cost + g[None, :]) / eps + log_mu, axis=1)
        g = -eps * np.logaddexp.reduce((-cost + f[:, None]) / eps + log_mu, axis=0)
    plan = np.exp((-cost + f[:, None] + g[None, :]) / eps + 2 * log_mu)
    plan /= plan.sum()
    return float((plan * cost).sum())


def shell_iou(sdf_a, sdf_b, resolution=64, bounds=1.0):
    """IoU of voxelized surface shells (|sdf| below 1.5 cell sizes)."""
    if resolution < 8:
        raise ValueError("shell IoU needs resolution >= 8")
    cell = 2.0 * bounds / resolution
    centers = np.linspace(-bounds + cell / 2, bounds - cell / 2, resolution)
    pts = np.stack(np.meshgrid(centers, centers, centers, indexing="ij"), axis=-1).reshape(-1, 3)
    mask_a = _shell_mask(sdf_a, pts, cell)
    mask_b = _shell_mask(sdf_b, pts, cell)
    union = np.logical_or(mask_a, mask_b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(mask_a, mask_b).sum() / union)


def _shell_mask(evaluator, pts, cell, chunk=131072):
    out = np.empty(pts.shape[0], dtype=bool)
    for start in range(0, pts.shape[0], chunk):
        vals = np.asarray(evaluator(pts[start : start + chunk]), dtype=np.float64)
        out[start : start + chunk] = np.abs(vals) < 1.5 * cell
    return out


def sample_mesh_surface(mesh, n, seed=0):
    """Area-weighted uniform samples on a triangle mesh."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    v = mesh.vertices
    tris = mesh.triangles
    e1 = v[tris[:, 1]] - v[tris[:, 0]]
    e2 = v[tris[:, 2]] - v[tris[:, 0]]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    probs = areas / areas.sum()
    chosen = rng.choice(len(tris), size=n, p=probs)
    r1 = np.sqrt(rng.uniform(size=n))[:, None]
    r2 = rng.uniform(size=n)[:, None]
    base = v[tris[chosen, 0]]
    return base + (e1[chosen] * r1) * (1 - r2) + (e2[chosen] * (r1 * r2))


# ---------------------------------------------------------------------------
# Circle Hough tube detection


@dataclass(frozen=True)
class TubeDetection:
    radius: float
    thickness: float

    def __post_init__(self):
        if not self.radius > self.thickness > 0:
            raise ValueError(f"implausible tube: radius={self.radius}, thickness={self.thickness}")


def detect_tube(evaluator, z_plane=0.0, raster=512, radius_bins=512, peak_rel_threshold=0.08):
    """Recover outer radius and wall thickness of an axis-centered tube
    from the SDF's horizontal cross-section.

    The zero contour is rasterized on a ``raster x raster`` slice
    (sign-change detection with linear interpolation along both axes);
    each contour point votes for its distance-to-axis bin. The outermost
    strong peak is the outer wall, the next one inward the inner wall,
    and the thickness their difference.
    """
    axis = np.linspace(-1.0, 1.0, raster)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, float(z_plane))], axis=1)
    vals = np.asarray(evaluator(pts), dtype=np.float64).reshape(raster, raster)
    radii = _contour_radii(vals, axis)
    if radii.size == 0:
        raise DetectionError("no zero crossing in the cross-section")

    votes, edges = np.histogram(radii, bins=radius_bins, range=(0.0, 1.0))
    peaks = _vote_peaks(votes, edges, radii, peak_rel_threshold)
    if len(peaks) < 2:
        raise DetectionError(f"expected two concentric circles, found {len(peaks)} peak(s)")
    # Outer wall: the outermost strong peak (a full sharp circle always
    # dominates interior clutter); inner wall: the next concentric peak.
    strongest = max(total for _, total in peaks)
    candidates = [radius for radius, total in peaks if total >= 0.4 * strongest]
    outer = max(candidates)
    below = [radius for radius, _ in peaks if radius < outer]
    if not below:
        raise DetectionError("no concentric inner circle below the outer wall")
    inner = max(below)
    return TubeDetection(radius=float(outer), thickness=float(outer - inner))


def _contour_radii(vals, axis):
    """Sub-pixel zero-crossing radii along both grid directions."""
    radii = []
    for v, a_fixed, a_run, transpose in (
        (vals, axis, axis, False),
        (vals.T, axis, axis, True),
    ):
        sign_change = (v[:, :-1] * v[:, 1:]) < 0
        ii, jj = np.nonzero(sign_change)
        if ii.size == 0:
            continue
        v0 = v[ii, jj]
        v1 = v[ii, jj + 1]
        t = v0 / (v0 - v1)
        run = a_run[jj] + t * (a_run[jj + 1] - a_run[jj])
        fixed = a_fixed[ii]
        x, y = (fixed, run) if not transpose else (run, fixed)
        radii.append(np.hypot(x, y))
    exact_zero = np.abs(vals) < 1e-12
    if exact_zero.any():
        ii, jj = np.nonzero(exact_zero)
        radii.append(np.hypot(axis[ii], axis[jj]))
    return np.concatenate(radii) if radii else np.zeros(0)


def _vote_peaks(votes, edges, radii, rel_threshold):
    """Cluster above-threshold bins into peaks.

    Returns ``(mean radius, total votes)`` per cluster, sorted by radius.
    The threshold is deliberately permissive: a partially occluded inner
    wall spreads its votes over a few bins, while selection between
    peaks happens downstream.
    """
    threshold = max(rel_threshold * votes.max(), 8.0)
    strong = votes >= threshold
    peaks = []
    i = 0
    while i < len(votes):
        if not strong[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(votes) and strong[j + 1]:
            j += 1
        lo, hi = edges[i], edges[j + 1]
        members = radii[(radii >= lo) & (radii < hi)]
        if members.size:
            peaks.append((float(members.mean()), int(votes[i : j + 1].sum())))
        i = j + 1
    return sorted(peaks)


# ---------------------------------------------------------------------------
# Model measurements


def shape_stream_metrics(bundle, record, evaluator, samples=None):
    """Clamped reconstruction error, assist-anchor gap, and mean pairwise
    overlap of one decoded shape against a record's held-out samples."""
    samples = samples or record.eval_samples or record.samples
    pts = samples.points.astype(np.float64)
    band = bundle.config.weights.clamp_band
    streams = evaluator.streams(pts)
    recon = float(
        np.mean(np.abs(clamp_delta(streams["full"], band) - clamp_delta(samples.sdf_full.astype(np.float64), band)))
    )
    gaps = [
        np.abs(clamp_delta(a, band) - clamp_delta(g, band))
        for a, g in zip(streams["assist"], streams["anchor"])
    ]
    assist_gap = float(np.mean(np.concatenate(gaps))) if gaps else 0.0
    parts = [clamp_delta(s, band) for s in [streams["generic"]] + streams["geometric"] + streams["assist"]]
    overlaps = []
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            overlaps.append(overlap_theta(parts[i], parts[j]))
    overlap = float(np.mean(np.stack(overlaps))) if overlaps else 0.0
    return {"recon_clamped": recon, "assist_gap": assist_gap, "overlap": overlap}


def translation_error(bundle, record, params_vector):
    """Mean ||T_pred - T_gt|| over explicit primitives."""
    gt = bundle.layout.pack(record.composite)
    errs = []
    for prim in record.composite.all_primitives():
        sl = bundle.layout.prim_slices[prim.id]
        names = [f.name for f in bundle.layout.fields[sl]]
        t_idx = [sl.start + i for i, n in enumerate(names) if n in TRANSLATION_NAMES]
        errs.append(np.linalg.norm(np.asarray(params_vector)[t_idx] - gt[t_idx]))
    return float(np.mean(errs))


def evaluate_stored_shapes(bundle, dataset, shape_ids=None):
    """Per-shape stream metrics + pose error using the bundle's stored
    parameters and latents (training shapes)."""
    rows = []
    for shape_id in shape_ids or bundle.shape_ids:
        record = dataset.record(shape_id)
        vec, latent, assists = bundle.stored_shape_state(shape_id)
        evaluator = bundle.evaluator(vec, latent, assists)
        row = {"id": shape_id}
        row.update(shape_stream_metrics(bundle, record, evaluator))
        row["translation_error"] = translation_error(bundle, record, vec)
        rows.append(row)
    return rows


def summarize(rows, keys=None):
    keys = keys or [k for k in rows[0] if k != "id"]
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def manipulation_benchmark(bundle, dataset, states, seed=0, radius_perturb=0.12, thickness_perturb=0.2, tube_id="tube"):
    """Direct-edit manipulation accuracy, detector in the loop.

    For each shape (with its decoded state ``(params, latent, assists)``)
    a target outer radius and thickness are drawn by perturbing the
    ground truth, the parameters are edited directly, the edited shape is
    decoded, and the tube detector reports what it sees; errors are
    relative to the targets.
    """
    rng = np.random.default_rng(seed)
    rows = []
    r_col = bundle.layout.column(f"{tube_id}.outer_radius")
    t_col = bundle.layout.column(f"{tube_id}.thickness")
    from .training import manipulate_direct

    for shape_id, (vec, latent, assists) in states.items():
        record = dataset.record(shape_id, with_samples=False)
        gt = bundle.layout.pack(record.composite)
        target_r = gt[r_col] * (1.0 + rng.uniform(-radius_perturb, radius_perturb))
        target_t = gt[t_col] * (1.0 + rng.uniform(-thickness_perturb, thickness_perturb))
        target_t = min(target_t, 0.8 * target_r)
        edited = manipulate_direct(
            bundle, vec, {f"{tube_id}.outer_radius": target_r, f"{tube_id}.thickness": target_t}
        )
        evaluator = bundle.evaluator(edited, latent, assists)
        detection = detect_tube(evaluator)
        rows.append(
            {
                "id": shape_id,
                "target_radius": float(target_r),
                "target_thickness": float(target_t),
                "detected_radius": detection.radius,
                "detected_thickness": detection.thickness,
                "radius_err": abs(detection.radius - target_r) / target_r,
                "thickness_err": abs(detection.thickness - target_t) / target_t,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Reports


def config_hash(doc):
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def write_report(csv_path, json_path, rows, config_doc, extra=None):
    """Per-shape CSV plus JSON summary (means, counts, config hash)."""
    import csv as _csv

    columns = list(rows[0].keys()) if rows else ["id"]
    with open(csv_path, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    summary = {
        "count": len(rows),
        "means": summarize(rows) if rows else {},
        "config_hash": config_hash(config_doc),
        "chamfer_convention": CHAMFER_CONVENTION,
        "emd_exact_limit": EMD_EXACT_LIMIT,
        "sinkhorn_eps_scale": SINKHORN_EPS_SCALE,
    }
    if extra:
        summary.update(extra)
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
