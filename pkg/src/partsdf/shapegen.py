"""Synthetic shape families with exact analytic ground truth.

Two families are provided:

* ``mixer`` -- a central tube encased by screw sections at both ends
  (all hollow cylinders) with flange rings (assisted primitives sharing
  one latent id) and an internal helical sweep as the generic part;
* ``chair-toy`` -- four cuboid legs under a generic seat-plus-back body.

Every part has a closed-form SDF, so sampled signed distances, surface
clouds, normalization factors, and per-part labels are exact rather than
mesh-derived. Generation is deterministic from ``(family, seed)``; each
record derives its own RNG stream.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CompositeError,
    CompositeSpec,
    GeomParams,
    Pose,
    PrimitiveSpec,
    evaluate_primitive,
    rotation_matrix,
)
from .helix import HelixSpec, helix_sdf, sample_helix_surface

NORMALIZED_RADIUS = 1.0 / 1.03
SURFACE_TOLERANCE = 1e-4


def derive_rng(seed, *keys):
    """Deterministic child RNG from a seed and string/int keys."""
    ints = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            ints.append(zlib.crc32(key.encode("utf-8")))
        else:
            ints.append(int(key) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))


# ---------------------------------------------------------------------------
# Generic parts (analytic stand-ins for the learned component)


class HelixPart:
    """Helical tube generic part."""

    kind = "helix"

    def __init__(self, spec):
        self.spec = spec

    def sdf(self, points):
        return helix_sdf(self.spec, points)

    def surface_area(self):
        return self.spec.surface_area()

    def sample_surface(self, n, rng):
        return sample_helix_surface(self.spec, n, rng)

    def centroid(self):
        return self.spec.surface_centroid()

    def max_point_norm(self):
        return self.spec.max_point_norm()

    def transformed(self, shift, scale):
        return HelixPart(self.spec.transformed(shift, scale))

    def to_json(self):
        return self.spec.to_json()

    @classmethod
    def from_json(cls, doc):
        return cls(HelixSpec.from_json(doc))


class BoxUnionPart:
    """Generic part made of axis-aligned boxes (seat + back of the chair)."""

    kind = "box_union"

    def __init__(self, half_extents, centers):
        self.half_extents = np.atleast_2d(np.asarray(half_extents, dtype=np.float64))
        self.centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        if self.half_extents.shape != self.centers.shape:
            raise ValueError("one center per box required")

    def sdf(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        best = np.full(points.shape[0], np.inf)
        for half, center in zip(self.half_extents, self.centers):
            q = np.abs(points - center) - half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(np.max(q, axis=1), 0.0)
            best = np.minimum(best, outside + inside)
        return best

    def _areas(self):
        h = self.half_extents
        return 8.0 * (h[:, 0] * h[:, 1] + h[:, 1] * h[:, 2] + h[:, 0] * h[:, 2])

    def surface_area(self):
        return float(np.sum(self._areas()))

    def sample_surface(self, n, rng):
        areas = self._areas()
        counts = _proportional_counts(n, areas)
        pts = []
        for half, center, count in zip(self.half_extents, self.centers, counts):
            if count:
                pts.append(_sample_box_surface(half, count, rng) + center)
        out = np.concatenate(pts, axis=0) if pts else np.zeros((0, 3))
        return out[rng.permutation(out.shape[0])]

    def centroid(self):
        areas = self._areas()
        return (self.centers * areas[:, None]).sum(axis=0) / areas.sum()

    def max_point_norm(self):
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        best = 0.0
        for half, center in zip(self.half_extents, self.centers):
            corners = center + signs * half
            best = max(best, float(np.linalg.norm(corners, axis=1).max()))
        return best

    def transformed(self, shift, scale):
        return BoxUnionPart(self.half_extents * scale, (self.centers - np.asarray(shift)) * scale)

    def to_json(self):
        return {
            "type": "box_union",
            "half_extents": self.half_extents.tolist(),
            "centers": self.centers.tolist(),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(doc["half_extents"], doc["centers"])


def generic_part_from_json(doc):
    if doc["type"] == "helix":
        return HelixPart.from_json(doc)
    if doc["type"] == "box_union":
        return BoxUnionPart.from_json(doc)
    raise ValueError(f"unknown generic part type {doc['type']!r}")


# ---------------------------------------------------------------------------
# Samples and records


@dataclass
class SampleSet:
    """Query points with ground-truth signed distances."""

    points: np.ndarray  # (K, 3)
    sdf_full: np.ndarray  # (K,)
    part_sdfs: dict = field(default_factory=dict)  # part id -> (K,)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def has_part_labels(self):
        return bool(self.part_sdfs)

    def transformed(self, shift, scale):
        return SampleSet(
            points=(self.points - np.asarray(shift)) * scale,
            sdf_full=self.sdf_full * scale,
            part_sdfs={k: v * scale for k, v in self.part_sdfs.items()},
        )


@dataclass
class ShapeRecord:
    """One synthetic shape: exact decomposition plus derived data."""

    id: str
    composite: CompositeSpec
    generic_part: object
    has_part_labels: bool = False
    samples: SampleSet | None = None
    eval_samples: SampleSet | None = None
    surface_cloud: np.ndarray | None = None

    def full_sdf(self, points):
        """Ground-truth union SDF: min over the generic part and every
        explicit primitive (anchor geometries coincide with parts here)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        best = self.generic_part.sdf(points)
        for prim in self.composite.all_primitives():
            best = np.minimum(best, evaluate_primitive(prim, points))
        return best

    def part_sdf(self, prim_id, points):
        return evaluate_primitive(self.composite.primitive(prim_id), points)


def _proportional_counts(n, weights):
    """Integer allocation of ``n`` by weight (largest remainder)."""
    weights = np.asarray(weights, dtype=np.float64)
    raw = n * weights / weights.sum()
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(raw - counts)[::-1]
    counts[order[:short]] += 1
    return counts


def _sample_box_surface(half, n, rng):
    face_areas = np.array(
        [half[1] * half[2], half[1] * half[2], half[0] * half[2], half[0] * half[2], half[0] * half[1], half[0] * half[1]]
    )
    counts = _proportional_counts(n, face_areas)
    pts = np.empty((n, 3))
    row = 0
    for face, count in enumerate(counts):
        if count == 0:
            continue
        axis, side = divmod(face, 2)
        u, v = [i for i in range(3) if i != axis]
        block = np.empty((count, 3))
        block[:, axis] = half[axis] if side == 0 else -half[axis]
        block[:, u] = rng.uniform(-half[u], half[u], count)
        block[:, v] = rng.uniform(-half[v], half[v], count)
        pts[row : row + count] = block
        row += count
    return pts


def _sample_primitive_surface(prim, n, rng):
    """Uniform-area points on a primitive's surface, in world space."""
    kind = prim.params.kind
    vals = prim.params.values
    if kind == "sphere":
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        local = dirs * vals[0]
    elif kind == "cylinder":
        r, h = vals
        areas = np.array([4 * np.pi * r * h, np.pi * r**2, np.pi * r**2])
        counts = _proportional_counts(n, areas)
        parts = []
        if counts[0]:
            ang = rng.uniform(0, 2 * np.pi, counts[0])
            z = rng.uniform(-h, h, counts[0])
            parts.append(np.stack([r * np.cos(ang), r * np.sin(ang), z], axis=1))
        for side, count in zip((1.0, -1.0), counts[1:]):
            if count:
                ang = rng.uniform(0, 2 * np.pi, count)
                rad = r * np.sqrt(rng.uniform(0, 1, count))
                parts.append(np.stack([rad * np.cos(ang), rad * np.sin(ang), np.full(count, side * h)], axis=1))
        local = np.concatenate(parts, axis=0)
    elif kind == "hollow_cylinder":
        a, t, h = vals
        inner = a - t
        ring_area = np.pi * (a**2 - inner**2)
        areas = np.array([4 * np.pi * a * h, 4 * np.pi * inner * h, ring_area, ring_area])
        counts = _proportional_counts(n, areas)
        parts = []
        for radius, count in zip((a, inner), counts[:2]):
            if count:
                ang = rng.uniform(0, 2 * np.pi, count)
                z = rng.uniform(-h, h, count)
                parts.append(np.stack([radius * np.cos(ang), radius * np.sin(ang), z], axis=1))
        for side, count in zip((1.0, -1.0), counts[2:]):
            if count:
                ang = rng.uniform(0, 2 * np.pi, count)
                rad = np.sqrt(rng.uniform(inner**2, a**2, count))
                parts.append(np.stack([rad * np.cos(ang), rad * np.sin(ang), np.full(count, side * h)], axis=1))
        local = np.concatenate(parts, axis=0)
    elif kind == "cuboid":
        local = _sample_box_surface(np.asarray(vals), n, rng)
    else:  # pragma: no cover - kinds are validated upstream
        raise ValueError(kind)
    world = local @ rotation_matrix(np.asarray(prim.pose.rotation)).T + np.asarray(prim.pose.translation)
    return world


def primitive_surface_area(prim):
    kind, vals = prim.params.kind, prim.params.values
    if kind == "sphere":
        return 4 * np.pi * vals[0] ** 2
    if kind == "cylinder":
        r, h = vals
        return 4 * np.pi * r * h + 2 * np.pi * r**2
    if kind == "hollow_cylinder":
        a, t, h = vals
        inner = a - t
        return 4 * np.pi * a * h + 4 * np.pi * inner * h + 2 * np.pi * (a**2 - inner**2)
    if kind == "cuboid":
        bx, by, bz = vals
        return 8 * (bx * by + by * bz + bx * bz)
    raise ValueError(kind)


def primitive_max_norm(prim):
    """Largest ||x|| on a posed primitive's surface (closed form)."""
    kind, vals = prim.params.kind, prim.params.values
    center = np.asarray(prim.pose.translation)
    rot = rotation_matrix(np.asarray(prim.pose.rotation))
    if kind == "sphere":
        return float(np.linalg.norm(center) + vals[0])
    if kind in ("cylinder", "hollow_cylinder"):
        radius = vals[0]
        h = vals[-1]
        axis = rot @ np.array([0.0, 0.0, 1.0])
        best = 0.0
        for side in (-1.0, 1.0):
            c = center + side * h * axis
            c_axial = np.dot(c, axis) * axis
            in_plane = np.linalg.norm(c - c_axial)
            best = max(best, np.sqrt(np.linalg.norm(c) ** 2 + radius**2 + 2 * radius * in_plane))
        return float(best)
    if kind == "cuboid":
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        corners = (signs * np.asarray(vals)) @ rot.T + center
        return float(np.linalg.norm(corners, axis=1).max())
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# Normalization


def normalize_record(record):
    """Center the surface centroid at the origin and scale the farthest
    surface point to exactly 1/1.03; parameters, poses, the generic
    part, and any attached samples are rescaled consistently."""
    parts = list(record.composite.all_primitives())
    areas = [primitive_surface_area(p) for p in parts] + [record.generic_part.surface_area()]
    centroids = [np.asarray(p.pose.translation) for p in parts] + [record.generic_part.centroid()]
    areas = np.asarray(areas)
    if not np.all(np.isfinite(areas)) or areas.sum() <= 0:
        raise CompositeError("degenerate shape: no surface area")
    shift = (np.stack(centroids) * areas[:, None]).sum(axis=0) / areas.sum()

    shifted = _transform_record(record, shift, 1.0)
    max_norm = max(
        [primitive_max_norm(p) for p in shifted.composite.all_primitives()]
        + [shifted.generic_part.max_point_norm()]
    )
    if not np.isfinite(max_norm) or max_norm <= 1e-12:
        raise CompositeError("degenerate shape: zero extent")
    return _transform_record(shifted, np.zeros(3), NORMALIZED_RADIUS / max_norm)


def _transform_record(record, shift, scale):
    shift = np.asarray(shift, dtype=np.float64)
    geometric, assisted = [], []
    for prim in record.composite.all_primitives():
        params = GeomParams(prim.params.kind, tuple(np.asarray(prim.params.values) * scale))
        translation = tuple((np.asarray(prim.pose.translation) - shift) * scale)
        new = PrimitiveSpec(prim.id, prim.role, params, Pose(prim.pose.rotation, translation), prim.assist_latent_id)
        (geometric if prim.role == "geometric" else assisted).append(new)
    return ShapeRecord(
        id=record.id,
        composite=CompositeSpec(tuple(geometric), tuple(assisted)),
        generic_part=record.generic_part.transformed(shift, scale),
        has_part_labels=record.has_part_labels,
        samples=record.samples.transformed(shift, scale) if record.samples else None,
        eval_samples=record.eval_samples.transformed(shift, scale) if record.eval_samples else None,
        surface_cloud=(record.surface_cloud - shift) * scale if record.surface_cloud is not None else None,
    )


# ---------------------------------------------------------------------------
# Sampling


def sample_surface_points(record, n=10_000, seed=0):
    """Area-weighted points on the full shape's surface.

    Candidates are drawn per part proportionally to analytic areas and
    rejected when strictly inside another part, so every returned point
    satisfies |full SDF| < 1e-4 (in fact to machine precision).
    """
    if n < 1:
        raise ValueError("need at least one surface point")
    rng = derive_rng(seed, record.id, "surface")
    sources = [("__generic__", record.generic_part.surface_area())] + [
        (p.id, primitive_surface_area(p)) for p in record.composite.all_primitives()
    ]
    counts = _proportional_counts(n, [a for _, a in sources])
    collected = []
    for (part_id, _), want in zip(sources, counts):
        have = [np.zeros((0, 3))]
        got = 0
        for _ in range(60):
            if got >= want:
                break
            ask = max(32, int((want - got) * 1.4))
            if part_id == "__generic__":
                cand = record.generic_part.sample_surface(ask, rng)
            else:
                cand = _sample_primitive_surface(record.composite.primitive(part_id), ask, rng)
            keep = cand[record.full_sdf(cand) >= -1e-9]
            have.append(keep[: want - got])
            got += have[-1].shape[0]
        if got < want:
            raise RuntimeError(f"part {part_id!r} of {record.id}: surface almost fully swallowed")
        collected.append(np.concatenate(have, axis=0))
    points = np.concatenate(collected, axis=0)
    return points[rng.permutation(points.shape[0])]


def sample_sdf(
    record,
    n_total=50_000,
    seed=0,
    near_sigmas=(0.05, 0.016),
    near_fractions=(0.475, 0.475),
    tag="samples",
):
    """Near-surface + uniform-ball query points with exact labels.

    Per the default strategy, 47.5% of points are surface points jittered
    with each of two Gaussian scales and 5% are uniform in the unit ball.
    Per-part distances are attached only for labeled records.
    """
    if n_total < 1:
        raise ValueError("need at least one sample")
    rng = derive_rng(seed, record.id, tag)
    n_near = [int(round(f * n_total)) for f in near_fractions]
    n_uniform = n_total - sum(n_near)
    base = sample_surface_points(record, max(sum(n_near), 1), seed=zlib.crc32(f"{seed}:{tag}:base".encode()))
    chunks = []
    start = 0
    for count, sigma in zip(n_near, near_sigmas):
        chunks.append(base[start : start + count] + rng.normal(0.0, sigma, size=(count, 3)))
        start += count
    if n_uniform > 0:
        dirs = rng.normal(size=(n_uniform, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = rng.uniform(0.0, 1.0, n_uniform) ** (1.0 / 3.0)
        chunks.append(dirs * radii[:, None])
    points = np.concatenate(chunks, axis=0)
    points = points[rng.permutation(points.shape[0])]
    # Quantize to the storage precision first so stored labels are exactly
    # the analytic SDF of the stored coordinates.
    points = points.astype(np.float32).astype(np.float64)
    part_sdfs = {}
    if record.has_part_labels:
        for prim in record.composite.all_primitives():
            part_sdfs[prim.id] = evaluate_primitive(prim, points)
    return SampleSet(points=points, sdf_full=record.full_sdf(points), part_sdfs=part_sdfs)


def inject_label_noise(samples, rate, magnitude, seed=0):
    """Perturb exactly ``floor(rate * K)`` entries of every per-part
    channel by U(-magnitude, magnitude); full-shape labels untouched."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("noise rate must be in [0, 1]")
    rng = derive_rng(seed, "label-noise")
    k = samples.size
    n_hit = int(np.floor(rate * k))
    noisy = {}
    for part_id, values in samples.part_sdfs.items():
        values = values.copy()
        idx = rng.choice(k, size=n_hit, replace=False)
        values[idx] += rng.uniform(-magnitude, magnitude, n_hit)
        noisy[part_id] = values
    return SampleSet(points=samples.points, sdf_full=samples.sdf_full, part_sdfs=noisy)


# ---------------------------------------------------------------------------
# Mixer family


@dataclass(frozen=True)
class MixerFamilyParams:
    """Sampling ranges of the mixer family (pre-normalization units)."""

    outer_radius_range: tuple = (0.30, 0.42)
    thickness_range: tuple = (0.055, 0.09)
    tube_half_length_range: tuple = (0.45, 0.62)
    rings_per_end: int = 1
    helix_types: tuple = (1, 2, 3)
    helix_turns_range: tuple = (1.6, 3.0)
    helix_minor_radius_range: tuple = (0.05, 0.09)

    def __post_init__(self):
        for name in ("outer_radius_range", "thickness_range", "tube_half_length_range", "helix_turns_range", "helix_minor_radius_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must be positive and ordered")
        if self.rings_per_end < 1:
            raise ValueError("need at least one ring per end")
        if any(t not in (1, 2, 3) for t in self.helix_types):
            raise ValueError("helix types are 1, 2, or 3")

    def to_json(self):
        return {
            "outer_radius_range": list(self.outer_radius_range),
            "thickness_range": list(self.thickness_range),
            "tube_half_length_range": list(self.tube_half_length_range),
            "rings_per_end": self.rings_per_end,
            "helix_types": list(self.helix_types),
            "helix_turns_range": list(self.helix_turns_range),
            "helix_minor_radius_range": list(self.helix_minor_radius_range),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            outer_radius_range=tuple(doc["outer_radius_range"]),
            thickness_range=tuple(doc["thickness_range"]),
            tube_half_length_range=tuple(doc["tube_half_length_range"]),
            rings_per_end=doc["rings_per_end"],
            helix_types=tuple(doc["helix_types"]),
            helix_turns_range=tuple(doc["helix_turns_range"]),
            helix_minor_radius_range=tuple(doc["helix_minor_radius_range"]),
        )


def gen_mixer(family, seed, shape_id="mixer", has_part_labels=False):
    """One normalized mixer record, deterministic in ``seed``.

    Top and bottom screw sections mirror each other, so the centroid sits
    exactly on the origin and all rings can share one assist latent.
    """
    rng = derive_rng(seed, shape_id, "mixer")
    a = rng.uniform(*family.outer_radius_range)
    t = rng.uniform(*family.thickness_range)
    h = rng.uniform(*family.tube_half_length_range)

    a_s = a * rng.uniform(0.95, 1.10)
    t_s = min(t * rng.uniform(0.9, 1.25), 0.8 * a_s)
    h_s = h * rng.uniform(0.18, 0.30)
    screw_gap = 0.02
    z_screw = h + h_s + screw_gap

    a_r = a_s * rng.uniform(1.12, 1.30)
    t_r = a_r * rng.uniform(0.30, 0.48)
    h_r = rng.uniform(0.035, 0.06)
    ring_gap = 0.02

    geometric = [
        PrimitiveSpec("tube", "geometric", GeomParams("hollow_cylinder", (a, t, h))),
        PrimitiveSpec(
            "screw_top", "geometric", GeomParams("hollow_cylinder", (a_s, t_s, h_s)), Pose(translation=(0, 0, z_screw))
        ),
        PrimitiveSpec(
            "screw_bottom", "geometric", GeomParams("hollow_cylinder", (a_s, t_s, h_s)), Pose(translation=(0, 0, -z_screw))
        ),
    ]
    assisted = []
    for k in range(family.rings_per_end):
        z_ring = h + 2 * h_s + screw_gap + h_r + k * (2 * h_r + ring_gap) + ring_gap
        suffix = "" if family.rings_per_end == 1 else str(k + 1)
        for name, sign in ((f"ring_top{suffix}", 1.0), (f"ring_bottom{suffix}", -1.0)):
            assisted.append(
                PrimitiveSpec(
                    name,
                    "assisted",
                    GeomParams("hollow_cylinder", (a_r, t_r, h_r)),
                    Pose(translation=(0, 0, sign * z_ring)),
                    assist_latent_id="ring",
                )
            )

    helix_type = int(rng.choice(np.asarray(family.helix_types)))
    strands, handedness = {1: (1, 1), 2: (2, 1), 3: (1, -1)}[helix_type]
    turns = rng.uniform(*family.helix_turns_range)
    inner = a - t
    h_hx = h * rng.uniform(0.72, 0.88)
    span = 2 * np.pi * turns
    pitch = 2 * h_hx / span
    # Keep the tube clear of the wall and of its own neighbouring turns.
    rho_cap = min(0.38 * inner, 0.425 * (np.pi * pitch) * (2.0 if strands == 1 else 1.0))
    rho = float(np.clip(rng.uniform(*family.helix_minor_radius_range), 0.02, rho_cap))
    major = inner * rng.uniform(0.55, 0.80)
    major = min(major, 0.93 * inner - rho)
    major = max(major, rho + 0.02)
    helix = HelixSpec(
        major_radius=major,
        minor_radius=rho,
        pitch_per_radian=pitch,
        span=span,
        strands=strands,
        handedness=handedness,
    )

    record = ShapeRecord(
        id=shape_id,
        composite=CompositeSpec(tuple(geometric), tuple(assisted)),
        generic_part=HelixPart(helix),
        has_part_labels=has_part_labels,
    )
    return normalize_record(record)


@dataclass(frozen=True)
class ChairFamilyParams:
    """Toy chairs: four cuboid legs plus a generic seat-and-back body."""

    leg_half_width_range: tuple = (0.035, 0.06)
    leg_length_range: tuple = (0.45, 0.7)
    seat_half_range: tuple = (0.3, 0.38)
    back_height_range: tuple = (0.45, 0.65)

    def to_json(self):
        return {
            "leg_half_width_range": list(self.leg_half_width_range),
            "leg_length_range": list(self.leg_length_range),
            "seat_half_range": list(self.seat_half_range),
            "back_height_range": list(self.back_height_range),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            leg_half_width_range=tuple(doc["leg_half_width_range"]),
            leg_length_range=tuple(doc["leg_length_range"]),
            seat_half_range=tuple(doc["seat_half_range"]),
            back_height_range=tuple(doc["back_height_range"]),
        )


def gen_chair(family, seed, shape_id="chair", has_part_labels=False):
    rng = derive_rng(seed, shape_id, "chair")
    w = rng.uniform(*family.leg_half_width_range)
    length = rng.uniform(*family.leg_length_range)
    seat_half = rng.uniform(*family.seat_half_range)
    seat_thick = rng.uniform(0.03, 0.05)
    back_h = rng.uniform(*family.back_height_range)
    back_thick = rng.uniform(0.025, 0.045)
    spread = seat_half - w - rng.uniform(0.01, 0.04)

    seat_z = 0.0
    legs = []
    for i, (sx, sy) in enumerate(((1, 1), (1, -1), (-1, 1), (-1, -1))):
        legs.append(
            PrimitiveSpec(
                f"leg_{i}",
                "geometric",
                GeomParams("cuboid", (w, w, length / 2)),
                Pose(translation=(sx * spread, sy * spread, seat_z - seat_thick - length / 2)),
            )
        )
    body = BoxUnionPart(
        half_extents=[
            (seat_half, seat_half, seat_thick),
            (seat_half * 0.94, back_thick, back_h / 2),
        ],
        centers=[
            (0.0, 0.0, seat_z),
            (0.0, -(seat_half - back_thick), seat_z + seat_thick + back_h / 2),
        ],
    )
    record = ShapeRecord(
        id=shape_id,
        composite=CompositeSpec(tuple(legs), ()),
        generic_part=body,
        has_part_labels=has_part_labels,
    )
    return normalize_record(record)


FAMILIES = {
    "mixer": (MixerFamilyParams, gen_mixer),
    "chair-toy": (ChairFamilyParams, gen_chair),
}


def generate_record(family_name, family, index, seed, labeled):
    """Build, sample, and fill one record of a family."""
    _, builder = FAMILIES[family_name]
    shape_id = f"{family_name.replace('-', '_')}_{index:04d}"
    record = builder(family, seed=seed, shape_id=shape_id, has_part_labels=labeled)
    return record
