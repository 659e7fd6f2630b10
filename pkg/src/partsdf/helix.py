"""Helical tube: the analytic stand-in for the learned generic part.

The solid is the set of points within ``minor_radius`` of one or more
helical center curves (circular sweep with spherical end caps), so its
exact SDF is the distance to the curve family minus the minor radius.
The closest curve point is found by a dense parameter scan followed by a
vectorized ternary refinement, which is accurate to machine precision
for practical purposes and fast enough to label tens of thousands of
query points per shape.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_COARSE_STEP = 0.05  # radians; well below the ~2*pi spacing of local minima
_REFINE_ITERS = 60


@dataclass(frozen=True)
class HelixSpec:
    """Multi-strand helical tube around the z axis.

    The canonical strand is ``(R cos t, R sin t, c (t - span/2))`` for
    ``t`` in [0, span]; additional strands are phase rotations of it and
    ``handedness=-1`` mirrors the winding direction. ``center`` offsets
    the whole part in world space.
    """

    major_radius: float
    minor_radius: float
    pitch_per_radian: float
    span: float
    strands: int = 1
    handedness: int = 1
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.major_radius <= 0 or self.minor_radius <= 0 or self.span <= 0:
            raise ValueError("helix sizes must be positive")
        if self.minor_radius >= self.major_radius:
            raise ValueError("helix tube must be thinner than its major radius")
        if self.strands not in (1, 2):
            raise ValueError("only 1 or 2 strands supported")
        if self.handedness not in (-1, 1):
            raise ValueError("handedness is +1 or -1")

    @property
    def turns(self):
        return self.span / (2.0 * np.pi)

    @property
    def half_height(self):
        return 0.5 * self.pitch_per_radian * self.span

    @property
    def arc_length(self):
        return np.hypot(self.major_radius, self.pitch_per_radian) * self.span

    def strand_phases(self):
        return [2.0 * np.pi * j / self.strands for j in range(self.strands)]

    def curve_points(self, ts):
        """Canonical-strand curve points at parameters ``ts``."""
        ts = np.asarray(ts, dtype=np.float64)
        return np.stack(
            [
                self.major_radius * np.cos(ts),
                self.major_radius * np.sin(ts),
                self.pitch_per_radian * (ts - 0.5 * self.span),
            ],
            axis=-1,
        )

    def transformed(self, shift, scale):
        """Apply ``x -> (x - shift) * scale`` to the solid."""
        center = (np.asarray(self.center) - np.asarray(shift)) * scale
        return replace(
            self,
            major_radius=self.major_radius * scale,
            minor_radius=self.minor_radius * scale,
            pitch_per_radian=self.pitch_per_radian * scale,
            center=tuple(center),
        )

    def max_point_norm(self):
        """Largest ||x|| over the solid: the curve-norm maximum (attained
        at an endpoint) plus the tube radius, offset by the center."""
        ends = self.curve_points([0.0, self.span]) + np.asarray(self.center)
        return float(np.max(np.linalg.norm(ends, axis=1)) + self.minor_radius)

    def surface_area(self):
        """Exact tube area: the (1 - rho*kappa*cos phi) factor integrates
        to 2*pi over each cross-section, so curvature drops out."""
        lateral = 2.0 * np.pi * self.minor_radius * self.arc_length
        caps = 4.0 * np.pi * self.minor_radius**2
        return self.strands * (lateral + caps)

    def surface_centroid(self):
        """Area-weighted surface centroid (curve centroid is exact for the
        lateral part; cap asymmetry is folded in via the cap centers)."""
        span = self.span
        mean_canon = np.array(
            [
                self.major_radius * np.sin(span) / span,
                self.major_radius * (1.0 - np.cos(span)) / span,
                0.0,
            ]
        )
        lateral = 2.0 * np.pi * self.minor_radius * self.arc_length
        caps_area = 4.0 * np.pi * self.minor_radius**2
        cap_centers = self.curve_points([0.0, span])
        total = np.zeros(3)
        for phase in self.strand_phases():
            rot = _rot_z(phase)
            total += lateral * (rot @ _mirror(mean_canon, self.handedness))
            total += 0.5 * caps_area * (rot @ _mirror(cap_centers[0], self.handedness))
            total += 0.5 * caps_area * (rot @ _mirror(cap_centers[1], self.handedness))
        total /= self.strands * (lateral + caps_area)
        return total + np.asarray(self.center)

    def to_json(self):
        return {
            "type": "helix",
            "major_radius": self.major_radius,
            "minor_radius": self.minor_radius,
            "pitch_per_radian": self.pitch_per_radian,
            "span": self.span,
            "strands": self.strands,
            "handedness": self.handedness,
            "center": list(self.center),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            major_radius=doc["major_radius"],
            minor_radius=doc["minor_radius"],
            pitch_per_radian=doc["pitch_per_radian"],
            span=doc["span"],
            strands=doc["strands"],
            handedness=doc["handedness"],
            center=tuple(doc["center"]),
        )


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _mirror(points, handedness):
    if handedness == 1:
        return points
    out = np.array(points, dtype=np.float64, copy=True)
    out[..., 1] *= -1.0
    return out


def _canonical_curve_distance(helix, points, chunk=8192):
    """Distance from each point to the canonical strand's center curve."""
    span = helix.span
    m = max(64, int(np.ceil(span / _COARSE_STEP)) + 1)
    ts = np.linspace(0.0, span, m)
    curve = helix.curve_points(ts)
    curve_sq = np.einsum("ij,ij->i", curve, curve)
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], chunk):
        pts = points[start : start + chunk]
        dots = pts @ curve.T
        d2 = np.sum(pts * pts, axis=1)[:, None] + curve_sq[None, :] - 2.0 * dots
        best = np.argmin(d2, axis=1)
        lo = ts[np.maximum(best - 1, 0)]
        hi = ts[np.minimum(best + 1, m - 1)]

        def f(t, pts=pts):
            c = helix.curve_points(t)
            d = pts - c
            return np.einsum("ij,ij->i", d, d)

        for _ in range(_REFINE_ITERS):
            third = (hi - lo) / 3.0
            m1 = lo + third
            m2 = hi - third
            keep_lo = f(m1) <= f(m2)
            hi = np.where(keep_lo, m2, hi)
            lo = np.where(keep_lo, lo, m1)
        out[start : start + chunk] = np.sqrt(f(0.5 * (lo + hi)))
    return out


def helix_sdf(helix, points):
    """Exact SDF of the helical tube at (N, 3) query points."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    local = points - np.asarray(helix.center)
    dist = np.full(points.shape[0], np.inf)
    for phase in helix.strand_phases():
        q = _mirror(local @ _rot_z(phase), helix.handedness)
        dist = np.minimum(dist, _canonical_curve_distance(helix, q))
    return dist - helix.minor_radius


def sample_helix_surface(helix, n, rng):
    """Uniform-area samples on the tube surface (lateral + end caps)."""
    rho = helix.minor_radius
    kappa_rho = rho * helix.major_radius / (helix.major_radius**2 + helix.pitch_per_radian**2)
    lateral = 2.0 * np.pi * rho * helix.arc_length
    caps = 4.0 * np.pi * rho**2
    n_caps = rng.binomial(n, caps / (lateral + caps))
    n_lat = n - n_caps

    # Lateral: t uniform (constant speed curve), phi by rejection against
    # the area density (1 - rho*kappa*cos phi).
    ts = np.empty(0)
    phis = np.empty(0)
    while ts.size < n_lat:
        need = (n_lat - ts.size) * 2 + 16
        t = rng.uniform(0.0, helix.span, need)
        phi = rng.uniform(0.0, 2.0 * np.pi, need)
        accept = rng.uniform(0.0, 1.0 + kappa_rho, need) <= (1.0 - kappa_rho * np.cos(phi))
        ts = np.concatenate([ts, t[accept]])
        phis = np.concatenate([phis, phi[accept]])
    ts, phis = ts[:n_lat], phis[:n_lat]

    speed = np.hypot(helix.major_radius, helix.pitch_per_radian)
    normal = np.stack([-np.cos(ts), -np.sin(ts), np.zeros_like(ts)], axis=1)
    binorm = (
        np.stack(
            [
                helix.pitch_per_radian * np.sin(ts),
                -helix.pitch_per_radian * np.cos(ts),
                np.full_like(ts, helix.major_radius),
            ],
            axis=1,
        )
        / speed
    )
    pts = helix.curve_points(ts) + rho * (
        normal * np.cos(phis)[:, None] + binorm * np.sin(phis)[:, None]
    )

    # Caps: hemispheres facing away from the curve at both ends.
    if n_caps:
        which_end = rng.integers(0, 2, n_caps)
        dirs = rng.normal(size=(n_caps, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ends = helix.curve_points([0.0, helix.span])
        tangents = np.stack(
            [
                np.array([-helix.major_radius * np.sin(t), helix.major_radius * np.cos(t), helix.pitch_per_radian]) / speed
                for t in (0.0, helix.span)
            ]
        )
        outward = np.where(which_end[:, None] == 0, -tangents[0], tangents[1])
        flip = np.sum(dirs * outward, axis=1) < 0
        dirs[flip] *= -1.0
        cap_pts = ends[which_end] + rho * dirs
        pts = np.concatenate([pts, cap_pts], axis=0)

    # Scatter samples across strands, then place in world space.
    strand = rng.integers(0, helix.strands, pts.shape[0])
    out = np.empty_like(pts)
    for j, phase in enumerate(helix.strand_phases()):
        mask = strand == j
        out[mask] = _mirror(pts[mask], helix.handedness) @ _rot_z(phase).T
    perm = rng.permutation(out.shape[0])
    return out[perm] + np.asarray(helix.center)
