"""Analytic primitive SDFs against brute-force oracles and by hand."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partsdf import geometry as geo

RNG = np.random.default_rng(20240811)


# --- independent oracles: dense surface lattices + membership tests,
# written from the parameterizations, never from the SDF formulas ---


def fibonacci_sphere(r, n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + np.sqrt(5)) * i
    return r * np.stack([np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=1)


def _lateral_lattice(radius, h, spacing):
    n_ang = max(8, int(np.ceil(2 * np.pi * radius / spacing)))
    n_z = max(2, int(np.ceil(2 * h / spacing)) + 1)
    ang = np.linspace(0, 2 * np.pi, n_ang, endpoint=False)
    z = np.linspace(-h, h, n_z)
    aa, zz = np.meshgrid(ang, z)
    return np.stack([radius * np.cos(aa).ravel(), radius * np.sin(aa).ravel(), zz.ravel()], axis=1)


def _annulus_lattice(r_in, r_out, z, spacing):
    radii = np.linspace(r_in, r_out, max(2, int(np.ceil((r_out - r_in) / spacing)) + 1))
    pts = []
    for radius in radii:
        count = max(8, int(np.ceil(2 * np.pi * radius / spacing)))
        ang = np.linspace(0, 2 * np.pi, count, endpoint=False)
        pts.append(np.stack([radius * np.cos(ang), radius * np.sin(ang), np.full(count, z)], axis=1))
    return np.concatenate(pts)


def _face_grid(b, axis, sign, spacing):
    u, v = [i for i in range(3) if i != axis]
    uu, vv = np.meshgrid(
        np.linspace(-b[u], b[u], max(2, int(np.ceil(2 * b[u] / spacing)) + 1)),
        np.linspace(-b[v], b[v], max(2, int(np.ceil(2 * b[v] / spacing)) + 1)),
    )
    pts = np.empty((uu.size, 3))
    pts[:, axis] = sign * b[axis]
    pts[:, u] = uu.ravel()
    pts[:, v] = vv.ravel()
    return pts


def lattice_sphere(values, n):
    return fibonacci_sphere(values[0], n)


def lattice_cylinder(values, n):
    r, h = values
    area = 4 * np.pi * r * h + 2 * np.pi * r**2
    s = np.sqrt(area / n)
    return np.concatenate(
        [_lateral_lattice(r, h, s), _annulus_lattice(s / 2, r, h, s), _annulus_lattice(s / 2, r, -h, s)]
    )


def lattice_hollow(values, n):
    a, t, h = values
    inner = a - t
    area = 4 * np.pi * (a + inner) * h + 2 * np.pi * (a**2 - inner**2)
    s = np.sqrt(area / n)
    return np.concatenate(
        [
            _lateral_lattice(a, h, s),
            _lateral_lattice(inner, h, s),
            _annulus_lattice(inner, a, h, s),
            _annulus_lattice(inner, a, -h, s),
        ]
    )


def lattice_cuboid(values, n):
    b = np.asarray(values)
    area = 8 * (b[0] * b[1] + b[1] * b[2] + b[0] * b[2])
    s = np.sqrt(area / n)
    return np.concatenate(
        [_face_grid(b, axis, sign, s) for axis in range(3) for sign in (1, -1)]
    )


def inside_sphere(p, values):
    return np.linalg.norm(p, axis=1) < values[0]


def inside_cylinder(p, values):
    r, h = values
    return (np.hypot(p[:, 0], p[:, 1]) < r) & (np.abs(p[:, 2]) < h)


def inside_hollow(p, values):
    a, t, h = values
    rad = np.hypot(p[:, 0], p[:, 1])
    return (rad < a) & (rad > a - t) & (np.abs(p[:, 2]) < h)


def inside_cuboid(p, values):
    return np.all(np.abs(p) < np.asarray(values), axis=1)


ORACLE_CASES = [
    ("sphere", (0.5,), lattice_sphere, inside_sphere),
    ("cylinder", (0.35, 0.5), lattice_cylinder, inside_cylinder),
    ("hollow_cylinder", (0.35, 0.09, 0.35), lattice_hollow, inside_hollow),
    ("cuboid", (0.25, 0.35, 0.5), lattice_cuboid, inside_cuboid),
]


def brute_force_distance(queries, surface, chunk=20_000):
    best = np.full(len(queries), np.inf)
    for start in range(0, len(surface), chunk):
        block = surface[start : start + chunk]
        d2 = ((queries[:, None, :] - block[None, :, :]) ** 2).sum(-1)
        best = np.minimum(best, d2.min(axis=1))
    return np.sqrt(best)


@pytest.mark.parametrize("kind,values,lattice_fn,inside_fn", ORACLE_CASES, ids=[c[0] for c in ORACLE_CASES])
def test_sdf_matches_brute_force_distance_and_sign(kind, values, lattice_fn, inside_fn):
    import zlib

    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    params = geo.GeomParams(kind, values)
    surface = lattice_fn(values, 100_000)
    assert len(surface) >= 90_000  # genuinely dense
    queries = rng.uniform(-1, 1, (6000, 3))
    queries = queries[np.linalg.norm(queries, axis=1) <= 1.0]
    sdf = geo.primitive_sdf(params, queries)
    brute = brute_force_distance(queries, surface)
    # Sign agreement everywhere (membership test is the oracle).
    inside = inside_fn(queries, values)
    on_surface = np.abs(sdf) < 1e-9
    assert np.array_equal(np.sign(sdf[~on_surface]), np.where(inside[~on_surface], -1.0, 1.0))
    # Magnitude agreement where the sampled oracle is itself trustworthy:
    # its error is ~cover_radius^2 / (2 distance), so stay off the surface.
    far = brute >= 0.15
    assert far.sum() >= 1000
    far_idx = np.flatnonzero(far)[:1000]
    assert np.abs(np.abs(sdf[far_idx]) - brute[far_idx]).max() < 1e-4
    # Near field: lattice points themselves must sit on the zero level.
    near_check = surface[:: max(1, len(surface) // 2000)]
    assert np.abs(geo.primitive_sdf(params, near_check)).max() < 1e-9


@pytest.mark.parametrize("kind,values", [(c[0], c[1]) for c in ORACLE_CASES], ids=[c[0] for c in ORACLE_CASES])
def test_sdf_gradient_has_unit_norm_off_surface(kind, values):
    # eikonal property of exact distances, via central differences
    rng = np.random.default_rng(7)
    params = geo.GeomParams(kind, values)
    pts = rng.uniform(-0.9, 0.9, (400, 3))
    step = 1e-5
    vals = geo.primitive_sdf(params, pts)
    keep = np.abs(vals) > 10 * step
    grads = np.zeros((keep.sum(), 3))
    kept = pts[keep]
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = step
        grads[:, axis] = (geo.primitive_sdf(params, kept + offset) - geo.primitive_sdf(params, kept - offset)) / (2 * step)
    norms = np.linalg.norm(grads, axis=1)
    # away from medial-axis kinks the gradient must be unit-length
    assert np.median(np.abs(norms - 1.0)) < 1e-6
    assert (np.abs(norms - 1.0) < 1e-3).mean() > 0.97


class TestSpecExamples:
    def test_sphere(self):
        p = geo.GeomParams("sphere", (1.0,))
        assert geo.primitive_sdf(p, np.zeros(3)) == pytest.approx(-1.0)
        assert geo.primitive_sdf(p, np.array([2.0, 0, 0])) == pytest.approx(1.0)
        half = geo.GeomParams("sphere", (0.5,))
        assert geo.primitive_sdf(half, np.array([0.6, 0.8, 0])) == pytest.approx(0.5)

    def test_cylinder(self):
        c = geo.GeomParams("cylinder", (0.5, 1.0))
        assert geo.primitive_sdf(c, np.zeros(3)) == pytest.approx(-0.5)
        assert geo.primitive_sdf(c, np.array([1.5, 0, 0])) == pytest.approx(1.0)
        assert geo.primitive_sdf(c, np.array([3.5, 0, 5.0])) == pytest.approx(5.0)

    def test_hollow_cylinder(self):
        h = geo.GeomParams("hollow_cylinder", (0.5, 0.1, 1.0))
        assert geo.primitive_sdf(h, np.array([0.45, 0, 0])) == pytest.approx(-0.05)
        assert abs(geo.primitive_sdf(h, np.array([0.5, 0, 0]))) < 1e-12
        assert geo.primitive_sdf(h, np.zeros(3)) == pytest.approx(0.40)

    def test_cuboid(self):
        b = geo.GeomParams("cuboid", (1.0, 1.0, 1.0))
        assert geo.primitive_sdf(b, np.zeros(3)) == pytest.approx(-1.0)
        assert geo.primitive_sdf(b, np.array([2.0, 0, 0])) == pytest.approx(1.0)
        assert geo.primitive_sdf(b, np.array([2.0, 2.0, 0])) == pytest.approx(np.sqrt(2))

    def test_transform_point(self):
        p = np.array([1.0, 0.0, 0.0])
        identity = geo.Pose()
        out = geo.transform_point(p, identity)
        assert out.tobytes() == p.tobytes()  # bitwise
        shifted = geo.transform_point(p, geo.Pose(translation=(1, 0, 0)))
        assert np.allclose(shifted, [0, 0, 0])
        rotated = geo.transform_point(p, geo.Pose(rotation=(0, 0, np.pi / 2)))
        assert np.allclose(rotated, [0, -1, 0], atol=1e-12)

    def test_clamp_delta(self):
        assert geo.clamp_delta(0.5, 0.1) == pytest.approx(0.1)
        assert geo.clamp_delta(-0.5, 0.1) == pytest.approx(-0.1)
        assert geo.clamp_delta(0.03, 0.1) == pytest.approx(0.03)

    def test_union_min(self):
        assert geo.union_min([0.2, -0.1, 0.5]) == pytest.approx(-0.1)
        assert geo.union_min([0.7]) == pytest.approx(0.7)
        assert geo.union_min_index([-0.3, -0.3]) == (-0.3, 0)
        with pytest.raises(geo.CompositeError):
            geo.union_min([])

    def test_overlap_theta(self):
        assert geo.overlap_theta(0.1, -0.2) == 0.0
        assert geo.overlap_theta(-0.3, -0.2) == pytest.approx(0.2)
        assert geo.overlap_theta(-0.5, -0.5) == pytest.approx(0.5)

    def test_composite_sdf(self):
        spec = _demo_composite()
        assert geo.composite_sdf(spec, -0.1, [0.3], [0.2]) == pytest.approx(-0.1)
        assert geo.composite_sdf(spec, 0.5, [0.1, -0.2][:1], [-0.2]) == pytest.approx(-0.2)
        empty = geo.CompositeSpec(geometric=(), assisted=())
        assert geo.composite_sdf(empty, 0.37, [], []) == pytest.approx(0.37)
        with pytest.raises(geo.CompositeError):
            geo.composite_sdf(spec, 0.0, [0.1, 0.2], [0.3])


def _demo_composite():
    return geo.CompositeSpec(
        geometric=(
            geo.PrimitiveSpec("tube", "geometric", geo.GeomParams("hollow_cylinder", (0.4, 0.1, 0.5))),
        ),
        assisted=(
            geo.PrimitiveSpec(
                "ring",
                "assisted",
                geo.GeomParams("hollow_cylinder", (0.45, 0.12, 0.06)),
                geo.Pose(translation=(0, 0, 0.7)),
                assist_latent_id="ring",
            ),
        ),
    )


class TestPoseAlgebra:
    @pytest.mark.parametrize("seed", range(5))
    def test_inverse_composition_is_identity(self, seed):
        rng = np.random.default_rng(seed)
        axis = rng.normal(size=3)
        axis *= rng.uniform(0.1, np.pi * 0.99) / np.linalg.norm(axis)
        pose = geo.Pose(tuple(axis), tuple(rng.normal(size=3)))
        pts = rng.normal(size=(20, 3))
        back = geo.transform_point(geo.transform_point(pts, pose), pose.inverse())
        assert np.abs(back - pts).max() < 1e-12

    def test_rotation_angle_capped_at_pi(self):
        with pytest.raises(geo.CompositeError):
            geo.Pose(rotation=(4.0, 0.0, 0.0))

    def test_rotate_inverse_columns_matches_matrix(self):
        rng = np.random.default_rng(3)
        rot = rng.normal(size=3)
        rot *= 1.2 / np.linalg.norm(rot)
        pts = rng.normal(size=(50, 3))
        expected = pts @ geo.rotation_matrix(rot)
        x, y, z = geo.rotate_inverse_columns(rot[0], rot[1], rot[2], pts[:, 0], pts[:, 1], pts[:, 2])
        assert np.abs(np.stack([x, y, z], axis=1) - expected).max() < 1e-9


class TestProperties:
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.permutations(range(12)))
    @settings(max_examples=60, deadline=None)
    def test_union_min_order_invariant(self, values, perm):
        perm = [p for p in perm if p < len(values)]
        shuffled = [values[p] for p in perm] or values
        assert geo.union_min(values) <= min(values) + 1e-12
        assert geo.union_min(values) == pytest.approx(geo.union_min(sorted(values)))
        assert geo.union_min(shuffled + values) == pytest.approx(geo.union_min(values))

    @given(st.floats(-5, 5), st.floats(-5, 5))
    @settings(max_examples=100, deadline=None)
    def test_overlap_theta_symmetric_and_gated(self, a, b):
        assert geo.overlap_theta(a, b) == geo.overlap_theta(b, a)
        if a >= 0 or b >= 0:
            assert geo.overlap_theta(a, b) == 0.0
        assert geo.overlap_theta(a, b) >= 0.0

    @given(st.floats(-5, 5), st.floats(0.01, 2.0))
    @settings(max_examples=100, deadline=None)
    def test_clamp_idempotent(self, x, band):
        once = geo.clamp_delta(x, band)
        assert geo.clamp_delta(once, band) == once
        assert -band <= once <= band

    def test_composite_below_every_stream(self):
        spec = _demo_composite()
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (200, 3))
        full = geo.composite_analytic_sdf(spec, pts)
        for prim in spec.all_primitives():
            assert np.all(full <= geo.evaluate_primitive(prim, pts) + 1e-12)


class TestSerialization:
    def test_composite_json_roundtrip_field_names(self):
        spec = _demo_composite()
        doc = spec.to_json()
        entry = doc["primitives"][0]
        assert set(entry) == {"id", "role", "kind", "params", "rotation", "translation", "assist_latent_id"}
        back = geo.CompositeSpec.from_json(doc)
        assert back.to_json() == doc

    def test_invariants_enforced(self):
        with pytest.raises(geo.CompositeError):
            geo.GeomParams("hollow_cylinder", (0.3, 0.4, 0.5))  # thickness >= radius
        with pytest.raises(geo.CompositeError):
            geo.GeomParams("sphere", (-1.0,))
        with pytest.raises(geo.CompositeError):
            geo.PrimitiveSpec("x", "assisted", geo.GeomParams("sphere", (1.0,)))  # no latent id
        with pytest.raises(geo.CompositeError):
            geo.CompositeSpec(
                geometric=(
                    geo.PrimitiveSpec("dup", "geometric", geo.GeomParams("sphere", (1.0,))),
                    geo.PrimitiveSpec("dup", "geometric", geo.GeomParams("sphere", (2.0,))),
                ),
                assisted=(),
            )
