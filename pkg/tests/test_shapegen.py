"""Shape families: determinism, normalization, sampling, noise."""

import numpy as np
import pytest

from partsdf import shapegen as sg
from partsdf.helix import HelixSpec, helix_sdf


@pytest.fixture(scope="module")
def mixer():
    return sg.gen_mixer(sg.MixerFamilyParams(), seed=7, shape_id="m0", has_part_labels=True)


class TestGeneration:
    def test_same_seed_identical(self, mixer):
        again = sg.gen_mixer(sg.MixerFamilyParams(), seed=7, shape_id="m0", has_part_labels=True)
        assert again.composite.to_json() == mixer.composite.to_json()
        assert again.generic_part.to_json() == mixer.generic_part.to_json()

    def test_different_seeds_differ(self, mixer):
        other = sg.gen_mixer(sg.MixerFamilyParams(), seed=8, shape_id="m0")
        assert other.composite.to_json() != mixer.composite.to_json()

    def test_assisted_anchor_shares_params_and_pose(self, mixer):
        for prim in mixer.composite.assisted:
            assert prim.assist_latent_id == "ring"
            # the anchoring geometry IS this spec: params/pose reused verbatim
            assert prim.params.kind == "hollow_cylinder"

    def test_symmetric_screws(self, mixer):
        top = mixer.composite.primitive("screw_top")
        bottom = mixer.composite.primitive("screw_bottom")
        assert top.params.values == bottom.params.values
        assert top.pose.translation[2] == pytest.approx(-bottom.pose.translation[2])

    def test_family_validation(self):
        with pytest.raises(ValueError):
            sg.MixerFamilyParams(outer_radius_range=(0.4, 0.3))
        with pytest.raises(ValueError):
            sg.MixerFamilyParams(rings_per_end=0)
        with pytest.raises(ValueError):
            sg.MixerFamilyParams(helix_types=(4,))


class TestNormalization:
    def test_max_surface_norm_is_pinned(self, mixer):
        # the normalization itself is exact (analytic extreme = 1/1.03);
        # a finite sample gets close from below
        analytic = max(
            [sg.primitive_max_norm(p) for p in mixer.composite.all_primitives()]
            + [mixer.generic_part.max_point_norm()]
        )
        assert analytic == pytest.approx(1 / 1.03, abs=1e-6)
        cloud = sg.sample_surface_points(mixer, 4000, seed=1)
        sampled = np.linalg.norm(cloud, axis=1).max()
        assert sampled <= analytic + 1e-9
        assert sampled == pytest.approx(1 / 1.03, abs=5e-3)

    def test_idempotent(self, mixer):
        again = sg.normalize_record(mixer)
        for p1, p2 in zip(mixer.composite.all_primitives(), again.composite.all_primitives()):
            assert np.allclose(p1.params.values, p2.params.values, atol=1e-12)
            assert np.allclose(p1.pose.translation, p2.pose.translation, atol=1e-12)

    def test_scale_invariance(self, mixer):
        scaled = sg._transform_record(mixer, np.zeros(3), 2.0)
        renorm = sg.normalize_record(scaled)
        for p1, p2 in zip(mixer.composite.all_primitives(), renorm.composite.all_primitives()):
            assert np.allclose(p1.params.values, p2.params.values, atol=1e-9)

    def test_samples_rescale_with_geometry(self, mixer):
        pts = np.random.default_rng(0).uniform(-0.8, 0.8, (100, 3))
        record = sg.ShapeRecord(
            id=mixer.id,
            composite=mixer.composite,
            generic_part=mixer.generic_part,
            has_part_labels=False,
            samples=sg.SampleSet(points=pts, sdf_full=mixer.full_sdf(pts)),
        )
        scaled = sg._transform_record(record, np.array([0.01, 0.0, -0.02]), 1.7)
        recomputed = scaled.full_sdf(scaled.samples.points)
        assert np.abs(scaled.samples.sdf_full - recomputed).max() < 1e-9

    def test_degenerate_rejected(self, mixer):
        class NoSurface:
            def surface_area(self):
                return 0.0

            def centroid(self):
                return np.zeros(3)

        broken = sg.ShapeRecord(
            id="broken",
            composite=sg.CompositeSpec(geometric=(), assisted=()),
            generic_part=NoSurface(),
            has_part_labels=False,
        )
        with pytest.raises(Exception, match="degenerate"):
            sg.normalize_record(broken)


class TestSurfaceSampling:
    def test_points_lie_on_surface(self, mixer):
        cloud = sg.sample_surface_points(mixer, 5000, seed=2)
        assert np.abs(mixer.full_sdf(cloud)).max() < 1e-4

    def test_single_point(self, mixer):
        assert sg.sample_surface_points(mixer, 1, seed=3).shape == (1, 3)

    def test_area_weighted_within_3x(self, mixer):
        cloud = sg.sample_surface_points(mixer, 12_000, seed=4)
        sources = [("__generic__", mixer.generic_part.surface_area())] + [
            (p.id, sg.primitive_surface_area(p)) for p in mixer.composite.all_primitives()
        ]
        total = sum(a for _, a in sources)
        # nearest-part attribution via per-part SDF magnitude
        dists = np.stack(
            [np.abs(mixer.generic_part.sdf(cloud))]
            + [np.abs(sg.evaluate_primitive(p, cloud)) for p in mixer.composite.all_primitives()]
        )
        owner = np.argmin(dists, axis=0)
        for idx, (part_id, area) in enumerate(sources):
            frac = (owner == idx).mean()
            expected = area / total
            assert expected / 3.2 < frac < expected * 3.2, (part_id, frac, expected)

    def test_deterministic(self, mixer):
        a = sg.sample_surface_points(mixer, 500, seed=9)
        b = sg.sample_surface_points(mixer, 500, seed=9)
        assert a.tobytes() == b.tobytes()


class TestSdfSampling:
    def test_labels_match_analytic_composite_bitwise(self, mixer):
        ss = sg.sample_sdf(mixer, 2000, seed=5)
        assert ss.sdf_full.tobytes() == mixer.full_sdf(ss.points).tobytes()
        for pid, vals in ss.part_sdfs.items():
            assert vals.tobytes() == mixer.part_sdf(pid, ss.points).tobytes()

    def test_mostly_near_surface(self, mixer):
        ss = sg.sample_sdf(mixer, 20_000, seed=6)
        assert (np.abs(ss.sdf_full) < 0.2).mean() >= 0.9

    def test_union_property(self, mixer):
        ss = sg.sample_sdf(mixer, 3000, seed=7)
        stacked = np.stack(list(ss.part_sdfs.values()) + [mixer.generic_part.sdf(ss.points)])
        assert np.all(ss.sdf_full <= stacked.min(axis=0) + 1e-12)
        assert np.allclose(ss.sdf_full, stacked.min(axis=0))

    def test_deterministic(self, mixer):
        a = sg.sample_sdf(mixer, 1000, seed=8)
        b = sg.sample_sdf(mixer, 1000, seed=8)
        assert a.points.tobytes() == b.points.tobytes()

    def test_unlabeled_records_carry_no_part_channels(self):
        rec = sg.gen_mixer(sg.MixerFamilyParams(), seed=3, shape_id="u0", has_part_labels=False)
        ss = sg.sample_sdf(rec, 500, seed=1)
        assert ss.part_sdfs == {}


class TestLabelNoise:
    def test_identity_cases(self, mixer):
        ss = sg.sample_sdf(mixer, 1000, seed=10)
        same = sg.inject_label_noise(ss, 0.0, 0.5, seed=1)
        for pid in ss.part_sdfs:
            assert np.array_equal(same.part_sdfs[pid], ss.part_sdfs[pid])
        zero_mag = sg.inject_label_noise(ss, 1.0, 0.0, seed=1)
        for pid in ss.part_sdfs:
            assert np.allclose(zero_mag.part_sdfs[pid], ss.part_sdfs[pid])

    def test_exact_fraction_perturbed(self, mixer):
        ss = sg.sample_sdf(mixer, 1000, seed=11)
        noisy = sg.inject_label_noise(ss, 0.2, 0.05, seed=2)
        for pid in ss.part_sdfs:
            assert (noisy.part_sdfs[pid] != ss.part_sdfs[pid]).sum() == 200
        assert np.array_equal(noisy.sdf_full, ss.sdf_full)


class TestHelixOracle:
    def test_sdf_matches_brute_force(self):
        hx = HelixSpec(major_radius=0.24, minor_radius=0.055, pitch_per_radian=0.06,
                       span=2 * np.pi * 2.2, strands=2, handedness=1)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.55, 0.55, (500, 3))
        ours = helix_sdf(hx, pts)
        ts = np.linspace(0, hx.span, 1_000_000 // hx.strands)
        best = np.full(len(pts), np.inf)
        for phase in hx.strand_phases():
            c, s = np.cos(phase), np.sin(phase)
            rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
            curve = hx.curve_points(ts) @ rot.T
            for start in range(0, len(ts), 50_000):
                block = curve[start : start + 50_000]
                d2 = ((pts[:, None, :] - block[None, :, :]) ** 2).sum(-1)
                best = np.minimum(best, d2.min(axis=1))
        brute = np.sqrt(best) - hx.minor_radius
        assert np.abs(ours - brute).max() < 1e-3

    def test_handedness_mirrors_geometry(self):
        right = HelixSpec(0.25, 0.05, 0.06, 2 * np.pi * 2, strands=1, handedness=1)
        left = HelixSpec(0.25, 0.05, 0.06, 2 * np.pi * 2, strands=1, handedness=-1)
        pts = np.random.default_rng(1).uniform(-0.5, 0.5, (200, 3))
        mirrored = pts.copy()
        mirrored[:, 1] *= -1
        assert np.allclose(helix_sdf(right, pts), helix_sdf(left, mirrored), atol=1e-9)

    def test_helix_types_distinct(self):
        fam = sg.MixerFamilyParams(helix_types=(1,))
        fam2 = sg.MixerFamilyParams(helix_types=(2,))
        r1 = sg.gen_mixer(fam, seed=4, shape_id="x")
        r2 = sg.gen_mixer(fam2, seed=4, shape_id="x")
        assert r1.generic_part.spec.strands == 1
        assert r2.generic_part.spec.strands == 2


class TestChairFamily:
    def test_chair_surface_and_composition(self):
        chair = sg.gen_chair(sg.ChairFamilyParams(), seed=2, shape_id="c0")
        assert chair.composite.n_geometric == 4 and chair.composite.n_assisted == 0
        cloud = sg.sample_surface_points(chair, 2000, seed=1)
        assert np.abs(chair.full_sdf(cloud)).max() < 1e-4
        assert np.linalg.norm(cloud, axis=1).max() <= 1 / 1.03 + 1e-9
