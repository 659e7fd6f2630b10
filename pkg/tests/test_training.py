"""Training loop, reconstruction, and manipulation contracts."""

import numpy as np
import pytest

from partsdf import autodiff as ad
from partsdf.dataset import Dataset
from partsdf.networks import VariantError
from partsdf.training import (
    METRIC_COLUMNS,
    InferConfig,
    ModelBundle,
    TrainConfig,
    TrainingDiverged,
    manipulate_direct,
    manipulate_shared,
    predict_parameters,
    read_metrics_csv,
    reconstruct,
    train,
    write_metrics_csv,
)
from conftest import SMALL_NET


class TestConfigs:
    def test_defaults_match_training_protocol(self):
        cfg = TrainConfig()
        assert cfg.epochs == 2000 and cfg.batch_size == 32 and cfg.samples_per_iteration == 2000
        assert cfg.lr_generic == pytest.approx(5e-4)
        assert cfg.lr_latent == pytest.approx(1e-3)
        assert cfg.lr_encoder == pytest.approx(2e-4)
        assert cfg.lr_latent_decoder == pytest.approx(2e-4)
        assert cfg.lr_shared_latent == pytest.approx(5e-3)
        infer = InferConfig()
        assert infer.iterations == 800 and infer.samples_per_iteration == 8000
        assert infer.lr_latent == pytest.approx(5e-3) and infer.lr_params == pytest.approx(5e-4)

    def test_config_json_roundtrip(self):
        cfg = TrainConfig(epochs=12, disable_assist_loss=True, network=SMALL_NET, dtype="float64")
        back = TrainConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(variant="bogus")
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(dtype="float16")


class TestTraining:
    def test_loss_decreases_on_overfit(self, small_model):
        metrics = small_model["metrics"]
        assert metrics[-1]["total"] < metrics[0]["total"]
        assert metrics[-1]["recon_full"] < metrics[0]["recon_full"]

    def test_metrics_columns(self, small_model, tmp_path):
        assert list(small_model["metrics"][0].keys()) == list(METRIC_COLUMNS)
        path = tmp_path / "m.csv"
        write_metrics_csv(path, small_model["metrics"][:3])
        loaded = read_metrics_csv(path)
        assert loaded[0]["epoch"] == 1
        assert loaded[2]["total"] == pytest.approx(small_model["metrics"][2]["total"])
        header = path.read_text().splitlines()[0]
        assert header == "epoch,recon_full,recon_part,assist,overlap,consistency,latent_reg,total"

    def test_deterministic_given_seed(self, small_dataset, small_train_config):
        cfg = TrainConfig.from_json({**small_train_config.to_json(), "epochs": 5})
        _, m1 = train(small_dataset, cfg)
        _, m2 = train(small_dataset, cfg)
        assert all(m1[i]["total"] == m2[i]["total"] for i in range(len(m1)))

    def test_near_zero_init_latents_contribute_nothing_at_start(self, small_dataset, small_train_config):
        cfg = TrainConfig.from_json({**small_train_config.to_json(), "epochs": 1})
        bundle, metrics = train(small_dataset, cfg)
        # latents start at N(0, 0.01^2), so the weighted epoch-1
        # regularization contribution is negligible against the total
        weighted = metrics[0]["latent_reg"] * cfg.weights.latent_reg_weight
        assert weighted < 1e-3
        assert weighted < 0.01 * metrics[0]["total"]

    def test_checkpoints_written(self, small_dataset, small_train_config, tmp_path):
        cfg = TrainConfig.from_json({**small_train_config.to_json(), "epochs": 4, "checkpoint_every": 2})
        train(small_dataset, cfg, out_dir=tmp_path)
        assert (tmp_path / "checkpoint_00002.npz").exists()
        assert (tmp_path / "checkpoint_00004.npz").exists()
        assert (tmp_path / "model.npz").exists()
        assert (tmp_path / "metrics.csv").exists()

    def test_nan_aborts_with_context(self, small_dataset, small_train_config, tmp_path):
        cfg = TrainConfig.from_json(
            {**small_train_config.to_json(), "epochs": 3, "lr_generic": 1e18, "checkpoint_every": 1}
        )
        with pytest.raises(TrainingDiverged, match=r"epoch \d+, iteration \d+"):
            train(small_dataset, cfg, out_dir=tmp_path)

    def test_empty_dataset_rejected(self, small_dataset_dir, tmp_path):
        import json
        import shutil

        broken = tmp_path / "empty"
        shutil.copytree(small_dataset_dir, broken)
        manifest = json.loads((broken / "manifest.json").read_text())
        for entry in manifest["shapes"]:
            entry["split"] = "test"
        (broken / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ValueError, match="at least one"):
            train(Dataset(broken), TrainConfig(network=SMALL_NET, epochs=1))


class TestBundle:
    def test_save_load_preserves_decoding(self, small_model, tmp_path):
        bundle = small_model["bundle"]
        path = tmp_path / "m.npz"
        bundle.save(path)
        loaded = ModelBundle.load(path)
        sid = bundle.shape_ids[0]
        vec, lat, asst = bundle.stored_shape_state(sid)
        pts = np.random.default_rng(0).uniform(-1, 1, (400, 3))
        a = bundle.evaluator(vec, lat, asst)(pts)
        b = loaded.evaluator(vec, lat, asst)(pts)
        assert np.array_equal(a, b)
        assert loaded.shape_ids == bundle.shape_ids
        assert loaded.param_ranges == bundle.param_ranges

    def test_latent_width_fills_input_budget(self, small_model):
        bundle = small_model["bundle"]
        assert bundle.latent_dim == SMALL_NET.generic_input_budget - bundle.layout.dim

    def test_assist_latent_dim_default(self, small_model):
        bundle = small_model["bundle"]
        assert bundle.stored_assists.shape[-1] == SMALL_NET.assist_latent_dim == 8


class TestReconstruct:
    def test_zero_iterations_returns_encoder_estimates(self, small_model, small_dataset):
        bundle = small_model["bundle"]
        rec = small_dataset.record(small_dataset.ids("test")[0])
        result = reconstruct(bundle, rec.samples, rec.surface_cloud, InferConfig(iterations=0, samples_per_iteration=200))
        vec, assists = predict_parameters(bundle, rec.surface_cloud)
        assert np.allclose(result.params_vector, vec)
        for aid in assists:
            assert np.allclose(result.assists[aid], assists[aid])

    def test_final_loss_not_worse(self, small_model, small_dataset):
        bundle = small_model["bundle"]
        rec = small_dataset.record(small_dataset.ids("test")[0])
        result = reconstruct(bundle, rec.samples, rec.surface_cloud, InferConfig(iterations=60, samples_per_iteration=400, seed=3))
        assert result.final_loss <= result.initial_loss

    def test_network_weights_frozen_bitwise(self, small_model, small_dataset):
        bundle = small_model["bundle"]
        rec = small_dataset.record(small_dataset.ids("test")[0])
        before = {p.name: p.data.copy() for p in bundle.network_parameters()}
        reconstruct(bundle, rec.samples, rec.surface_cloud, InferConfig(iterations=10, samples_per_iteration=200, seed=1))
        for p in bundle.network_parameters():
            assert np.array_equal(before[p.name], p.data), p.name

    def test_training_shape_recovers_stored_quality(self, small_model, small_dataset):
        from partsdf.geometry import clamp_delta

        bundle = small_model["bundle"]
        sid = bundle.shape_ids[0]
        rec = small_dataset.record(sid)
        band = bundle.config.weights.clamp_band
        vec, lat, asst = bundle.stored_shape_state(sid)
        pts = rec.eval_samples.points.astype(np.float64)
        gt = clamp_delta(rec.eval_samples.sdf_full.astype(np.float64), band)
        stored_err = np.mean(np.abs(clamp_delta(bundle.evaluator(vec, lat, asst)(pts), band) - gt))
        result = reconstruct(bundle, rec.samples, rec.surface_cloud, InferConfig(iterations=150, samples_per_iteration=400, seed=2))
        recon_err = np.mean(np.abs(clamp_delta(result.evaluator(bundle)(pts), band) - gt))
        assert recon_err <= stored_err * 2 + 1e-4


class TestManipulateDirect:
    def test_empty_edit_is_identity(self, small_model):
        bundle = small_model["bundle"]
        vec, _, _ = bundle.stored_shape_state(bundle.shape_ids[0])
        assert np.array_equal(manipulate_direct(bundle, vec, {}), vec)

    def test_edit_lands_exactly_in_analytic_stream(self, small_model):
        bundle = small_model["bundle"]
        vec, lat, asst = bundle.stored_shape_state(bundle.shape_ids[0])
        edited = manipulate_direct(
            bundle, vec, {"tube.outer_radius": 0.4, "tube.tx": 0.0, "tube.ty": 0.0, "tube.tz": 0.0}
        )
        col = bundle.layout.column("tube.outer_radius")
        assert edited[col] == 0.4
        # the analytic tube stream uses the value directly: its zero level
        # at z=0 sits exactly at radius 0.4 around the (zeroed) center
        ev = bundle.evaluator(edited, lat, asst)
        pts = np.array([[0.4, 0.0, 0.0]])
        streams = ev.streams(pts)
        assert abs(streams["geometric"][0][0]) < 1e-5  # float32 decode path

    def test_other_primitives_bitwise_unchanged(self, small_model):
        bundle = small_model["bundle"]
        vec, lat, asst = bundle.stored_shape_state(bundle.shape_ids[0])
        edited = manipulate_direct(bundle, vec, {"tube.tz": 0.05})
        pts = np.random.default_rng(1).uniform(-1, 1, (256, 3))
        before = bundle.evaluator(vec, lat, asst).streams(pts)
        after = bundle.evaluator(edited, lat, asst).streams(pts)
        for i, prim in enumerate(bundle.composite_template.geometric):
            if prim.id != "tube":
                assert before["geometric"][i].tobytes() == after["geometric"][i].tobytes()

    def test_unknown_key_and_invalid_values(self, small_model):
        bundle = small_model["bundle"]
        vec, _, _ = bundle.stored_shape_state(bundle.shape_ids[0])
        with pytest.raises(KeyError, match="unknown parameter"):
            manipulate_direct(bundle, vec, {"tube.bogus": 1.0})
        with pytest.raises(ValueError, match="positive"):
            manipulate_direct(bundle, vec, {"tube.outer_radius": -0.1})
        with pytest.raises(ValueError, match="below"):
            manipulate_direct(bundle, vec, {"tube.thickness": 2.0})


class TestSharedVariant:
    def test_training_and_consistency_head_absent(self, small_shared_model):
        bundle = small_shared_model["bundle"]
        assert bundle.variant == "shared"
        assert bundle.generic_decoder.aux_head is None
        assert bundle.point_encoder is None
        metrics = small_shared_model["metrics"]
        assert all(row["consistency"] == 0.0 for row in metrics)
        assert metrics[-1]["recon_full"] < metrics[0]["recon_full"]

    def test_fixed_point_manipulation_drifts_little(self, small_shared_model):
        bundle = small_shared_model["bundle"]
        lv0 = bundle.shared_table.data[0].astype(np.float64)
        decoded, _ = bundle.decode_shared(lv0)
        name = "tube.outer_radius"
        target = {name: float(decoded[bundle.layout.column(name)])}
        lv, after, history = manipulate_shared(bundle, lv0, target, steps=10)
        assert history[0] < 1e-3 + bundle.config.weights.latent_reg_weight * np.sum(lv0**2) + 1e-6
        assert np.abs(after - decoded).max() < 1e-3

    def test_target_reached(self, small_shared_model):
        bundle = small_shared_model["bundle"]
        lv0 = bundle.shared_table.data[0].astype(np.float64)
        decoded, _ = bundle.decode_shared(lv0)
        col = bundle.layout.column("tube.outer_radius")
        target_value = decoded[col] * 1.1
        _, after, history = manipulate_shared(bundle, lv0, {"tube.outer_radius": target_value}, steps=400)
        assert abs(after[col] - target_value) < 0.01
        assert history[-1] < history[0]

    def test_variant_errors(self, small_model, small_shared_model):
        dis = small_model["bundle"]
        vec, lat, asst = dis.stored_shape_state(dis.shape_ids[0])
        with pytest.raises(VariantError):
            manipulate_shared(dis, lat, {"tube.outer_radius": 0.4})
        with pytest.raises(VariantError):
            dis.decode_shared(np.zeros(dis.latent_dim))
        shared = small_shared_model["bundle"]
        with pytest.raises(VariantError):
            predict_parameters(shared, np.zeros((10, 3)))


class TestAblationFlags:
    def test_disabled_terms_report_zero(self, small_dataset, small_train_config):
        cfg = TrainConfig.from_json(
            {
                **small_train_config.to_json(),
                "epochs": 2,
                "disable_assist_loss": True,
                "disable_overlap_loss": True,
                "disable_consistency_loss": True,
                "disable_part_loss": True,
            }
        )
        _, metrics = train(small_dataset, cfg)
        for row in metrics:
            assert row["assist"] == 0.0 and row["overlap"] == 0.0
            assert row["consistency"] == 0.0 and row["recon_part"] == 0.0

    def test_point_encoder_ablation_uses_free_tables(self, small_dataset, small_train_config):
        cfg = TrainConfig.from_json(
            {**small_train_config.to_json(), "epochs": 2, "disable_point_encoder": True}
        )
        bundle, metrics = train(small_dataset, cfg)
        assert bundle.point_encoder is None
        assert bundle.free_raw_params is not None
        assert np.isfinite(metrics[-1]["total"])

    def test_rotation_prediction_path_trains(self, small_dataset, small_train_config):
        doc = small_train_config.to_json()
        doc["epochs"] = 2
        doc["network"]["predict_rotation"] = True
        doc["network"]["generic_input_budget"] = 72  # rotation adds 3 columns per primitive
        doc["network"]["generic_hidden"] = 96
        bundle, metrics = train(small_dataset, TrainConfig.from_json(doc))
        assert bundle.layout.predict_rotation
        assert any(f.name == "rx" for f in bundle.layout.fields)
        assert np.isfinite(metrics[-1]["total"])
