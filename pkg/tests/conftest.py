"""Shared fixtures: finite-difference oracle, a small dataset, and a
small trained model reused across CLI/service/training tests."""

from __future__ import annotations

import numpy as np
import pytest

from partsdf.dataset import Dataset, build_dataset
from partsdf.networks import NetworkConfig
from partsdf.training import TrainConfig, train


def finite_difference_check(fn, params, eps=1e-6):
    """Max relative error between backprop gradients of the scalar
    ``fn()`` and central finite differences over every entry of
    ``params``. The closure must rebuild the graph on each call."""
    out = fn()
    for p in params:
        p.grad = None
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    worst = 0.0
    for p, grads in zip(params, analytic):
        flat = p.data.ravel()
        gflat = grads.ravel()
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + eps
            f_plus = float(fn().data)
            flat[j] = original - eps
            f_minus = float(fn().data)
            flat[j] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(numeric), abs(gflat[j]), 1e-4)
            worst = max(worst, abs(numeric - gflat[j]) / denom)
    return worst


SMALL_NET = NetworkConfig(
    generic_input_budget=48,
    generic_hidden=64,
    generic_layers=4,
    generic_skip_at=2,
    part_hidden=32,
    encoder_mlp=(32, 64, 128),
    encoder_head_hidden=64,
    latent_decoder_hidden=64,
    shared_latent_dim=16,
)


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "mixers"
    build_dataset(
        out,
        "mixer",
        count=4,
        seed=11,
        labeled_fraction=0.5,
        test_count=1,
        samples_per_shape=4000,
        eval_samples_per_shape=1500,
        cloud_points=2000,
    )
    return out


@pytest.fixture(scope="session")
def small_dataset(small_dataset_dir):
    return Dataset(small_dataset_dir)


@pytest.fixture(scope="session")
def small_train_config():
    return TrainConfig(
        epochs=400,
        batch_size=4,
        samples_per_iteration=400,
        encoder_points=256,
        seed=5,
        dtype="float32",
        network=SMALL_NET,
    )


@pytest.fixture(scope="session")
def small_model(small_dataset, small_train_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    bundle, metrics = train(small_dataset, small_train_config, out_dir=out)
    return {"bundle": bundle, "metrics": metrics, "dir": out}


@pytest.fixture(scope="session")
def small_shared_model(small_dataset, small_train_config):
    config = TrainConfig.from_json({**small_train_config.to_json(), "variant": "shared", "epochs": 250})
    bundle, metrics = train(small_dataset, config)
    return {"bundle": bundle, "metrics": metrics}
