"""Desk-scale end-to-end experiment: generate the mixer dataset, train,
reconstruct the test split, and report the headline numbers.

Usage: python scripts/run_desk_experiment.py [workdir]
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

from partsdf.dataset import Dataset, build_dataset
from partsdf.evaluation import (
    evaluate_stored_shapes,
    manipulation_benchmark,
    shape_stream_metrics,
    summarize,
)
from partsdf.training import InferConfig, TrainConfig, reconstruct, train

WORKDIR = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/desk_experiment")
DATA = WORKDIR / "data"
RUN = WORKDIR / "model"

t0 = time.time()


def log(msg):
    print(f"[{time.time() - t0:7.1f}s] {msg}", flush=True)


def main():
    if not (DATA / "manifest.json").exists():
        log("generating 64 + 20 mixers")
        build_dataset(DATA, "mixer", count=64, seed=2024, labeled_fraction=1 / 15, test_count=20,
                      samples_per_shape=50_000, eval_samples_per_shape=20_000, cloud_points=10_000)
    dataset = Dataset(DATA)

    config = TrainConfig.from_json(json.loads((Path(__file__).parent / "desk_config.json").read_text()))
    log(f"training: {config.epochs} epochs, batch {config.batch_size}")
    bundle, metrics = train(dataset, config, out_dir=RUN,
                            log=lambda r: log(f"epoch {r['epoch']:4d} total={r['total']:.5f}")
                            if r["epoch"] % 25 == 0 else None)
    log(f"train-shape metrics: {summarize(evaluate_stored_shapes(bundle, dataset))}")

    states, rows = {}, []
    for sid in dataset.ids("test"):
        record = dataset.record(sid)
        result = reconstruct(bundle, record.samples, record.surface_cloud,
                             InferConfig(iterations=400, samples_per_iteration=2000, seed=3))
        states[sid] = (result.params_vector, result.latent, result.assists)
        rows.append(shape_stream_metrics(bundle, record, result.evaluator(bundle)))
    log(f"test recon: clamped-L1 {np.mean([r['recon_clamped'] for r in rows]):.5f}, "
        f"assist gap {np.mean([r['assist_gap'] for r in rows]):.5f}, "
        f"overlap {np.mean([r['overlap'] for r in rows]):.2e}")

    bench = manipulation_benchmark(bundle, dataset, states, seed=13)
    log(f"manipulation: radius err {np.mean([r['radius_err'] for r in bench]):.5f}, "
        f"thickness err {np.mean([r['thickness_err'] for r in bench]):.5f}")
    log(f"artifacts in {WORKDIR}")


if __name__ == "__main__":
    main()
