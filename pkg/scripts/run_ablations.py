"""Comparative ablation runs on a small mixer sample: full configuration
vs single-term removals, reporting the failure-mode measures.

Usage: python scripts/run_ablations.py [workdir]
"""

import sys
import time
from pathlib import Path

from partsdf.dataset import Dataset, build_dataset
from partsdf.evaluation import evaluate_stored_shapes, summarize
from partsdf.training import TrainConfig, train

WORKDIR = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/ablations")

VARIANTS = [
    ("full", {}),
    ("no-part-loss", {"disable_part_loss": True}),
    ("no-assist-loss", {"disable_assist_loss": True}),
    ("no-overlap-loss", {"disable_overlap_loss": True}),
    ("no-consistency-loss", {"disable_consistency_loss": True}),
    ("no-point-encoder", {"disable_point_encoder": True}),
]


def main():
    data_dir = WORKDIR / "data"
    if not (data_dir / "manifest.json").exists():
        build_dataset(data_dir, "mixer", count=24, seed=505, labeled_fraction=1 / 15, test_count=0,
                      samples_per_shape=20_000, eval_samples_per_shape=8_000, cloud_points=6_000)
    dataset = Dataset(data_dir)

    print(f"{'variant':22s} {'recon':>9s} {'assist':>9s} {'overlap':>11s} {'pose':>9s}")
    for name, flags in VARIANTS:
        t0 = time.time()
        config = TrainConfig(epochs=300, batch_size=4, samples_per_iteration=700,
                             encoder_points=512, lr_encoder=1e-3, seed=11, dtype="float32", **flags)
        bundle, _ = train(dataset, config)
        means = summarize(evaluate_stored_shapes(bundle, dataset))
        print(f"{name:22s} {means['recon_clamped']:9.5f} {means['assist_gap']:9.5f} "
              f"{means['overlap']:11.2e} {means['translation_error']:9.5f}   ({time.time()-t0:.0f}s)")


if __name__ == "__main__":
    main()
