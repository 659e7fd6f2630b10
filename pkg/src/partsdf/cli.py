"""Command-line entry points.

Subcommands: ``gen`` (synthetic dataset), ``train``, ``reconstruct``,
``manipulate`` (direct edits or shared-latent targets), ``eval``
(metrics report), ``serve`` (HTTP service + static UI).

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
With ``--json``, failures also emit one machine-readable JSON object on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class CliDataError(RuntimeError):
    pass


def _parse_assignment(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    name, value = text.split("=", 1)
    try:
        return name.strip(), float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad value in {text!r}") from exc


ABLATE_ALIASES = {
    "part-loss": "disable_part_loss",
    "assist-loss": "disable_assist_loss",
    "overlap-loss": "disable_overlap_loss",
    "consistency-loss": "disable_consistency_loss",
    "point-encoder": "disable_point_encoder",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="partsdf", description="Hybrid implicit shape engine")
    parser.add_argument("--json", action="store_true", help="machine-readable errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--family", choices=["mixer", "chair-toy"], default="mixer")
    p.add_argument("--count", type=int, required=True, help="training shapes")
    p.add_argument("--test-count", type=int, default=0)
    p.add_argument("--labeled-fraction", type=float, default=1.0 / 15.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-shape", type=int, default=50_000)
    p.add_argument("--eval-samples-per-shape", type=int, default=20_000)
    p.add_argument("--cloud-points", type=int, default=10_000)
    p.add_argument("--label-noise-rate", type=float, default=0.0)
    p.add_argument("--label-noise-magnitude", type=float, default=0.0)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON file with training-config fields")
    p.add_argument("--variant", choices=["disentangled", "shared"])
    p.add_argument("--ablate", help="comma list: " + ",".join(ABLATE_ALIASES))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("reconstruct", help="fit latents/parameters to observed samples")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="shape file prefix (expects <prefix>.samples.bin and <prefix>.cloud.bin)")
    p.add_argument("--iters", type=int, default=800)
    p.add_argument("--samples-per-iteration", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=96)
    p.add_argument("--out", required=True, help="output prefix (.json and .obj)")

    p = sub.add_parser("manipulate", help="edit parameters and decode a mesh")
    p.add_argument("--model", required=True)
    p.add_argument("--shape-id", required=True)
    p.add_argument("--set", dest="edits", type=_parse_assignment, action="append", default=[], help="direct edit name=value")
    p.add_argument("--target", dest="targets", type=_parse_assignment, action="append", default=[], help="shared-variant target name=value")
    p.add_argument("--steps", type=int, default=300, help="optimization steps for --target")
    p.add_argument("--resolution", type=int, default=96)
    p.add_argument("--out", required=True, help="output OBJ path")
    p.add_argument("--params-out", help="optional JSON with effective parameters")

    p = sub.add_parser("eval", help="evaluate a model against a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", default="cd,emd,siou,tube")
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--limit", type=int, default=0, help="evaluate at most N shapes (0 = all)")
    p.add_argument("--iters", type=int, default=300, help="reconstruction iterations for test shapes")
    p.add_argument("--resolution", type=int, default=96)
    p.add_argument("--cd-points", type=int, default=30_000)
    p.add_argument("--emd-points", type=int, default=2_048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report prefix (.csv and .json)")

    p = sub.add_parser("serve", help="run the HTTP decode service")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static-dir")

    return parser


def cmd_gen(args):
    from .dataset import build_dataset

    manifest = build_dataset(
        args.out,
        args.family,
        count=args.count,
        seed=args.seed,
        labeled_fraction=args.labeled_fraction,
        test_count=args.test_count,
        samples_per_shape=args.samples_per_shape,
        eval_samples_per_shape=args.eval_samples_per_shape,
        cloud_points=args.cloud_points,
        label_noise_rate=args.label_noise_rate,
        label_noise_magnitude=args.label_noise_magnitude,
    )
    print(f"wrote {len(manifest['shapes'])} shapes to {args.out}")
    return EXIT_OK


def cmd_train(args):
    from .dataset import Dataset
    from .training import TrainConfig, train

    doc = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliDataError(f"config file not found: {path}")
        doc = json.loads(path.read_text())
    config = TrainConfig.from_json(doc) if doc else TrainConfig()
    if args.variant:
        doc["variant"] = args.variant
        config = TrainConfig.from_json({**config.to_json(), "variant": args.variant})
    if args.epochs:
        config = TrainConfig.from_json({**config.to_json(), "epochs": args.epochs})
    if args.seed is not None:
        config = TrainConfig.from_json({**config.to_json(), "seed": args.seed})
    if args.ablate:
        updates = {}
        for token in args.ablate.split(","):
            token = token.strip()
            if token not in ABLATE_ALIASES:
                raise CliDataError(f"unknown ablation {token!r}; known: {sorted(ABLATE_ALIASES)}")
            updates[ABLATE_ALIASES[token]] = True
        config = TrainConfig.from_json({**config.to_json(), **updates})

    dataset = Dataset(args.data)
    log = None if args.quiet else (lambda row: print(
        f"epoch {row['epoch']:5d}  total {row['total']:.5f}  recon {row['recon_full']:.5f}", flush=True
    ))
    _, metrics = train(dataset, config, out_dir=args.out, log=log)
    print(f"finished {len(metrics)} epochs; model at {Path(args.out) / 'model.npz'}")
    return EXIT_OK


def _load_observation(prefix):
    from .dataset import read_cloud, read_samples

    prefix = Path(prefix)
    samples_path = prefix.with_suffix(".samples.bin") if prefix.suffix == "" else prefix
    base = str(samples_path)[: -len(".samples.bin")] if str(samples_path).endswith(".samples.bin") else str(prefix)
    samples_file = Path(base + ".samples.bin")
    cloud_file = Path(base + ".cloud.bin")
    if not samples_file.exists():
        raise CliDataError(f"missing sample file {samples_file}")
    if not cloud_file.exists():
        raise CliDataError(f"missing cloud file {cloud_file}")
    return read_samples(samples_file, []), read_cloud(cloud_file)


def cmd_reconstruct(args):
    from .meshing import GridSpec, export_obj, marching_cubes
    from .training import InferConfig, reconstruct

    bundle = _load_bundle(args.model)
    samples, cloud = _load_observation(args.input)
    config = InferConfig(
        iterations=args.iters,
        samples_per_iteration=args.samples_per_iteration,
        seed=args.seed,
    )
    result = reconstruct(bundle, samples, cloud, config)
    mesh = marching_cubes(result.evaluator(bundle), GridSpec(resolution=args.resolution))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "parameters": {name: float(v) for name, v in zip(bundle.layout.names(), result.params_vector)},
        "latent": [float(v) for v in result.latent],
        "assist_latents": {aid: [float(v) for v in a] for aid, a in result.assists.items()},
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
    }
    Path(str(out) + ".json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    export_obj(mesh, str(out) + ".obj")
    print(f"reconstruction loss {result.initial_loss:.5f} -> {result.final_loss:.5f}; wrote {out}.json, {out}.obj")
    return EXIT_OK


def _load_bundle(path):
    from .training import ModelBundle

    path = Path(path)
    if path.is_dir():
        path = path / "model.npz"
    if not path.exists():
        raise CliDataError(f"model checkpoint not found: {path}")
    return ModelBundle.load(path)


def cmd_manipulate(args):
    from .meshing import GridSpec, export_obj, marching_cubes
    from .training import manipulate_direct, manipulate_shared

    bundle = _load_bundle(args.model)
    if args.shape_id not in bundle.shape_ids:
        raise CliDataError(f"unknown shape id {args.shape_id!r}")
    vec, latent, assists = bundle.stored_shape_state(args.shape_id)

    if args.targets and args.edits:
        raise CliDataError("use either --set (direct) or --target (shared), not both")
    if args.targets:
        lv, vec, history = manipulate_shared(bundle, latent, dict(args.targets), steps=args.steps)
        latent = lv
        _, assists = bundle.decode_shared(lv)
    else:
        try:
            vec = manipulate_direct(bundle, vec, dict(args.edits))
        except (KeyError, ValueError) as exc:
            raise CliDataError(str(exc)) from exc

    mesh = marching_cubes(bundle.evaluator(vec, latent, assists), GridSpec(resolution=args.resolution))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    export_obj(mesh, args.out)
    if args.params_out:
        doc = {name: float(v) for name, v in zip(bundle.layout.names(), vec)}
        Path(args.params_out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out} ({len(mesh.vertices)} vertices)")
    return EXIT_OK


def cmd_eval(args):
    from .dataset import Dataset
    from .evaluation import (
        chamfer,
        detect_tube,
        emd,
        sample_mesh_surface,
        shell_iou,
        write_report,
    )
    from .meshing import GridSpec, marching_cubes
    from .shapegen import sample_surface_points
    from .training import InferConfig, reconstruct

    bundle = _load_bundle(args.model)
    dataset = Dataset(args.data)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - {"cd", "emd", "siou", "tube"}
    if unknown:
        raise CliDataError(f"unknown metrics {sorted(unknown)}")

    ids = dataset.ids(args.split)
    if args.limit:
        ids = ids[: args.limit]
    rows = []
    grid = GridSpec(resolution=args.resolution)
    for shape_id in ids:
        record = dataset.record(shape_id)
        if args.split == "train" and shape_id in bundle.shape_ids:
            vec, latent, assists = bundle.stored_shape_state(shape_id)
        else:
            result = reconstruct(
                bundle,
                record.samples,
                record.surface_cloud,
                InferConfig(iterations=args.iters, samples_per_iteration=2000, seed=args.seed),
            )
            vec, latent, assists = result.params_vector, result.latent, result.assists
        evaluator = bundle.evaluator(vec, latent, assists)
        row = {"id": shape_id}
        if {"cd", "emd"} & set(metrics):
            mesh = marching_cubes(evaluator, grid)
            if mesh.is_empty:
                raise CliDataError(f"decoded mesh for {shape_id} is empty")
            if "cd" in metrics:
                pred = sample_mesh_surface(mesh, args.cd_points, seed=args.seed)
                gt = sample_surface_points(record, args.cd_points, seed=args.seed + 1)
                row["cd"] = chamfer(pred, gt)
            if "emd" in metrics:
                pred = sample_mesh_surface(mesh, args.emd_points, seed=args.seed + 2)
                gt = sample_surface_points(record, args.emd_points, seed=args.seed + 3)
                row["emd"] = emd(pred, gt)
        if "siou" in metrics:
            row["siou"] = shell_iou(record.full_sdf, evaluator, resolution=64)
        if "tube" in metrics and any(p.id == "tube" for p in record.composite.all_primitives()):
            gt_tube = record.composite.primitive("tube").params.values
            det = detect_tube(evaluator)
            row["radius_err"] = abs(det.radius - gt_tube[0]) / gt_tube[0]
            row["thickness_err"] = abs(det.thickness - gt_tube[1]) / gt_tube[1]
        rows.append(row)
        print(f"{shape_id}: " + ", ".join(f"{k}={v:.5g}" for k, v in row.items() if k != "id"))

    config_doc = {
        "model": str(args.model),
        "data": str(args.data),
        "metrics": metrics,
        "split": args.split,
        "resolution": args.resolution,
        "cd_points": args.cd_points,
        "emd_points": args.emd_points,
        "iters": args.iters,
        "seed": args.seed,
    }
    summary = write_report(args.out + ".csv", args.out + ".json", rows, config_doc)
    print(json.dumps(summary["means"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    if not Path(args.model).exists():
        raise CliDataError(f"model checkpoint not found: {args.model}")
    app = create_app(args.model, args.data, args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "manipulate": cmd_manipulate,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliDataError as exc:
        _report_error(args, "data", str(exc))
        return EXIT_DATA
    except FileNotFoundError as exc:
        _report_error(args, "data", str(exc))
        return EXIT_DATA
    except (ValueError, KeyError) as exc:
        _report_error(args, "data", str(exc))
        return EXIT_DATA
    except FloatingPointError as exc:
        _report_error(args, "numerical", str(exc))
        return EXIT_NUMERIC
    except RuntimeError as exc:
        _report_error(args, "numerical", str(exc))
        return EXIT_NUMERIC


def _report_error(args, kind, message):
    if getattr(args, "json", False):
        print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    else:
        print(f"error ({kind}): {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
