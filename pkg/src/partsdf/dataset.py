"""On-disk dataset layout and the generation pipeline.

A dataset directory holds ``manifest.json`` plus, per shape:

* ``<id>.json`` -- the exact decomposition and generic-part descriptor;
* ``<id>.samples.bin`` -- training SDF samples;
* ``<id>.eval.bin`` -- a held-out sample set from the same strategy;
* ``<id>.cloud.bin`` -- the 10k-point surface cloud for the encoder.

Binary files are little-endian float32 records behind a 16-byte header
``(magic, version, record count, part count)``. Sample records are
``x, y, z, sdf_full`` followed by ``part count`` per-part distances in
manifest part order; cloud records are bare ``x, y, z``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import CompositeSpec
from .shapegen import (
    FAMILIES,
    SampleSet,
    ShapeRecord,
    generate_record,
    generic_part_from_json,
    sample_sdf,
    sample_surface_points,
)

FORMAT_VERSION = 1
SAMPLE_MAGIC = b"PSDS"
CLOUD_MAGIC = b"PSDC"
_HEADER = struct.Struct("<4sIII")


class DatasetError(ValueError):
    """Missing or malformed dataset files."""


def _write_block(path, magic, count, part_count, payload):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, FORMAT_VERSION, count, part_count))
        fh.write(payload.astype("<f4").tobytes())


def _read_block(path, magic):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header")
    tag, version, count, part_count = _HEADER.unpack_from(raw)
    if tag != magic:
        raise DatasetError(f"{path}: bad magic {tag!r}")
    if version != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported format version {version}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return count, part_count, body


def write_samples(path, samples, part_order):
    """Serialize a sample set; per-part channels follow ``part_order``."""
    k = samples.size
    parts = [samples.part_sdfs[pid] for pid in part_order] if samples.has_part_labels else []
    payload = np.concatenate(
        [samples.points, samples.sdf_full[:, None]] + [p[:, None] for p in parts], axis=1
    )
    _write_block(path, SAMPLE_MAGIC, k, len(parts), payload)


def read_samples(path, part_order):
    count, part_count, body = _read_block(path, SAMPLE_MAGIC)
    width = 4 + part_count
    if body.size != count * width:
        raise DatasetError(f"{path}: payload size mismatch")
    table = body.reshape(count, width)
    part_sdfs = {}
    if part_count:
        if part_count != len(part_order):
            raise DatasetError(f"{path}: {part_count} part channels, expected {len(part_order)}")
        part_sdfs = {pid: table[:, 4 + i].copy() for i, pid in enumerate(part_order)}
    return SampleSet(points=table[:, :3].copy(), sdf_full=table[:, 3].copy(), part_sdfs=part_sdfs)


def write_cloud(path, cloud):
    _write_block(path, CLOUD_MAGIC, cloud.shape[0], 0, np.asarray(cloud))


def read_cloud(path):
    count, _, body = _read_block(path, CLOUD_MAGIC)
    if body.size != count * 3:
        raise DatasetError(f"{path}: payload size mismatch")
    return body.reshape(count, 3).copy()


def build_dataset(
    out_dir,
    family_name,
    count,
    seed,
    labeled_fraction=1.0 / 15.0,
    test_count=0,
    family=None,
    samples_per_shape=50_000,
    eval_samples_per_shape=20_000,
    cloud_points=10_000,
    label_noise_rate=0.0,
    label_noise_magnitude=0.0,
    progress=None,
):
    """Generate and write a full dataset; returns the manifest dict.

    The first ``ceil(count * labeled_fraction)`` training shapes carry
    per-part labels (shapes are i.i.d., so which ones is immaterial);
    test shapes never do. Byte-identical across runs for fixed inputs.
    """
    from .shapegen import inject_label_noise

    if family_name not in FAMILIES:
        raise DatasetError(f"unknown family {family_name!r}; available: {sorted(FAMILIES)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params_cls, _ = FAMILIES[family_name]
    family = family or params_cls()

    n_labeled = int(np.ceil(count * labeled_fraction))
    shapes = []
    part_order = None
    param_vectors = []
    for index in range(count + test_count):
        split = "train" if index < count else "test"
        labeled = split == "train" and index < n_labeled
        record = generate_record(family_name, family, index, seed, labeled)
        record.samples = sample_sdf(record, samples_per_shape, seed=seed, tag="samples")
        record.eval_samples = sample_sdf(record, eval_samples_per_shape, seed=seed, tag="eval")
        record.surface_cloud = sample_surface_points(record, cloud_points, seed=seed)
        if labeled and label_noise_rate > 0:
            record.samples = inject_label_noise(
                record.samples, label_noise_rate, label_noise_magnitude, seed=seed
            )
        order = [p.id for p in record.composite.all_primitives()]
        if part_order is None:
            part_order = order
        elif order != part_order:
            raise DatasetError("inconsistent part decomposition across shapes")
        write_record(out_dir, record, part_order)
        shapes.append({"id": record.id, "split": split, "has_part_labels": labeled})
        param_vectors.append(record)
        if progress:
            progress(record.id)

    from .networks import ParamLayout

    layout = ParamLayout(param_vectors[0].composite)
    vectors = np.stack([layout.pack(r.composite) for r in param_vectors])
    manifest = {
        "format_version": FORMAT_VERSION,
        "family_name": family_name,
        "family": family.to_json(),
        "seed": seed,
        "samples_per_shape": samples_per_shape,
        "eval_samples_per_shape": eval_samples_per_shape,
        "cloud_points": cloud_points,
        "label_noise_rate": label_noise_rate,
        "label_noise_magnitude": label_noise_magnitude,
        "part_order": part_order,
        "shapes": shapes,
        "param_ranges": layout.ranges_from_samples(vectors),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def write_record(out_dir, record, part_order):
    out_dir = Path(out_dir)
    doc = {
        "id": record.id,
        "has_part_labels": record.has_part_labels,
        "composite": record.composite.to_json(),
        "generic_part": record.generic_part.to_json(),
    }
    (out_dir / f"{record.id}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if record.samples is not None:
        write_samples(out_dir / f"{record.id}.samples.bin", record.samples, part_order if record.has_part_labels else [])
    if record.eval_samples is not None:
        write_samples(out_dir / f"{record.id}.eval.bin", record.eval_samples, [])
    if record.surface_cloud is not None:
        write_cloud(out_dir / f"{record.id}.cloud.bin", record.surface_cloud)


class Dataset:
    """Lazy reader over a dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise DatasetError(f"no manifest.json under {self.root}")
        self.manifest = json.loads(manifest_path.read_text())
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise DatasetError("unsupported dataset format version")
        self.part_order = self.manifest["part_order"]
        self._records = {}

    def ids(self, split=None):
        return [
            s["id"] for s in self.manifest["shapes"] if split is None or s["split"] == split
        ]

    def split_of(self, shape_id):
        for s in self.manifest["shapes"]:
            if s["id"] == shape_id:
                return s["split"]
        raise KeyError(f"unknown shape id {shape_id!r}")

    def record(self, shape_id, with_samples=True):
        cached = self._records.get((shape_id, with_samples))
        if cached is not None:
            return cached
        path = self.root / f"{shape_id}.json"
        if not path.exists():
            raise DatasetError(f"missing shape file {path}")
        doc = json.loads(path.read_text())
        record = ShapeRecord(
            id=doc["id"],
            composite=CompositeSpec.from_json(doc["composite"]),
            generic_part=generic_part_from_json(doc["generic_part"]),
            has_part_labels=doc["has_part_labels"],
        )
        cloud_path = self.root / f"{shape_id}.cloud.bin"
        if cloud_path.exists():
            record.surface_cloud = read_cloud(cloud_path)
        if with_samples:
            record.samples = read_samples(self.root / f"{shape_id}.samples.bin", self.part_order)
            eval_path = self.root / f"{shape_id}.eval.bin"
            if eval_path.exists():
                record.eval_samples = read_samples(eval_path, [])
        self._records[(shape_id, with_samples)] = record
        return record

    def records(self, split=None, with_samples=True):
        return [self.record(sid, with_samples) for sid in self.ids(split)]
