"""Isosurface extraction and mesh export.

The zero level set of any SDF evaluator (analytic composite or decoded
model) is triangulated on a regular grid with the Lewiner marching-cubes
tables (via scikit-image), oriented so triangle normals point along the
SDF gradient, i.e. outward. A welding pass and connected-component count
support topology checks; meshes export to Wavefront OBJ or a flat-array
JSON payload for the HTTP service.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure


class MeshingError(RuntimeError):
    """Evaluator produced unusable values on the grid."""


@dataclass(frozen=True)
class GridSpec:
    """Sampling lattice: ``resolution`` vertices per axis over ``bounds``."""

    resolution: int = 128
    bounds: tuple = ((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0))

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("grid resolution must be at least 2")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError("grid bounds must be increasing")

    @property
    def spacing(self):
        return tuple((hi - lo) / (self.resolution - 1) for lo, hi in self.bounds)

    @property
    def origin(self):
        return tuple(lo for lo, _ in self.bounds)

    def axes(self):
        return [np.linspace(lo, hi, self.resolution) for lo, hi in self.bounds]


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        if np.isnan(self.vertices).any():
            raise ValueError("mesh has NaN vertices")

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    def face_normals(self):
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        lengths = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(lengths, 1e-300)

    def face_centroids(self):
        return self.vertices[self.triangles].mean(axis=1)


def evaluate_on_grid(evaluator, grid, chunk=131072):
    """Evaluate an SDF on the grid lattice -> (R, R, R) float64 volume."""
    ax, ay, az = grid.axes()
    pts = np.stack(np.meshgrid(ax, ay, az, indexing="ij"), axis=-1).reshape(-1, 3)
    out = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], chunk):
        out[start : start + chunk] = np.asarray(evaluator(pts[start : start + chunk]), dtype=np.float64)
    volume = out.reshape(grid.resolution, grid.resolution, grid.resolution)
    if np.isnan(volume).any():
        i, j, k = np.argwhere(np.isnan(volume))[0]
        raise MeshingError(
            f"SDF evaluator returned NaN at cell ({i}, {j}, {k}), point ({ax[i]:.6g}, {ay[j]:.6g}, {az[k]:.6g})"
        )
    return volume


def marching_cubes(evaluator, grid=GridSpec()):
    """Triangulate the zero level set of ``evaluator`` over ``grid``.

    Returns an empty mesh when the SDF does not change sign. Normals
    (triangle winding) follow the SDF gradient, so they point outward.
    """
    volume = evaluate_on_grid(evaluator, grid)
    if volume.min() > 0.0 or volume.max() < 0.0:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(
        volume, level=0.0, spacing=grid.spacing, gradient_direction="descent"
    )
    verts = verts + np.asarray(grid.origin)
    return Mesh(verts, faces)


def weld(mesh, tolerance=1e-7):
    """Merge vertices closer than ``tolerance`` (grid quantization) and
    drop triangles that degenerate in the process."""
    if mesh.is_empty:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    keys = np.round(mesh.vertices / tolerance).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    tris = inverse[mesh.triangles]
    keep = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    return Mesh(mesh.vertices[first], tris[keep])


def connected_components(mesh):
    """Number of vertex-connected components among referenced vertices."""
    if mesh.is_empty:
        return 0
    parent = np.arange(len(mesh.vertices))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for tri in mesh.triangles:
        a = find(tri[0])
        for other in tri[1:]:
            b = find(other)
            parent[b] = a
    used = np.unique(mesh.triangles)
    return len({find(i) for i in used})


def export_obj(mesh, path):
    """Write Wavefront OBJ: ``v x y z`` lines then 1-based ``f i j k``."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# mesh: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles\n")
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.8f} {y:.8f} {z:.8f}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def mesh_to_json(mesh):
    """Flat-array payload: float32 positions, int32 triangle indices."""
    return {
        "positions": [float(v) for v in mesh.vertices.astype(np.float32).ravel()],
        "indices": [int(i) for i in mesh.triangles.astype(np.int32).ravel()],
        "vertex_count": int(len(mesh.vertices)),
        "triangle_count": int(len(mesh.triangles)),
    }
