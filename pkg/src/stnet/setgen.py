"""Random planar sets, exact set algebra on them, rasterisation and dataset files."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .algebra import BOOLEAN, Term, eval_term, variables

MAX_POINTS = 10


@dataclass(frozen=True)
class SetSpec:
    """Points of [-1, 1]^2 closer to ``inside`` than to ``outside`` (ties count as inside)."""

    inside: np.ndarray
    outside: np.ndarray

    def __post_init__(self):
        for pts in (self.inside, self.outside):
            if pts.ndim != 2 or pts.shape[1] != 2 or not 1 <= len(pts) <= MAX_POINTS:
                raise ValueError("need between 1 and 10 points in the plane")
            if np.any(np.abs(pts) > 1.0):
                raise ValueError("points must lie in [-1, 1]^2")

    def __eq__(self, other):
        return (
            isinstance(other, SetSpec)
            and np.array_equal(self.inside, other.inside)
            and np.array_equal(self.outside, other.outside)
        )

    __hash__ = None


def sample_set_spec(rng: np.random.Generator) -> SetSpec:
    n_i = int(rng.integers(1, MAX_POINTS + 1))
    n_o = int(rng.integers(1, MAX_POINTS + 1))
    inside = rng.uniform(-1.0, 1.0, (n_i, 2))
    outside = rng.uniform(-1.0, 1.0, (n_o, 2))
    return SetSpec(inside, outside)


def _min_sqdist(points, centers):
    d = points[..., None, :] - centers
    return np.min(np.einsum("...kj,...kj->...k", d, d), axis=-1)


def membership(spec: SetSpec, points) -> np.ndarray:
    """Vectorised indicator over an array of points with trailing axis 2."""
    points = np.asarray(points, dtype=np.float64)
    return _min_sqdist(points, spec.inside) <= _min_sqdist(points, spec.outside)


def indicator(spec: SetSpec, u) -> bool:
    return bool(membership(spec, np.asarray(u, dtype=np.float64)[None])[0])


def cell_centers(resolution: int) -> np.ndarray:
    """``(r, r, 2)`` array of (x, y) centres; row index runs along y."""
    c = -1.0 + (2.0 * np.arange(resolution) + 1.0) / resolution
    xs, ys = np.meshgrid(c, c)
    return np.stack([xs, ys], axis=-1)


def rasterize(spec: SetSpec, resolution: int) -> np.ndarray:
    """``(r, r)`` boolean grid, cell true iff its centre is in the set."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    return membership(spec, cell_centers(resolution))


def realize_term_on_sets(term: Term, specs, u) -> bool:
    """Membership of ``u`` in the set the term denotes (meet = AND, join = OR)."""
    _check_specs(term, specs)
    return bool(eval_term(term, BOOLEAN, [indicator(s, u) for s in specs]))


def realize_term_on_points(term: Term, specs, points) -> np.ndarray:
    _check_specs(term, specs)
    return eval_term(term, BOOLEAN, [membership(s, points) for s in specs])


def realize_term_on_grids(term: Term, grids) -> np.ndarray:
    _check_specs(term, grids)
    return eval_term(term, BOOLEAN, list(grids))


def _check_specs(term, specs):
    need = max(variables(term))
    if need > len(specs):
        raise LookupError(f"term uses x{need} but only {len(specs)} sets were given")


def uniform_points(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, tuple(np.atleast_1d(shape)) + (2,))


# --------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    specs: list
    grids: np.ndarray  # (n, r, r) bool
    seed: int
    resolution: int

    def __len__(self):
        return len(self.specs)

    def split_bounds(self):
        return split_bounds(len(self))

    def indices(self, split: str) -> np.ndarray:
        a, b = self.split_bounds()
        return {
            "train": np.arange(0, a),
            "val": np.arange(a, b),
            "test": np.arange(b, len(self)),
        }[split]

    def padded_points(self):
        """Inside/outside points padded to 10 with +inf-distance sentinels.

        Returns ``(inside, outside)`` arrays of shape ``(n, 10, 2)``; padded
        slots sit far outside the square so they never win a nearest-point test.
        """
        n = len(self)
        inside = np.full((n, MAX_POINTS, 2), 1e6)
        outside = np.full((n, MAX_POINTS, 2), 1e6)
        for k, s in enumerate(self.specs):
            inside[k, : len(s.inside)] = s.inside
            outside[k, : len(s.outside)] = s.outside
        return inside, outside


def split_bounds(n: int):
    """Index boundaries for the 80/10/10 train/val/test split."""
    a = (8 * n) // 10
    b = a + n // 10
    return a, b


def gen_dataset(n: int, resolution: int = 32, seed: int = 0) -> Dataset:
    """Set ``i`` is drawn from ``default_rng([seed, i])`` so any index reproduces alone."""
    if n < 10:
        raise ValueError("need at least 10 sets")
    specs = [sample_set_spec(np.random.default_rng([seed, i])) for i in range(n)]
    grids = np.stack([rasterize(s, resolution) for s in specs])
    return Dataset(specs, grids, seed, resolution)


_DS_MAGIC = b"STDS"
_DS_VERSION = 1


def save_dataset(ds: Dataset, path):
    with open(path, "wb") as fh:
        fh.write(_DS_MAGIC)
        fh.write(struct.pack("<IIIQ", _DS_VERSION, len(ds), ds.resolution, ds.seed))
        for spec, grid in zip(ds.specs, ds.grids):
            fh.write(struct.pack("<BB", len(spec.inside), len(spec.outside)))
            fh.write(np.ascontiguousarray(spec.inside, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(spec.outside, dtype="<f8").tobytes())
            fh.write(np.packbits(grid, axis=1).tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _DS_MAGIC:
        raise ValueError(f"{path}: not an STDS file")
    version, count, resolution, seed = struct.unpack_from("<IIIQ", data, 4)
    if version != _DS_VERSION:
        raise ValueError(f"{path}: unsupported STDS version {version}")
    pos = 4 + struct.calcsize("<IIIQ")
    row_bytes = (resolution + 7) // 8
    specs, grids = [], []
    for _ in range(count):
        n_i, n_o = struct.unpack_from("<BB", data, pos)
        pos += 2
        inside = np.frombuffer(data, "<f8", 2 * n_i, pos).reshape(n_i, 2).copy()
        pos += 16 * n_i
        outside = np.frombuffer(data, "<f8", 2 * n_o, pos).reshape(n_o, 2).copy()
        pos += 16 * n_o
        packed = np.frombuffer(data, np.uint8, resolution * row_bytes, pos).reshape(resolution, row_bytes)
        pos += resolution * row_bytes
        grids.append(np.unpackbits(packed, axis=1, count=resolution).astype(bool))
        specs.append(SetSpec(inside, outside))
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes")
    return Dataset(specs, np.stack(grids), seed, resolution)


def batch_membership(inside, outside, points) -> np.ndarray:
    """Membership for padded point sets.

    ``inside``/``outside`` have shape ``(..., 10, 2)`` and ``points`` shape
    ``(..., P, 2)`` with matching leading axes; returns ``(..., P)``.
    """
    def nearest(centers):
        d = points[..., :, None, :] - centers[..., None, :, :]
        return np.min(np.einsum("...kj,...kj->...k", d, d), axis=-1)

    return nearest(inside) <= nearest(outside)
