"""Grid autoencoder: encoder E (raster -> R^l) and point decoder D(u, z) -> logit.

Latent vectors live on the dyadic lattice ``2**-30 * Z^l``.  Sums and
differences of lattice values below ``2**22`` in magnitude are exact in
float64, which is what makes the additive couplings in :mod:`stnet.transport`
bit-exact bijections of the latent space.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .setgen import Dataset, batch_membership

log = logging.getLogger(__name__)

LATENT_QUANTUM = 2.0 ** -30


def snap(z):
    """Round onto the latent lattice."""
    return np.round(np.asarray(z, dtype=np.float64) / LATENT_QUANTUM) * LATENT_QUANTUM


def on_lattice(z) -> bool:
    z = np.asarray(z)
    return bool(np.array_equal(snap(z), z))


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EmbedConfig:
    latent_dim: int = 64
    resolution: int = 32
    enc_hidden: tuple = (256, 128)
    dec_hidden: tuple = (128, 128)
    epochs: int = 20
    batch_sets: int = 64
    batch_points: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-3
    val_points: int = 1024
    seed: int = 0


@dataclass
class EmbedModel:
    params: dc.ParamStore
    latent_dim: int
    resolution: int
    enc_dims: tuple
    dec_dims: tuple
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, cfg: EmbedConfig, rng=None):
        l = cfg.latent_dim
        if math.isqrt(l) ** 2 != l:
            raise ValueError("latent_dim must be a perfect square")
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        enc = (cfg.resolution ** 2, *cfg.enc_hidden, l)
        dec = (2 + l, *cfg.dec_hidden, 1)
        params = dc.ParamStore()
        dc.init_mlp(params, "enc", enc, rng)
        dc.init_mlp(params, "dec", dec, rng)
        return cls(params, l, cfg.resolution, tuple(enc), tuple(dec))


def _grid_input(model, grids):
    grids = np.asarray(grids)
    if grids.shape[-2:] != (model.resolution, model.resolution):
        raise ValueError(
            f"grid resolution {grids.shape[-2:]} does not match model resolution {model.resolution}"
        )
    flat = grids.reshape(grids.shape[:-2] + (-1,))
    return np.where(flat, 1.0, -1.0)


def encode(model: EmbedModel, grid) -> np.ndarray:
    """Latent vector(s) for one ``(r, r)`` grid or a stack of them."""
    x = _grid_input(model, grid)
    return snap(dc.mlp_numpy(model.params.arrays, "enc", x, len(model.enc_dims) - 1))


def decode_logits(model: EmbedModel, points, z) -> np.ndarray:
    """Logits for ``points`` (..., P, 2) given latents ``z`` (..., l)."""
    a = model.params.arrays
    points = np.asarray(points, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    W = a["dec.0.W"]
    h = points @ W[:2] + (z @ W[2:] + a["dec.0.b"])[..., None, :]
    h = np.where(h > 0, h, 0.0)
    depth = len(model.dec_dims) - 1
    for i in range(1, depth):
        h = h @ a[f"dec.{i}.W"] + a[f"dec.{i}.b"]
        if i < depth - 1:
            h = np.where(h > 0, h, 0.0)
    return h[..., 0]


def decode_point(model: EmbedModel, u, z) -> float:
    return float(decode_logits(model, np.asarray(u, dtype=np.float64)[None], z)[0])


def predicted_set_membership(model: EmbedModel, z, points) -> np.ndarray:
    return decode_logits(model, points, z) >= 0.0


def decoder_graph(model: EmbedModel, nodes: dict, points, z):
    """Graph version of :func:`decode_logits` for ``points`` (B, P, 2), ``z`` (B, l)."""
    W = nodes["dec.0.W"]
    h = dc.affine(points, dc.take(W, slice(0, 2)))
    zpart = dc.affine(z, dc.take(W, slice(2, None)), nodes["dec.0.b"])
    h = dc.relu(h + dc.reshape(zpart, (zpart.shape[0], 1, zpart.shape[1])))
    depth = len(model.dec_dims) - 1
    for i in range(1, depth):
        h = dc.affine(h, nodes[f"dec.{i}.W"], nodes[f"dec.{i}.b"])
        if i < depth - 1:
            h = dc.relu(h)
    return dc.reshape(h, h.shape[:-1])


def autoencoder_loss(model, nodes, grids, points, targets):
    x = _grid_input(model, grids)
    z = dc.mlp(nodes, "enc", x, len(model.enc_dims) - 1)
    return dc.bce_with_logits(decoder_graph(model, nodes, points, z), targets)


def train_autoencoder(dataset: Dataset, cfg: EmbedConfig | None = None) -> EmbedModel:
    """Fit encoder and decoder on the train split; return the best-val checkpoint."""
    cfg = EmbedConfig(resolution=dataset.resolution) if cfg is None else cfg
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng([cfg.seed, 1])
    model = EmbedModel.create(cfg, np.random.default_rng([cfg.seed, 0]))
    adam = dc.AdamConfig(lr=cfg.lr, weight_decay=cfg.weight_decay)
    inside, outside = dataset.padded_points()
    train = dataset.indices("train")
    val = dataset.indices("val")
    vrng = np.random.default_rng([cfg.seed, 2])
    val_pts = vrng.uniform(-1, 1, (len(val), cfg.val_points, 2))
    val_tgt = batch_membership(inside[val], outside[val], val_pts)

    best, best_loss = model.params.copy(), math.inf
    for epoch in range(cfg.epochs):
        order = rng.permutation(train)
        losses = []
        for start in range(0, len(order), cfg.batch_sets):
            idx = order[start : start + cfg.batch_sets]
            pts = rng.uniform(-1, 1, (len(idx), cfg.batch_points, 2))
            tgt = batch_membership(inside[idx], outside[idx], pts)
            nodes = model.params.leaves()
            loss = autoencoder_loss(model, nodes, dataset.grids[idx], pts, tgt)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(f"non-finite autoencoder loss at epoch {epoch}, batch {start}")
            dc.backward(loss)
            dc.adam_step(model.params, {k: n.grad for k, n in nodes.items()}, adam)
            losses.append(float(loss.value))
        z = encode(model, dataset.grids[val])
        val_loss = dc.bce_numpy(decode_logits(model, val_pts, z), val_tgt)
        model.history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss})
        log.info("embed epoch %d train %.4f val %.4f", epoch, np.mean(losses), val_loss)
        if val_loss < best_loss:
            best, best_loss = model.params.copy(), val_loss
    model.params = best
    return model


# --------------------------------------------------------------------------
# files


def save_embed(model: EmbedModel, path):
    header = [model.latent_dim, model.resolution, len(model.enc_dims), *model.enc_dims,
              len(model.dec_dims), *model.dec_dims]
    arrays = {"__header__": np.array(header, dtype=np.float64), **model.params.arrays}
    dc.save_arrays(path, arrays)


def load_embed(path) -> EmbedModel:
    arrays = dc.load_arrays(path)
    h = [int(v) for v in arrays.pop("__header__")]
    l, r, ne = h[0], h[1], h[2]
    enc = tuple(h[3 : 3 + ne])
    nd = h[3 + ne]
    dec = tuple(h[4 + ne : 4 + ne + nd])
    return EmbedModel(dc.ParamStore(arrays), l, r, enc, dec)


_LZ_MAGIC = b"STLZ"


def save_latents(latents, path):
    latents = np.ascontiguousarray(latents, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_LZ_MAGIC)
        fh.write(struct.pack("<II", *latents.shape))
        fh.write(latents.tobytes())


def load_latents(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _LZ_MAGIC:
        raise ValueError(f"{path}: not an STLZ file")
    n, l = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + 8 * n * l:
        raise ValueError(f"{path}: size does not match header")
    return np.frombuffer(data, "<f8", n * l, 12).reshape(n, l).copy()


def encode_dataset(model: EmbedModel, dataset: Dataset, batch=256) -> np.ndarray:
    return np.concatenate(
        [encode(model, dataset.grids[i : i + batch]) for i in range(0, len(dataset), batch)]
    )
