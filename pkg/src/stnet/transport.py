"""Invertible latent map phi, induced latent operations, and their training.

phi is a stack of additive coupling layers.  Shifts are snapped to the latent
lattice (see :mod:`stnet.embed`), so on lattice vectors ``x + s - s == x``
holds exactly and phi is a bit-exact bijection of the lattice.  The numpy
path evaluates the coupling networks with non-BLAS ``einsum`` because BLAS
results can depend on the batch size, which would break the round trip when
forward and inverse see different batch shapes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .algebra import BOOLEAN, MEET, Realization, Term, Var, eval_term, random_term, variables
from .embed import EmbedModel, TrainingDiverged, decoder_graph, decode_logits, snap
from .mirrored import CANDIDATES, MirroredPair, apply_candidate
from .setgen import Dataset, batch_membership

log = logging.getLogger(__name__)


def _lin(x, W, b):
    return np.einsum("...i,ij->...j", x, W, optimize=False) + b


# --------------------------------------------------------------------------
# transport model


@dataclass
class TransportModel:
    params: dc.ParamStore
    pair: MirroredPair
    latent_dim: int
    num_layers: int = 2
    hidden: int = 128
    depth: int = 3
    quantize: bool = True

    @classmethod
    def create(cls, pair: MirroredPair, latent_dim=64, num_layers=2, hidden=128, depth=3,
               rng=None, zero_init=True):
        if latent_dim % 2:
            raise ValueError("latent dimension must be even")
        if math.isqrt(latent_dim) ** 2 != latent_dim and "mat_prod" in (pair.meet_op, pair.join_op):
            raise ValueError("mat_prod needs a perfect-square latent dimension")
        if num_layers < 1 or depth < 1:
            raise ValueError("need at least one coupling layer and one affine layer")
        rng = np.random.default_rng(0) if rng is None else rng
        half = latent_dim // 2
        params = dc.ParamStore()
        dims = (half, *([hidden] * (depth - 1)), half)
        for k in range(num_layers):
            dc.init_mlp(params, f"c{k}", dims, rng, zero_last=zero_init)
        return cls(params, pair, latent_dim, num_layers, hidden, depth)

    def randomize(self, rng, scale=1.0):
        """Overwrite all parameters with random values (test helper)."""
        for name, a in self.params.items():
            a[...] = rng.normal(0.0, scale / math.sqrt(max(a.shape[0], 1)), a.shape)
        return self


def _halves(model, k):
    """(pass-through, shifted) slices for layer ``k``; halves swap each layer."""
    h = model.latent_dim // 2
    a, b = slice(0, h), slice(h, None)
    return (a, b) if k % 2 == 0 else (b, a)


def _shift(model, k, xa):
    a = model.params.arrays
    for i in range(model.depth):
        xa = _lin(xa, a[f"c{k}.{i}.W"], a[f"c{k}.{i}.b"])
        if i < model.depth - 1:
            xa = np.tanh(xa)
    return snap(xa) if model.quantize else xa


def _sym_name(symbol):
    name = getattr(symbol, "name", symbol)
    name = {"&": "meet", "|": "join"}.get(name, name)
    if name not in ("meet", "join"):
        raise KeyError(f"unknown symbol {symbol!r}")
    return name


def phi_forward(model: TransportModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.latent_dim:
        raise ValueError(f"expected latent dimension {model.latent_dim}, got {z.shape[-1]}")
    out = z.copy()
    for k in range(model.num_layers):
        a, b = _halves(model, k)
        out[..., b] = out[..., b] + _shift(model, k, out[..., a])
    return out


def phi_inverse(model: TransportModel, m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-1] != model.latent_dim:
        raise ValueError(f"expected latent dimension {model.latent_dim}, got {m.shape[-1]}")
    out = m.copy()
    for k in reversed(range(model.num_layers)):
        a, b = _halves(model, k)
        out[..., b] = out[..., b] - _shift(model, k, out[..., a])
    return out


def _mirror(model, op, a, b):
    m = apply_candidate(op, a, b)
    return snap(m) if model.quantize else m


def induced_op(model: TransportModel, symbol, z1, z2) -> np.ndarray:
    """phi^-1(f(phi(z1), phi(z2))) for the mirrored operation bound to ``symbol``.

    The mirrored result is snapped back onto the lattice so that results stay
    valid latents for further composition.
    """
    op = model.pair.meet_op if _sym_name(symbol) == "meet" else model.pair.join_op
    m = _mirror(model, op, phi_forward(model, z1), phi_forward(model, z2))
    return phi_inverse(model, m)


def induced_realization(model: TransportModel) -> Realization:
    return Realization(
        lambda a, b: induced_op(model, "meet", a, b),
        lambda a, b: induced_op(model, "join", a, b),
        f"induced[{model.pair.label}]",
    )


def predict_latent(model: TransportModel, term: Term, latents) -> np.ndarray:
    """Evaluate ``term`` with the induced operations; ``latents[i]`` is x(i+1)."""
    return eval_term(term, induced_realization(model), latents)


def predict_latent_mirrored(model: TransportModel, term: Term, latents) -> np.ndarray:
    """Same value as :func:`predict_latent` but with one phi per leaf and one inverse.

    Agrees with :func:`predict_latent` bitwise whenever phi is exact, which
    holds on the lattice; cheaper because interior phi/phi^-1 pairs cancel.
    """
    latents = [np.asarray(z, dtype=np.float64) for z in latents]
    mirrored = [phi_forward(model, z) for z in latents]
    real = Realization(
        lambda a, b: _mirror(model, model.pair.meet_op, a, b),
        lambda a, b: _mirror(model, model.pair.join_op, a, b),
    )
    return phi_inverse(model, eval_term(term, real, mirrored))


# --------------------------------------------------------------------------
# graph versions for training


def _shift_graph(model, nodes, k, xa):
    x = dc.mlp(nodes, f"c{k}", xa, model.depth, act=dc.tanh)
    return dc.straight_through(x, snap) if model.quantize else x


def _coupling_graph(model, nodes, z, inverse=False):
    h = model.latent_dim // 2
    lo = dc.take_last(z, slice(0, h))
    hi = dc.take_last(z, slice(h, None))
    layers = reversed(range(model.num_layers)) if inverse else range(model.num_layers)
    for k in layers:
        if k % 2 == 0:
            s = _shift_graph(model, nodes, k, lo)
            hi = dc.sub(hi, s) if inverse else dc.add(hi, s)
        else:
            s = _shift_graph(model, nodes, k, hi)
            lo = dc.sub(lo, s) if inverse else dc.add(lo, s)
    return dc.concat([lo, hi], axis=-1)


def phi_forward_graph(model, nodes, z):
    return _coupling_graph(model, nodes, z)


def phi_inverse_graph(model, nodes, m):
    return _coupling_graph(model, nodes, m, inverse=True)


def candidate_graph(op: str, a, b):
    if op == "min":
        return dc.minimum(a, b)
    if op == "max":
        return dc.maximum(a, b)
    if op == "add":
        return dc.add(a, b)
    if op == "sub":
        return dc.sub(a, b)
    if op == "hadamard":
        return dc.mul(a, b)
    if op == "scaled_add":
        return dc.scale(dc.add(a, b), 2.0)
    if op == "mat_prod":
        n = a.shape[-1]
        s = math.isqrt(n)
        lead = a.shape[:-1]
        prod = dc.matmul(dc.reshape(a, lead + (s, s)), dc.reshape(b, lead + (s, s)))
        return dc.reshape(prod, lead + (n,))
    if op == "cyclic_add":
        return dc.add(dc.roll(a, 1), b)
    raise KeyError(f"unknown candidate operation {op!r}")


# --------------------------------------------------------------------------
# direct baselines


BASELINE_KINDS = ("mlp_concat", "symmetric")


@dataclass
class DirectBaseline:
    params: dc.ParamStore
    kind: str
    latent_dim: int
    hidden: int = 256

    @classmethod
    def create(cls, kind, latent_dim=64, hidden=256, rng=None):
        if kind not in BASELINE_KINDS:
            raise KeyError(f"unknown baseline kind {kind!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        params = dc.ParamStore()
        for sym in ("meet", "join"):
            if kind == "mlp_concat":
                dc.init_mlp(params, f"{sym}.f", (2 * latent_dim, hidden, latent_dim), rng)
            else:
                dc.init_mlp(params, f"{sym}.g", (latent_dim, hidden, hidden), rng)
                dc.init_mlp(params, f"{sym}.h", (hidden, hidden, latent_dim), rng)
        return cls(params, kind, latent_dim, hidden)


def baseline_apply(baseline: DirectBaseline, symbol, z1, z2) -> np.ndarray:
    s = _sym_name(symbol)
    a = baseline.params.arrays
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if baseline.kind == "mlp_concat":
        return dc.mlp_numpy(a, f"{s}.f", np.concatenate([z1, z2], axis=-1), 2)
    g = dc.mlp_numpy(a, f"{s}.g", z1, 2) + dc.mlp_numpy(a, f"{s}.g", z2, 2)
    return dc.mlp_numpy(a, f"{s}.h", g, 2)


def baseline_graph(baseline, nodes, symbol, z1, z2):
    s = _sym_name(symbol)
    if baseline.kind == "mlp_concat":
        return dc.mlp(nodes, f"{s}.f", dc.concat([z1, z2], axis=-1), 2)
    g = dc.add(dc.mlp(nodes, f"{s}.g", z1, 2), dc.mlp(nodes, f"{s}.g", z2, 2))
    return dc.mlp(nodes, f"{s}.h", g, 2)


def baseline_realization(baseline: DirectBaseline) -> Realization:
    return Realization(
        lambda a, b: baseline_apply(baseline, "meet", a, b),
        lambda a, b: baseline_apply(baseline, "join", a, b),
        f"baseline[{baseline.kind}]",
    )


def predict(model, term: Term, latents) -> np.ndarray:
    """Predicted latent for either a transport model or a direct baseline."""
    if isinstance(model, DirectBaseline):
        return eval_term(term, baseline_realization(model), latents)
    return predict_latent(model, term, latents)


def model_id(model) -> str:
    if isinstance(model, DirectBaseline):
        return model.kind
    return model.pair.label


# --------------------------------------------------------------------------
# training


@dataclass
class TransportConfig:
    epochs: int = 10
    steps_per_epoch: int = 100
    batch_terms: int = 64
    batch_points: int = 256
    max_symbols: int = 10
    lr: float = 1e-3
    val_terms: int = 128
    val_points: int = 1024
    seed: int = 0
    num_layers: int = 2
    hidden: int = 128


@dataclass
class Instance:
    term: Term
    sets: np.ndarray  # dataset indices, sets[i] is x(i+1)


def sample_instance(rng, pool, max_symbols) -> Instance:
    n = int(rng.integers(1, max_symbols + 1))
    term = random_term(n, rng)
    sets = rng.choice(pool, size=max(variables(term)), replace=True)
    return Instance(term, sets)


def _eval_graph(term, op_fn, leaves):
    if isinstance(term, Var):
        return leaves[term.index - 1]
    a = _eval_graph(term.children[0], op_fn, leaves)
    b = _eval_graph(term.children[1], op_fn, leaves)
    return op_fn(term.symbol, a, b)


def _roots_graph(model, nodes, instances, latents):
    """Predicted latents (B, l) as a graph; latents are constants."""
    counts = [len(inst.sets) for inst in instances]
    allz = dc.const(np.concatenate([latents[inst.sets] for inst in instances]))
    offsets = np.concatenate([[0], np.cumsum(counts)])
    if isinstance(model, DirectBaseline):
        def op_fn(sym, a, b):
            return baseline_graph(model, nodes, sym, a, b)
        src = allz
    else:
        pair = model.pair

        def op_fn(sym, a, b):
            m = candidate_graph(pair.meet_op if sym == MEET else pair.join_op, a, b)
            return dc.straight_through(m, snap) if model.quantize else m
        src = phi_forward_graph(model, nodes, allz)
    roots = []
    for k, inst in enumerate(instances):
        leaves = [dc.take(src, int(offsets[k] + i)) for i in range(counts[k])]
        roots.append(_eval_graph(inst.term, op_fn, leaves))
    roots = dc.stack(roots)
    if isinstance(model, DirectBaseline):
        return roots
    return phi_inverse_graph(model, nodes, roots)


def _targets(dataset_pts, instances, points):
    inside, outside = dataset_pts
    out = np.empty(points.shape[:2], dtype=bool)
    for k, inst in enumerate(instances):
        ind = [batch_membership(inside[s], outside[s], points[k]) for s in inst.sets]
        out[k] = eval_term(inst.term, BOOLEAN, ind)
    return out


def transport_loss(model, nodes, embed: EmbedModel, instances, latents, points, targets):
    z = _roots_graph(model, nodes, instances, latents)
    frozen = embed.params.leaves(trainable=False)
    return dc.bce_with_logits(decoder_graph(embed, frozen, points, z), targets)


def _predict_batch(model, instances, latents):
    if isinstance(model, DirectBaseline):
        return np.stack([predict(model, i.term, latents[i.sets]) for i in instances])
    return np.stack([predict_latent_mirrored(model, i.term, latents[i.sets]) for i in instances])


def _train(model, embed, dataset, latents, cfg, adam):
    if len(latents) != len(dataset):
        raise ValueError("latents do not match dataset size")
    rng = np.random.default_rng([cfg.seed, 11])
    pts_all = dataset.padded_points()
    train = dataset.indices("train")
    val = dataset.indices("val")
    vrng = np.random.default_rng([cfg.seed, 12])
    val_inst = [sample_instance(vrng, val, cfg.max_symbols) for _ in range(cfg.val_terms)]
    val_pts = vrng.uniform(-1, 1, (cfg.val_terms, cfg.val_points, 2))
    val_tgt = _targets(pts_all, val_inst, val_pts)

    def val_loss():
        with np.errstate(all="ignore"):
            logits = decode_logits(embed, val_pts, _predict_batch(model, val_inst, latents))
            return dc.bce_numpy(logits, val_tgt)

    history = [{"epoch": -1, "train_loss": math.nan, "val_loss": val_loss()}]
    best, best_loss = model.params.copy(), history[0]["val_loss"]
    for epoch in range(cfg.epochs):
        losses = []
        for step in range(cfg.steps_per_epoch):
            inst = [sample_instance(rng, train, cfg.max_symbols) for _ in range(cfg.batch_terms)]
            pts = rng.uniform(-1, 1, (cfg.batch_terms, cfg.batch_points, 2))
            tgt = _targets(pts_all, inst, pts)
            nodes = model.params.leaves()
            with np.errstate(all="ignore"):
                loss = transport_loss(model, nodes, embed, inst, latents, pts, tgt)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            dc.backward(loss)
            grads = {k: n.grad if n.grad is not None else np.zeros_like(n.value) for k, n in nodes.items()}
            dc.adam_step(model.params, grads, adam)
            losses.append(float(loss.value))
        v = val_loss()
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": v})
        log.info("%s epoch %d train %.4f val %.4f", model_id(model), epoch, np.mean(losses), v)
        if v < best_loss:
            best, best_loss = model.params.copy(), v
    model.params = best
    return history


def train_transport(embed: EmbedModel, dataset: Dataset, latents, pair: MirroredPair,
                    cfg: TransportConfig | None = None):
    """Fit phi for ``pair``; returns ``(model, history)`` with the best-val weights."""
    cfg = TransportConfig() if cfg is None else cfg
    model = TransportModel.create(pair, embed.latent_dim, cfg.num_layers, cfg.hidden,
                                  rng=np.random.default_rng([cfg.seed, 10]))
    history = _train(model, embed, dataset, np.asarray(latents), cfg, dc.AdamConfig(lr=cfg.lr))
    return model, history


def train_baseline(embed: EmbedModel, dataset: Dataset, latents, kind: str,
                   cfg: TransportConfig | None = None):
    cfg = TransportConfig(lr=1e-4) if cfg is None else cfg
    model = DirectBaseline.create(kind, embed.latent_dim, rng=np.random.default_rng([cfg.seed, 10]))
    history = _train(model, embed, dataset, np.asarray(latents), cfg, dc.AdamConfig(lr=cfg.lr))
    return model, history


# --------------------------------------------------------------------------
# files


def save_model(model, path):
    if isinstance(model, DirectBaseline):
        header = [1, BASELINE_KINDS.index(model.kind), model.latent_dim, model.hidden]
    else:
        header = [0, CANDIDATES.index(model.pair.meet_op), CANDIDATES.index(model.pair.join_op),
                  model.latent_dim, model.num_layers, model.hidden, model.depth, int(model.quantize)]
    dc.save_arrays(path, {"__header__": np.array(header, dtype=np.float64), **model.params.arrays})


def load_model(path):
    arrays = dc.load_arrays(path)
    h = [int(v) for v in arrays.pop("__header__")]
    params = dc.ParamStore(arrays)
    if h[0] == 1:
        return DirectBaseline(params, BASELINE_KINDS[h[1]], h[2], h[3])
    pair = MirroredPair(CANDIDATES[h[1]], CANDIDATES[h[2]])
    return TransportModel(params, pair, h[3], h[4], h[5], h[6], bool(h[7]))
