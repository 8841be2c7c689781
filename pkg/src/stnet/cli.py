"""Command-line entry point.

Every subcommand accepts ``--seed`` and ``--config FILE``.  The config file
holds flat ``key = value`` lines (``#`` starts a comment); keys are option
names with dashes or underscores.  Flags given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import embed as em
from . import harness as hs
from . import mirrored as mr
from . import setgen as sg
from . import transport as tp

log = logging.getLogger("stnet")


def read_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat key=value defaults file")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stnet", description="Latent set-algebra transport workbench")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate a random set dataset")
    _common(p)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--res", type=int, default=32)
    p.add_argument("--out", default="data.stds")

    p = sub.add_parser("check-laws", help="law matrix of all candidate pairs")
    _common(p)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--preset", choices=("default", "float32"), default="default",
                   help="float32: single precision with per-coordinate tolerance")
    p.add_argument("--out", default="laws.csv")

    p = sub.add_parser("train-embed", help="train the grid autoencoder")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="embed.stnw")
    p.add_argument("--latents-out", default="latents.stlz")
    p.add_argument("--latent-dim", type=int, default=64)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-3)

    for name, what in (("train-transport", "learn phi for a mirrored pair"),
                       ("train-baseline", "train a direct-parameterization baseline")):
        p = sub.add_parser(name, help=what)
        _common(p)
        if name == "train-transport":
            p.add_argument("--pair", required=True, help="meet,join e.g. min,add")
            p.add_argument("--lr", type=float, default=1e-3)
        else:
            p.add_argument("--kind", required=True, choices=tp.BASELINE_KINDS)
            p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--data", required=True)
        p.add_argument("--embed", required=True)
        p.add_argument("--latents", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--epochs", type=int, default=10)
        p.add_argument("--steps", type=int, default=100, help="steps per epoch")
        p.add_argument("--batch-terms", type=int, default=64)
        p.add_argument("--max-symbols", type=int, default=10)

    for name, what in (("eval-iou", "IoU against exact set algebra"),
                       ("eval-consistency", "self-consistency under law rewrites")):
        p = sub.add_parser(name, help=what)
        _common(p)
        p.add_argument("--models", nargs="+", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--embed", required=True)
        p.add_argument("--latents", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--points", type=int, default=10_000)
        p.add_argument("--num-terms", type=int, default=50 if name == "eval-iou" else 100)
        p.add_argument("--max-symbols", type=int, default=10)
        p.add_argument("--j-max", type=int, default=8)

    p = sub.add_parser("report", help="summarize report CSVs")
    _common(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", help="summary text file (default stdout)")
    p.add_argument("--plot-data", help="write long-format plot data CSV")
    return ap


def parse_args(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        conf = read_config(args.config)
        sub = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(conf) - set(known))
        if unknown:
            ap.error(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for k, v in conf.items():
            a = known[k]
            if a.nargs in ("+", "*"):
                defaults[k] = [a.type(x) if a.type else x for x in v.split()]
            else:
                defaults[k] = a.type(v) if a.type else v
        sub.set_defaults(**defaults)
        args = ap.parse_args(argv)
    return args


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_gen_data(a):
    ds = sg.gen_dataset(a.n, a.res, a.seed)
    sg.save_dataset(ds, a.out)
    log.info("wrote %d sets at resolution %d to %s", a.n, a.res, a.out)


def cmd_check_laws(a):
    kw = dict(mr.FLOAT32_PRESET) if a.preset == "float32" else dict(dim=a.dim, num_samples=a.samples, tol=a.tol)
    t = time.perf_counter()
    lm = mr.law_matrix(seed=a.seed, **kw)
    _write(a.out, lm.to_csv())
    bad = lm.mismatches()
    print(f"{len(lm.pairs)} pairs checked in {time.perf_counter() - t:.2f}s; "
          f"{len(bad)} rows differ from the reference table")
    for pair, expected, got in bad:
        exp = "".join("1" if b else "0" for b in expected)
        print(f"  {pair.label}: expected {exp} got {''.join('1' if b else '0' for b in got)}")


def cmd_train_embed(a):
    ds = sg.load_dataset(a.data)
    cfg = em.EmbedConfig(latent_dim=a.latent_dim, resolution=ds.resolution, epochs=a.epochs,
                         lr=a.lr, weight_decay=a.weight_decay, seed=a.seed)
    model = em.train_autoencoder(ds, cfg)
    em.save_embed(model, a.out)
    em.save_latents(em.encode_dataset(model, ds), a.latents_out)


def _train_cfg(a):
    return tp.TransportConfig(epochs=a.epochs, steps_per_epoch=a.steps, batch_terms=a.batch_terms,
                              max_symbols=a.max_symbols, lr=a.lr, seed=a.seed)


def _load_inputs(a):
    ds = sg.load_dataset(a.data)
    embed = em.load_embed(a.embed)
    latents = em.load_latents(a.latents)
    if len(latents) != len(ds):
        raise SystemExit(f"latents file has {len(latents)} rows, dataset has {len(ds)}")
    return ds, embed, latents


def cmd_train_transport(a):
    ds, embed, latents = _load_inputs(a)
    model, _ = tp.train_transport(embed, ds, latents, mr.MirroredPair.parse(a.pair), _train_cfg(a))
    tp.save_model(model, a.out)


def cmd_train_baseline(a):
    ds, embed, latents = _load_inputs(a)
    model, _ = tp.train_baseline(embed, ds, latents, a.kind, _train_cfg(a))
    tp.save_model(model, a.out)


def _eval(a, fn):
    ds, embed, latents = _load_inputs(a)
    cfg = hs.EvalConfig(num_points=a.points, num_terms=a.num_terms, max_symbols=a.max_symbols,
                        j_max=a.j_max, seed=a.seed)
    report = hs.ExperimentReport()
    for path in a.models:
        report.extend(fn(tp.load_model(path), embed, ds, latents, cfg))
    _write(a.out, report.to_csv())


def cmd_eval_iou(a):
    _eval(a, hs.eval_performance)


def cmd_eval_consistency(a):
    _eval(a, hs.eval_consistency)


def cmd_report(a):
    report = hs.ExperimentReport()
    for path in a.inputs:
        with open(path, encoding="utf-8") as fh:
            report.extend(hs.ExperimentReport.from_csv(fh.read()))
    text = hs.render_summary(report)
    if a.out:
        _write(a.out, text)
    else:
        sys.stdout.write(text)
    if a.plot_data:
        _write(a.plot_data, hs.plot_data(report))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "check-laws": cmd_check_laws,
    "train-embed": cmd_train_embed,
    "train-transport": cmd_train_transport,
    "train-baseline": cmd_train_baseline,
    "eval-iou": cmd_eval_iou,
    "eval-consistency": cmd_eval_consistency,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore")
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, LookupError) as exc:
        print(f"stnet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
