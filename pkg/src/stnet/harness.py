"""Metrics, the performance and self-consistency experiments, and CSV reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .algebra import equivalent_term, random_term, variables, Term
from .embed import EmbedModel, predicted_set_membership
from .mirrored import law_count as pair_law_count, law_row
from .setgen import Dataset, realize_term_on_points
from .transport import DirectBaseline, baseline_realization, model_id, predict

REPORT_COLUMNS = ("experiment", "model_id", "law_count", "ell_or_J", "metric", "value", "n", "seed")


def iou(a, b) -> float:
    """|a & b| / |a | b| over shared samples; NaN when the union is empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("memberships must cover the same points")
    union = np.count_nonzero(a | b)
    if union == 0:
        return math.nan
    return np.count_nonzero(a & b) / union


def accuracy(pred, true) -> float:
    pred = np.asarray(pred, dtype=bool)
    true = np.asarray(true, dtype=bool)
    if pred.shape != true.shape:
        raise ValueError("memberships must cover the same points")
    return float(np.mean(pred == true))


@dataclass
class EvalConfig:
    num_points: int = 10_000
    num_terms: int = 50
    max_symbols: int = 10
    j_max: int = 8
    seed: int = 0

    def __post_init__(self):
        if min(self.num_points, self.num_terms, self.max_symbols) < 1 or self.j_max < 0:
            raise ValueError("evaluation counts must be positive")


def model_law_count(model) -> int:
    if isinstance(model, DirectBaseline):
        return sum(law_row(baseline_realization(model), dim=model.latent_dim))
    return pair_law_count(model.pair)


@dataclass
class Row:
    experiment: str
    model_id: str
    law_count: int
    ell_or_J: str
    metric: str
    value: float
    n: int
    seed: int


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)  # (model_id, kind, ell_or_J) -> per-term values

    def add(self, *values):
        self.rows.append(Row(*values))

    def extend(self, other: "ExperimentReport"):
        self.rows.extend(other.rows)
        self.raw.update(other.raw)
        return self

    def select(self, **match) -> list:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def value(self, **match) -> float:
        rows = self.select(**match)
        if len(rows) != 1:
            raise LookupError(f"{len(rows)} rows match {match}")
        return rows[0].value

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.experiment, r.model_id, r.law_count, r.ell_or_J, r.metric,
                        format(r.value, ".17g"), r.n, r.seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ExperimentReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != REPORT_COLUMNS:
            raise ValueError(f"unexpected report header {header}")
        out = cls()
        for e, m, lc, x, metric, v, n, s in reader:
            out.add(e, m, int(lc), x, metric, float(v), int(n), int(s))
        return out


def _summaries(values):
    """(metric, value, n) rows for a list of per-term values; NaNs are excluded."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=np.float64)
    if len(v) == 0:
        return [(m, math.nan, 0) for m in ("mean", "median", "p20", "p80", "min")]
    return [
        ("mean", float(v.mean()), len(v)),
        ("median", float(np.median(v)), len(v)),
        ("p20", float(np.percentile(v, 20)), len(v)),
        ("p80", float(np.percentile(v, 80)), len(v)),
        ("min", float(v.min()), len(v)),
    ]


def sample_case(dataset: Dataset, num_symbols: int, rng, num_points: int):
    """A term, the test-set indices bound to its variables, and evaluation points."""
    term = random_term(num_symbols, rng)
    sets = rng.choice(dataset.indices("test"), size=max(variables(term)), replace=True)
    points = rng.uniform(-1.0, 1.0, (num_points, 2))
    return term, sets, points


def predicted_membership(model, embed: EmbedModel, term: Term, latents, sets, points):
    with np.errstate(all="ignore"):
        z = predict(model, term, latents[sets])
        return predicted_set_membership(embed, z, points)


def eval_performance(model, embed: EmbedModel, dataset: Dataset, latents, cfg: EvalConfig | None = None,
                     law_count: int | None = None) -> ExperimentReport:
    """IoU and accuracy against the exact set algebra, per term length and overall.

    Term ``t`` of length ``ell`` comes from ``default_rng([seed, ell, t])`` so
    every model evaluated with the same seed sees the same terms, sets and points.
    """
    cfg = EvalConfig() if cfg is None else cfg
    mid = model_id(model)
    lc = model_law_count(model) if law_count is None else law_count
    report = ExperimentReport()
    all_iou, all_acc = [], []
    for ell in range(1, cfg.max_symbols + 1):
        ious, accs = [], []
        for t in range(cfg.num_terms):
            rng = np.random.default_rng([cfg.seed, ell, t])
            term, sets, points = sample_case(dataset, ell, rng, cfg.num_points)
            truth = realize_term_on_points(term, [dataset.specs[i] for i in sets], points)
            pred = predicted_membership(model, embed, term, latents, sets, points)
            ious.append(iou(pred, truth))
            accs.append(accuracy(pred, truth))
        report.raw[(mid, "iou", str(ell))] = ious
        for metric, v, n in _summaries(ious):
            report.add("performance", mid, lc, str(ell), f"iou_{metric}", v, n, cfg.seed)
        report.add("performance", mid, lc, str(ell), "acc_mean", float(np.mean(accs)), len(accs), cfg.seed)
        all_iou += ious
        all_acc += accs
    report.raw[(mid, "iou", "all")] = all_iou
    for metric, v, n in _summaries(all_iou):
        report.add("performance", mid, lc, "all", f"iou_{metric}", v, n, cfg.seed)
    report.add("performance", mid, lc, "all", "acc_mean", float(np.mean(all_acc)), len(all_acc), cfg.seed)
    return report


def eval_consistency(model, embed: EmbedModel, dataset: Dataset, latents, cfg: EvalConfig | None = None,
                     law_count: int | None = None) -> ExperimentReport:
    """IoU between predictions for ``p`` and for ``equivalent_term(p, J)``, J = 0..j_max.

    Both predictions use the same latents and the same evaluation points.
    """
    cfg = EvalConfig() if cfg is None else cfg
    mid = model_id(model)
    lc = model_law_count(model) if law_count is None else law_count
    per_j = {j: [] for j in range(cfg.j_max + 1)}
    for t in range(cfg.num_terms):
        rng = np.random.default_rng([cfg.seed, 0, t])
        ell = int(rng.integers(1, cfg.max_symbols + 1))
        term, sets, points = sample_case(dataset, ell, rng, cfg.num_points)
        base = predicted_membership(model, embed, term, latents, sets, points)
        for j in per_j:
            q = equivalent_term(term, j, np.random.default_rng([cfg.seed, 1, t, j]))
            per_j[j].append(iou(predicted_membership(model, embed, q, latents, sets, points), base))
    report = ExperimentReport()
    for j, values in per_j.items():
        report.raw[(mid, "consistency", str(j))] = values
        for metric, v, n in _summaries(values):
            report.add("consistency", mid, lc, str(j), f"iou_{metric}", v, n, cfg.seed)
    return report


# --------------------------------------------------------------------------
# summaries


def law_iou_table(report: ExperimentReport):
    """``[(model_id, law_count, mean IoU)]`` over all term lengths, by law count descending."""
    rows = report.select(experiment="performance", ell_or_J="all", metric="iou_mean")
    return sorted(((r.model_id, r.law_count, r.value) for r in rows), key=lambda x: (-x[1], x[0]))


def spearman(xs, ys) -> float:
    if len(xs) < 2:
        return math.nan
    return float(spearmanr(xs, ys).statistic)


def trend_summary(report: ExperimentReport, exclude=("mlp_concat", "symmetric")):
    """Checks behind the law-count trend: Riesz vs low-law pairs, and rank correlation.

    The Riesz row is whichever pair uses min and max (in either order).
    """
    table = [t for t in law_iou_table(report) if t[0] not in exclude]
    by_id = {m: (lc, v) for m, lc, v in table}
    riesz = next(v for m, (lc, v) in by_id.items() if set(m.split(",")) == {"min", "max"})
    low = [v for m, (lc, v) in by_id.items() if lc <= 3]
    return {
        "riesz_iou": riesz,
        "riesz_beats_low": all(riesz >= v for v in low),
        "spearman": spearman([lc for _, lc, _ in table], [v for *_, v in table]),
        "table": table,
    }


def render_summary(report: ExperimentReport) -> str:
    out = []
    perf = law_iou_table(report)
    if perf:
        out.append("performance (mean IoU over all term lengths)")
        out.append(f"{'model':<20} {'laws':>4} {'iou':>8}")
        out += [f"{m:<20} {lc:>4} {v:>8.4f}" for m, lc, v in perf]
        pairs = [(lc, v) for m, lc, v in perf if m not in ("mlp_concat", "symmetric")]
        if len(pairs) >= 2:
            out.append(f"spearman(law count, iou) over pairs: {spearman(*zip(*pairs)):.3f}")
    cons = report.select(experiment="consistency", metric="iou_median")
    if cons:
        if out:
            out.append("")
        js = sorted({int(r.ell_or_J) for r in cons})
        models = sorted({r.model_id for r in cons})
        out.append("self-consistency (median IoU by J)")
        out.append(f"{'model':<20} " + " ".join(f"{j:>6}" for j in js))
        for m in models:
            vals = {int(r.ell_or_J): r.value for r in cons if r.model_id == m}
            out.append(f"{m:<20} " + " ".join(f"{vals.get(j, math.nan):>6.3f}" for j in js))
    return "\n".join(out) + "\n"


def plot_data(report: ExperimentReport) -> str:
    """Long-format series (x = ell or J) with mean, median and the 20-80 band."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "model_id", "law_count", "x", "mean", "median", "p20", "p80"])
    keys = []
    for r in report.rows:
        k = (r.experiment, r.model_id, r.law_count, r.ell_or_J)
        if r.ell_or_J != "all" and k not in keys:
            keys.append(k)
    for e, m, lc, x in keys:
        vals = {r.metric: r.value for r in report.select(experiment=e, model_id=m, ell_or_J=x)}
        w.writerow([e, m, lc, x] + [format(vals.get(f"iou_{s}", math.nan), ".17g")
                                     for s in ("mean", "median", "p20", "p80")])
    return buf.getvalue()
