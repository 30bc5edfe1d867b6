"""Two-stage harness: calibrate, gate, evaluate, report.

Scores follow the biometric convention: higher = more genuine, a sample is
accepted as genuine at threshold ``t`` when ``score >= t``. Gating removes
the *least* forensicable samples (lowest F) before the downstream classifier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import FormatError, RejectedInputError, UndefinedMetricError

REPORT_MAGIC = "#fanet-gate-report v1"
PLOT_MAGIC = "#fanet-plot-data v1"
GFLOP = 1e9


def calibrate_threshold(reference, t_f):
    """Linear-interpolation ``t_f`` quantile of reference F values; ``-inf`` at 0."""
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if ref.size == 0:
        raise RejectedInputError("threshold calibration needs a nonempty reference set")
    if not 0.0 <= t_f < 1.0:
        raise RejectedInputError("t_f must lie in [0, 1)")
    if t_f == 0.0:
        return -math.inf
    return float(np.quantile(ref, t_f))


@dataclass(frozen=True)
class GateConfig:
    t_f: float | None = None
    threshold: float | None = None

    def __post_init__(self):
        if (self.t_f is None) == (self.threshold is None):
            raise RejectedInputError("set exactly one of t_f (fraction mode) or threshold")
        if self.t_f is not None and not 0.0 <= self.t_f < 1.0:
            raise RejectedInputError("t_f must lie in [0, 1)")
        if self.threshold is not None and math.isnan(self.threshold):
            raise RejectedInputError("threshold must not be NaN")

    @property
    def mode(self):
        return "fraction" if self.t_f is not None else "threshold"


def n_rejected(n, t_f):
    # tolerance keeps 0.3 * 10 from flooring to 2
    return int(math.floor(t_f * n + 1e-9))


def gate(ids, scores, cfg):
    """Boolean accepted mask aligned with ``ids``."""
    s = np.asarray(scores, dtype=np.float64)
    ids = list(ids)
    if len(ids) != len(s):
        raise RejectedInputError("ids and scores are not aligned")
    accepted = np.ones(len(s), dtype=bool)
    if cfg.mode == "fraction":
        k = n_rejected(len(s), cfg.t_f)
        order = sorted(range(len(s)), key=lambda i: (s[i], ids[i]))
        accepted[order[:k]] = False
    else:
        accepted = ~(s < cfg.threshold)
    return accepted


def split(ids, scores, cfg):
    acc = gate(ids, scores, cfg)
    ids = list(ids)
    return [i for i, a in zip(ids, acc) if a], [i for i, a in zip(ids, acc) if not a]


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise RejectedInputError("scores and labels are not aligned")
    if not np.all(np.isin(y, (0, 1))):
        raise RejectedInputError("labels must be 0 (spoof) or 1 (genuine)")
    if not np.all(np.isfinite(s)):
        raise RejectedInputError("scores must be finite")
    if y.sum() == 0 or y.sum() == len(y):
        raise UndefinedMetricError("EER needs both genuine and spoof samples")
    return s, y


def operating_points(scores, labels):
    """Thresholds (distinct scores, then +inf) with their FAR and FRR."""
    s, y = _check_binary(scores, labels)
    gen = np.sort(s[y == 1])
    spf = np.sort(s[y == 0])
    thr = np.append(np.unique(s), np.inf)
    far = (len(spf) - np.searchsorted(spf, thr, side="left")) / len(spf)
    frr = np.searchsorted(gen, thr, side="left") / len(gen)
    return thr, far, frr


def interpolate_eer(far, frr):
    """FAR at the first bracket where FAR - FRR changes sign, interpolated linearly."""
    d = np.asarray(far) - np.asarray(frr)
    for k in range(len(d) - 1):
        if d[k] >= 0.0 and d[k + 1] <= 0.0:
            if d[k] == d[k + 1]:
                return float(far[k])
            lam = d[k] / (d[k] - d[k + 1])
            return float(far[k] + lam * (far[k + 1] - far[k]))
    raise AssertionError("FAR - FRR runs from +1 to -1, a crossing must exist")


def eer(scores, labels):
    _, far, frr = operating_points(scores, labels)
    return interpolate_eer(far, frr)


def remaining_ratios(accepted, labels):
    acc = np.asarray(accepted, dtype=bool)
    y = np.asarray(labels).astype(np.int64)
    n_og, n_os = int(np.sum(y == 1)), int(np.sum(y == 0))
    if n_og == 0 or n_os == 0:
        raise UndefinedMetricError("remaining ratios need genuine and spoof originals")
    return float(np.sum(acc & (y == 1)) / n_og), float(np.sum(acc & (y == 0)) / n_os)


def system_flops(o_fa, o_fi, t_f):
    if o_fa < 0 or o_fi < 0:
        raise RejectedInputError("operation counts must be nonnegative")
    if not 0.0 <= t_f <= 1.0:
        raise RejectedInputError("t_f must lie in [0, 1]")
    return o_fa + (1.0 - t_f) * o_fi


# ---------------------------------------------------------------------------
# downstream classifier interface

class DownstreamClassifier(Protocol):
    """Anything scoring samples by genuineness (higher = more genuine)."""

    gflops: float

    def score(self, table, ids) -> np.ndarray: ...


class ForensicHeadClassifier:
    """Bundled stub: the forensic extractor's own 2-way head on stored features."""

    def __init__(self, extractor):
        self.extractor = extractor
        self.gflops = extractor.network.flops() / GFLOP

    def score(self, table, ids):
        sub = table.subset(list(ids))
        if sub.forensic is None:
            raise RejectedInputError("the stub classifier needs forensic features")
        return self.extractor.genuine_probability(sub.forensic)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class SampleResult:
    id: str
    label: int
    f_score: float
    cls_score: float
    accepted: bool


@dataclass
class GateReport:
    mode: str
    t_f: float | None
    threshold: float | None
    eer_all: float
    eer_remaining: float | None
    eer_rejected: float | None
    r_rg: float
    r_rs: float
    n_og: int
    n_os: int
    n_rg: int
    n_rs: int
    o_fa: float
    o_fi: float
    flops_system: float
    unit: str = "sample"
    samples: list = field(default_factory=list)

    SCALARS = ("mode", "unit", "t_f", "threshold", "eer_all", "eer_remaining", "eer_rejected", "r_rg", "r_rs",
               "n_og", "n_os", "n_rg", "n_rs", "o_fa", "o_fi", "flops_system")

    def check(self):
        rej_g = sum(1 for s in self.samples if s.label == 1 and not s.accepted)
        rej_s = sum(1 for s in self.samples if s.label == 0 and not s.accepted)
        return self.n_rg + rej_g == self.n_og and self.n_rs + rej_s == self.n_os

    def to_tsv(self):
        lines = [REPORT_MAGIC, "field\tvalue"]
        for name in self.SCALARS:
            lines.append(f"{name}\t{_fmt(getattr(self, name))}")
        lines.append("#samples")
        lines.append("id\tlabel\tF\tclassifier\taccepted")
        for s in self.samples:
            lines.append(f"{s.id}\t{s.label}\t{float(s.f_score)!r}\t{float(s.cls_score)!r}\t{int(s.accepted)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text):
        lines = text.rstrip("\n").split("\n")
        if len(lines) < 2 or lines[0] != REPORT_MAGIC or lines[1] != "field\tvalue":
            raise FormatError("not a gate report")
        try:
            cut = lines.index("#samples")
        except ValueError:
            raise FormatError("gate report has no sample section") from None
        fields = dict(ln.split("\t", 1) for ln in lines[2:cut])
        kw = {}
        for name in cls.SCALARS:
            if name not in fields:
                raise FormatError(f"gate report lacks field {name!r}")
            kw[name] = _parse(name, fields[name])
        samples = []
        for ln in lines[cut + 2:]:
            sid, label, f, c, a = ln.split("\t")
            samples.append(SampleResult(sid, int(label), float(f), float(c), a == "1"))
        return cls(**kw, samples=samples)

    def to_table(self):
        def pct(v):
            return "n/a" if v is None else f"{100.0 * v:6.2f}%"
        gate_desc = f"T_F = {100 * self.t_f:.0f}%" if self.mode == "fraction" else f"F < {self.threshold:.6g}"
        rows = [
            f"gate            {gate_desc} (unit: {self.unit})",
            f"EER all         {pct(self.eer_all)}",
            f"EER remaining   {pct(self.eer_remaining)}",
            f"EER rejected    {pct(self.eer_rejected)}",
            f"R_rg            {self.r_rg:.4f}  ({self.n_rg}/{self.n_og} genuine kept)",
            f"R_rs            {self.r_rs:.4f}  ({self.n_rs}/{self.n_os} spoof kept)",
            f"O_FA            {self.o_fa:.4f} GFLOPs",
            f"O_FI            {self.o_fi:.4f} GFLOPs",
            f"O_S             {self.flops_system:.4f} GFLOPs",
        ]
        return "\n".join(rows) + "\n"


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _parse(name, raw):
    if raw == "NA":
        return None
    if name in ("mode", "unit"):
        return raw
    if name.startswith("n_"):
        return int(raw)
    return float(raw)


def group_scores(ids, labels, f_scores, cls_scores, groups):
    """Average frame scores per group (video); labels must agree within a group."""
    order, members = [], {}
    for i, g in enumerate(groups):
        if g not in members:
            members[g] = []
            order.append(g)
        members[g].append(i)
    labels = np.asarray(labels)
    out_labels, out_f, out_c = [], [], []
    from .quantifier import video_score

    for g in order:
        idx = members[g]
        lab = set(labels[idx].tolist())
        if len(lab) != 1:
            raise RejectedInputError(f"group {g!r} mixes genuine and spoof frames")
        out_labels.append(lab.pop())
        out_f.append(video_score(np.asarray(f_scores)[idx]))
        out_c.append(video_score(np.asarray(cls_scores)[idx]))
    return order, np.array(out_labels), np.array(out_f), np.array(out_c)


def evaluate(ids, labels, f_scores, cls_scores, cfg, *, groups=None, o_fa=0.0, o_fi=0.0):
    """Gate on F, then measure the downstream classifier on each partition."""
    ids = list(ids)
    labels = np.asarray(labels, dtype=np.int64)
    f_scores = np.asarray(f_scores, dtype=np.float64)
    cls_scores = np.asarray(cls_scores, dtype=np.float64)
    if not (len(ids) == len(labels) == len(f_scores) == len(cls_scores)):
        raise RejectedInputError("ids, labels and scores are not aligned")
    unit = "sample"
    if groups is not None and len(set(groups)) < len(ids):
        ids, labels, f_scores, cls_scores = group_scores(ids, labels, f_scores, cls_scores, list(groups))
        unit = "video"
    accepted = gate(ids, f_scores, cfg)
    try:
        eer_all = eer(cls_scores, labels)
    except UndefinedMetricError as exc:
        raise UndefinedMetricError(f"all samples: {exc}") from None
    try:
        eer_rem = eer(cls_scores[accepted], labels[accepted])
    except UndefinedMetricError as exc:
        raise UndefinedMetricError(f"remaining partition ({int(accepted.sum())} samples): {exc}") from None
    rejected = ~accepted
    rej_labels = labels[rejected]
    if rej_labels.size and 0 < rej_labels.sum() < rej_labels.size:
        eer_rej = eer(cls_scores[rejected], rej_labels)
    else:
        eer_rej = None
    r_rg, r_rs = remaining_ratios(accepted, labels)
    frac = cfg.t_f if cfg.mode == "fraction" else float(rejected.mean())
    samples = [SampleResult(i, int(l), float(f), float(c), bool(a))
               for i, l, f, c, a in zip(ids, labels, f_scores, cls_scores, accepted)]
    return GateReport(
        mode=cfg.mode, t_f=cfg.t_f, threshold=cfg.threshold, eer_all=eer_all, eer_remaining=eer_rem,
        eer_rejected=eer_rej, r_rg=r_rg, r_rs=r_rs,
        n_og=int(np.sum(labels == 1)), n_os=int(np.sum(labels == 0)),
        n_rg=int(np.sum(accepted & (labels == 1))), n_rs=int(np.sum(accepted & (labels == 0))),
        o_fa=float(o_fa), o_fi=float(o_fi), flops_system=system_flops(o_fa, o_fi, frac), unit=unit,
        samples=samples,
    )


def plot_data(f_scores, cls_scores, labels, t_fs=(0.0, 0.1, 0.2, 0.3), bins=20, groups=None, ids=None):
    """Text block with an F histogram per class and an EER-vs-T_F curve."""
    f = np.asarray(f_scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    ids = list(ids) if ids is not None else [f"{i:08d}" for i in range(len(f))]
    lo, hi = float(f.min()), float(f.max())
    edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
    hg, _ = np.histogram(f[y == 1], edges)
    hs, _ = np.histogram(f[y == 0], edges)
    lines = [PLOT_MAGIC, "#histogram", "bin_lo\tbin_hi\tgenuine\tspoof"]
    for k in range(bins):
        lines.append(f"{float(edges[k])!r}\t{float(edges[k + 1])!r}\t{hg[k]}\t{hs[k]}")
    lines += ["#curve", "t_f\teer_remaining\teer_rejected"]
    for t in t_fs:
        rep = evaluate(ids, y, f, cls_scores, GateConfig(t_f=t), groups=groups)
        lines.append(f"{float(t)!r}\t{_fmt(rep.eer_remaining)}\t{_fmt(rep.eer_rejected)}")
    return "\n".join(lines) + "\n"
