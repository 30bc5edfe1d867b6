"""Ground-truth score pairs (y_Q, y_F) for FANet training.

y_Q comes from a small quality regressor trained on a synthetic
degradation ladder (pseudo-MOS = 1 - level / (levels - 1)); y_F is the
genuine probability of the forensic extractor's 2-way head.

Scores file (UTF-8, tab separated)::

    #fanet-scores v1
    id	y_q	y_f	label
    img001	0.93	0.88	genuine

``label`` is ``genuine``, ``spoof`` or empty. Externally produced y_Q
values can be supplied in the same format.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .errors import FormatError, ModelNotReadyError, PartialCorpusError, RejectedInputError
from .featio import FORENSIC_DIM, QUALITY_DIM
from .iqa import quality_features
from .nn import DenseLayer, Network, SgdConfig, SgdState, learning_rate_at, mse_loss, sgd_step
from .parallel import parallel_map
from .synth import DEFAULT_LADDER, degrade

SCORES_MAGIC = "#fanet-scores v1"
SCORES_COLUMNS = ("id", "y_q", "y_f", "label")
LABEL_NAMES = {1: "genuine", 0: "spoof"}
QUALITY_HIDDEN = 16
QUALITY_SGD = SgdConfig(learning_rate=0.05, momentum=0.9, weight_decay=1e-4, decay_factor=5.0, decay_every=150)


@dataclass(frozen=True)
class ScorePair:
    y_q: float
    y_f: float
    label: int | None = None

    def __post_init__(self):
        for name in ("y_q", "y_f"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise RejectedInputError(f"{name}={v} is outside [0, 1]")
            object.__setattr__(self, name, v)
        if self.label is not None and self.label not in (0, 1):
            raise RejectedInputError("label must be 0 (spoof), 1 (genuine) or None")

    def as_array(self):
        return np.array([self.y_q, self.y_f])


# ---------------------------------------------------------------------------
# quality head

class QualityHead:
    """Standardize 94 quality features, then dense 16 relu, dense 1 sigmoid."""

    def __init__(self, network=None, mean=None, scale=None, *, trained=False):
        self.network = network
        self.mean = mean
        self.scale = scale
        self.trained = trained

    @classmethod
    def initialized(cls, seed=0, hidden=QUALITY_HIDDEN):
        rng = np.random.default_rng(seed)
        net = Network([DenseLayer(QUALITY_DIM, hidden, "relu", rng=rng),
                       DenseLayer(hidden, 1, "sigmoid", rng=rng)], (QUALITY_DIM,))
        return cls(net, np.zeros(QUALITY_DIM), np.ones(QUALITY_DIM))

    def _standardize(self, q):
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        if q.shape[1] != QUALITY_DIM:
            raise RejectedInputError(f"quality features must have {QUALITY_DIM} values, got {q.shape[1]}")
        return (q - self.mean) / self.scale

    def predict(self, q):
        if not self.trained or self.network is None:
            raise ModelNotReadyError("quality head has not been trained")
        return self.network.forward(self._standardize(q)).output[:, 0]

    def save(self, path):
        if self.network is None:
            raise ModelNotReadyError("quality head has not been trained")
        arrays = checkpoint.network_arrays(self.network) + [("mean", self.mean), ("scale", self.scale)]
        checkpoint.write(path, "quality-head", {"network": self.network.manifest(), "trained": self.trained},
                         arrays)

    @classmethod
    def load(cls, path):
        _, meta, arrays = checkpoint.read(path, expect_kind="quality-head")
        net = checkpoint.restore_network(meta["network"], arrays)
        return cls(net, arrays["mean"], arrays["scale"], trained=bool(meta.get("trained", True)))


def quality_score(head, q):
    return float(head.predict(q)[0])


def train_quality_head(features, targets, *, cfg=QUALITY_SGD, epochs=300, batch_size=32, seed=0):
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != QUALITY_DIM or len(x) != len(y) or len(x) < 2:
        raise RejectedInputError("need at least two aligned (94-dim feature, target) rows")
    head = QualityHead.initialized(seed)
    head.mean = x.mean(axis=0)
    head.scale = np.where(x.std(axis=0) > 1e-12, x.std(axis=0), 1.0)
    xs = head._standardize(x)
    net, state = head.network, SgdState()
    rng = np.random.default_rng(seed + 1)
    for epoch in range(epochs):
        lr = learning_rate_at(cfg, epoch)
        order = rng.permutation(len(xs))
        for start in range(0, len(xs), batch_size):
            idx = order[start:start + batch_size]
            _, grads = net.value_and_grad(mse_loss, (xs[idx], y[idx]))
            params, state = sgd_step(net.parameters(), grads, state, cfg, lr)
            net.set_parameters(params)
    head.trained = True
    return head


def head_mse(head, features, targets):
    return float(np.mean((head.predict(features) - np.asarray(targets, dtype=np.float64)) ** 2))


@dataclass
class QualityLadder:
    """Ladder rows: one per (base image, level)."""

    base_ids: list
    levels: np.ndarray
    features: np.ndarray
    targets: np.ndarray


def pseudo_mos(level, n_levels):
    return 1.0 - level / (n_levels - 1.0)


def _ladder_item(args):
    img, blur, noise, seed = args
    return quality_features(degrade(img, blur, noise, seed))


def build_quality_ladder(base_images, levels=DEFAULT_LADDER, *, seed=0, jobs=1):
    """Degrade every base image at every level and compute quality features."""
    levels = tuple(tuple(float(v) for v in lv) for lv in levels)
    if len(levels) < 2:
        raise RejectedInputError("a quality ladder needs at least two degradation levels")
    ids = sorted(base_images)
    if not ids:
        raise RejectedInputError("a quality ladder needs at least one base image")
    jobs_in, rows = [], []
    for i, bid in enumerate(ids):
        for k, (blur, noise) in enumerate(levels):
            jobs_in.append((np.asarray(base_images[bid], dtype=np.float64), blur, noise, seed * 1_000_003 + i * 97 + k))
            rows.append((bid, k))
    feats = np.array(parallel_map(_ladder_item, jobs_in, jobs))
    lv = np.array([k for _, k in rows])
    return QualityLadder([b for b, _ in rows], lv, feats, pseudo_mos(lv, len(levels)))


def split_ladder(ladder, holdout_fraction=0.25, seed=0):
    """Split by base image so no image appears on both sides."""
    bases = sorted(set(ladder.base_ids))
    rng = np.random.default_rng(seed)
    n_hold = max(1, int(round(holdout_fraction * len(bases))))
    held = set(rng.permutation(bases)[:n_hold].tolist())
    mask = np.array([b in held for b in ladder.base_ids])
    return ~mask, mask


# ---------------------------------------------------------------------------
# forensic score and supervision assembly

def forensic_score(extractor, f):
    if extractor is None or not extractor.ready or not extractor.trained:
        raise ModelNotReadyError("forensic head has not been trained")
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    if f.shape[1] != FORENSIC_DIM:
        raise RejectedInputError(f"forensic features must have {FORENSIC_DIM} values")
    p = extractor.genuine_probability(f)
    return float(p[0]) if p.shape[0] == 1 else p


def build_supervision(ids, table, quality_head, extractor, labels=None):
    """``{id: ScorePair}`` for ``ids`` using the features in ``table``."""
    index = table.index()
    missing = [i for i in ids if i not in index]
    if missing:
        raise PartialCorpusError(missing)
    if table.quality is None or table.forensic is None:
        raise PartialCorpusError(list(ids))
    rows = [index[i] for i in ids]
    yq = np.clip(quality_head.predict(table.quality[rows]), 0.0, 1.0)
    yf = np.clip(np.atleast_1d(forensic_score(extractor, table.forensic[rows])), 0.0, 1.0)
    labels = labels or {}
    return {sid: ScorePair(yq[k], yf[k], labels.get(sid)) for k, sid in enumerate(ids)}


def write_scores(path, pairs):
    lines = [SCORES_MAGIC, "\t".join(SCORES_COLUMNS)]
    for sid, p in pairs.items():
        label = "" if p.label is None else LABEL_NAMES[p.label]
        lines.append(f"{sid}\t{p.y_q!r}\t{p.y_f!r}\t{label}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scores(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(lines) < 2 or lines[0] != SCORES_MAGIC or tuple(lines[1].split("\t")) != SCORES_COLUMNS:
        raise FormatError(f"{path} is not a scores file (expected '{SCORES_MAGIC}' header)")
    names = {v: k for k, v in LABEL_NAMES.items()}
    out = {}
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split("\t")
        if len(parts) == 3:
            parts.append("")
        if len(parts) != 4 or parts[3] not in ("", *names):
            raise FormatError(f"scores line {lineno} is malformed")
        sid = parts[0]
        if sid in out:
            raise FormatError(f"scores file repeats id {sid!r}")
        try:
            out[sid] = ScorePair(float(parts[1]), float(parts[2]), names.get(parts[3]))
        except (ValueError, RejectedInputError) as exc:
            raise FormatError(f"scores line {lineno} ({sid!r}): {exc}") from None
    return out
