"""FANet: map (quality, forensic) features to a 2-D score point and measure
its forensicability against three class centers.

Classes and their initial centers (quality, forensic)::

    0 high_positive  e1 = (1, 1)
    1 high_negative  e2 = (1, 0)
    2 low            e3 = (0, 0.5)

Kernel ``K_c = exp(-||lambda_c * (y_hat - e_c)||^2 / (2 sigma^2))``; the
loss is the per-class binary cross-entropy of the kernels against the
one-hot label; the score is ``F = beta (1 - K_3) + (1 - beta) |D_1 - D_2|``.
Centers follow an exponential moving average of their members' predictions
instead of receiving gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .errors import (FormatError, ModelNotReadyError, RejectedInputError,
                     TrainingDivergedError, TrainingFailedError)
from .featio import FORENSIC_DIM, MODEL_INPUT_DIM, QUALITY_DIM
from .nn import DenseLayer, Network, SgdConfig, SgdState, learning_rate_at, sgd_step

HIGH_POSITIVE, HIGH_NEGATIVE, LOW = 0, 1, 2
CLASS_NAMES = ("high_positive", "high_negative", "low")
INITIAL_CENTERS = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 0.5]])
ABLATIONS = ("full", "no_low_class", "random_centers", "quality_only")
K_CLAMP = 1e-12
SCORES_MAGIC = "#fanet-forensicability v1"


def _count_low(n, low_fraction):
    # guard against 0.3 * 10 = 3.0000000000000004
    return min(n, max(0, math.ceil(low_fraction * n - 1e-9)))


def assign_labels(points, centers=INITIAL_CENTERS, low_fraction=0.30, ids=None):
    """Forensicability class per score point.

    The ``ceil(low_fraction * n)`` points closest to the low center (stable
    sort on (distance, id)) are ``low``; every other point goes to the nearer
    of the two high centers, ties to ``high_positive``. With only two
    centers there is no low class.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.size == 0:
        raise RejectedInputError("cannot label an empty set of score pairs")
    if pts.shape[1] != 2:
        raise RejectedInputError("score points must be 2-D")
    centers = np.asarray(centers, dtype=np.float64)
    n = len(pts)
    d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
    labels = np.where(d[:, 0] <= d[:, 1], HIGH_POSITIVE, HIGH_NEGATIVE)
    if len(centers) == 3:
        if not 0.0 < low_fraction < 1.0:
            raise RejectedInputError("low_fraction must lie in (0, 1)")
        keys = list(ids) if ids is not None else list(range(n))
        if len(keys) != n:
            raise RejectedInputError("ids must align with score pairs")
        order = sorted(range(n), key=lambda i: (d[i, 2], keys[i]))
        labels[order[:_count_low(n, low_fraction)]] = LOW
    return labels


def rbf_kernel(y_hat, center, lam, sigma):
    if sigma <= 0:
        raise RejectedInputError("kernel size sigma must be positive")
    diff = np.asarray(lam, dtype=np.float64) * (np.asarray(y_hat, dtype=np.float64) - np.asarray(center))
    return np.exp(-np.sum(diff**2, axis=-1) / (2.0 * sigma**2))


def kernels_and_grads(y_hat, centers, lam, sigma):
    """Kernels ``(n, C)`` with their derivatives w.r.t. ``y_hat`` and ``lam``.

    ``dk_dy[i, c, d] = -K lam_cd^2 (y_id - e_cd) / sigma^2``,
    ``dk_dlam[i, c, d] = -K lam_cd (y_id - e_cd)^2 / sigma^2``.
    """
    diff = y_hat[:, None, :] - centers[None, :, :]
    k = np.exp(-np.sum((lam[None] * diff) ** 2, axis=2) / (2.0 * sigma**2))
    dk_dy = -k[..., None] * lam[None] ** 2 * diff / sigma**2
    dk_dlam = -k[..., None] * lam[None] * diff**2 / sigma**2
    return k, dk_dy, dk_dlam


def loss_from_kernels(k, labels):
    """Per-sample loss ``(n,)`` and ``dL/dK`` (zero where the clamp is active)."""
    onehot = np.zeros_like(k)
    onehot[np.arange(len(labels)), labels] = 1.0
    kc = np.clip(k, K_CLAMP, 1.0 - K_CLAMP)
    loss = -np.sum(onehot * np.log(kc) + (1.0 - onehot) * np.log(1.0 - kc), axis=1)
    inside = (k > K_CLAMP) & (k < 1.0 - K_CLAMP)
    dl_dk = np.where(inside, -onehot / kc + (1.0 - onehot) / (1.0 - kc), 0.0)
    return loss, dl_dk


def fanet_loss(y_hat, label, centers, lam=None, sigma=0.1):
    """Eq.-style loss of one score point (or a batch; returns per-sample values)."""
    centers = np.asarray(centers, dtype=np.float64)
    lam = np.ones_like(centers) if lam is None else np.asarray(lam, dtype=np.float64)
    y = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    k, _, _ = kernels_and_grads(y, centers, lam, sigma)
    loss, _ = loss_from_kernels(k, labels)
    return float(loss[0]) if loss.shape == (1,) else loss


# ---------------------------------------------------------------------------
# centers

@dataclass
class CenterSet:
    centers: np.ndarray
    lam: np.ndarray
    sigma: float = 0.1
    eta: float = 0.9
    m: np.ndarray = None
    n_acc: np.ndarray = None

    def __post_init__(self):
        self.centers = np.array(self.centers, dtype=np.float64)
        self.lam = np.array(self.lam, dtype=np.float64)
        if self.centers.ndim != 2 or self.centers.shape[1] != 2 or self.lam.shape != self.centers.shape:
            raise RejectedInputError("centers and lambda must both be (C, 2)")
        if not self.sigma > 0:
            raise RejectedInputError("sigma must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise RejectedInputError("eta must lie in [0, 1]")
        if self.m is None:
            self.m = self.centers.copy()
        if self.n_acc is None:
            self.n_acc = np.ones(len(self.centers))

    @classmethod
    def initial(cls, n_classes=3, *, sigma=0.1, eta=0.9, random=False, seed=0):
        if random:
            centers = np.random.default_rng(seed).standard_normal((n_classes, 2))
        else:
            centers = INITIAL_CENTERS[:n_classes]
        return cls(centers, np.ones((n_classes, 2)), sigma, eta)

    def copy(self):
        return CenterSet(self.centers.copy(), self.lam.copy(), self.sigma, self.eta,
                         self.m.copy(), self.n_acc.copy())


def update_centers(centers, y_hat, labels, eta=None):
    """EMA update: ``m <- eta m + (1-eta) sum y``, ``N <- eta N + (1-eta) n``,
    ``e = m / N``. Classes absent from the batch keep their state."""
    eta = centers.eta if eta is None else eta
    y = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    out = centers.copy()
    for c in range(len(out.centers)):
        members = labels == c
        count = int(members.sum())
        if count == 0:
            continue
        out.m[c] = eta * out.m[c] + (1.0 - eta) * y[members].sum(axis=0)
        out.n_acc[c] = eta * out.n_acc[c] + (1.0 - eta) * count
        if out.n_acc[c] > 0:
            out.centers[c] = out.m[c] / out.n_acc[c]
    return out


# ---------------------------------------------------------------------------
# model

@dataclass(frozen=True)
class FanetConfig:
    sgd: SgdConfig = field(default_factory=SgdConfig)
    epochs: int = 50
    batch_size: int = 128
    sigma: float = 0.1
    beta: float = 0.5
    eta: float = 0.9
    low_fraction: float = 0.30
    ablation: str = "full"
    hidden: int = 0
    seed: int = 0
    min_class_size: int = 3

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise RejectedInputError(f"ablation must be one of {ABLATIONS}")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 0:
            raise RejectedInputError("epochs and batch_size must be positive, hidden nonnegative")
        if not 0.0 <= self.beta <= 1.0:
            raise RejectedInputError("beta must lie in [0, 1]")
        if not 0.0 <= self.eta <= 1.0:
            raise RejectedInputError("eta must lie in [0, 1]")
        if not self.sigma > 0:
            raise RejectedInputError("sigma must be positive")
        if not 0.0 < self.low_fraction < 1.0:
            raise RejectedInputError("low_fraction must lie in (0, 1)")

    def with_overrides(self, **kw):
        return replace(self, **kw)


def _smapnet(n_in, hidden, rng):
    if hidden:
        layers = [DenseLayer(n_in, hidden, "relu", rng=rng), DenseLayer(hidden, 1, "sigmoid", rng=rng)]
    else:
        layers = [DenseLayer(n_in, 1, "sigmoid", rng=rng)]
    return Network(layers, (n_in,))


class FanetModel:
    """SMapNet-Q (94 -> 1) and SMapNet-F (128 -> 1) plus the center set."""

    def __init__(self, net_q, net_f, centers, *, beta=0.5, ablation="full", mean=None, scale=None,
                 trained=False):
        if ablation not in ABLATIONS:
            raise RejectedInputError(f"ablation must be one of {ABLATIONS}")
        self.net_q = net_q
        self.net_f = net_f
        self.centers = centers
        self.beta = float(beta)
        self.ablation = ablation
        self.mean = np.zeros(MODEL_INPUT_DIM) if mean is None else np.asarray(mean, dtype=np.float64)
        self.scale = np.ones(MODEL_INPUT_DIM) if scale is None else np.asarray(scale, dtype=np.float64)
        self.trained = trained

    @classmethod
    def initialized(cls, cfg=None):
        cfg = cfg or FanetConfig()
        rng = np.random.default_rng(cfg.seed)
        net_q = _smapnet(QUALITY_DIM, cfg.hidden, rng)
        net_f = _smapnet(FORENSIC_DIM, cfg.hidden, rng)
        n_classes = 2 if cfg.ablation == "no_low_class" else 3
        centers = CenterSet.initial(n_classes, sigma=cfg.sigma, eta=cfg.eta,
                                    random=cfg.ablation == "random_centers", seed=cfg.seed + 7)
        return cls(net_q, net_f, centers, beta=cfg.beta, ablation=cfg.ablation)

    @property
    def has_low_class(self):
        return len(self.centers.centers) == 3

    # -- parameters / gradients ------------------------------------------
    def parameters(self):
        return self.net_q.parameters() + self.net_f.parameters() + [self.centers.lam]

    def set_parameters(self, values):
        values = list(values)
        nq, nf = len(self.net_q.parameters()), len(self.net_f.parameters())
        self.net_q.set_parameters(values[:nq])
        self.net_f.set_parameters(values[nq:nq + nf])
        self.centers.lam = np.asarray(values[nq + nf], dtype=np.float64)

    def _inputs(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != MODEL_INPUT_DIM:
            raise RejectedInputError(f"model input must have {MODEL_INPUT_DIM} values, got {x.shape[1]}")
        xs = (x - self.mean) / self.scale
        q, f = xs[:, :QUALITY_DIM], xs[:, QUALITY_DIM:]
        if self.ablation == "quality_only":
            f = np.zeros_like(f)
        return q, f

    def _forward(self, x):
        q, f = self._inputs(x)
        acts_q, acts_f = self.net_q.forward(q), self.net_f.forward(f)
        y_hat = np.hstack([acts_q.output, acts_f.output])
        return y_hat, acts_q, acts_f

    def predict(self, x):
        """Score points ``y_hat`` of shape ``(n, 2)``."""
        return self._forward(x)[0]

    def loss_and_grads(self, x, labels):
        """Mean loss, parameter grads aligned with ``parameters()``, and dL/dx."""
        labels = np.asarray(labels, dtype=np.int64)
        y_hat, acts_q, acts_f = self._forward(x)
        c = self.centers
        k, dk_dy, dk_dlam = kernels_and_grads(y_hat, c.centers, c.lam, c.sigma)
        per_sample, dl_dk = loss_from_kernels(k, labels)
        n = len(labels)
        dl_dy = np.einsum("nc,ncd->nd", dl_dk, dk_dy) / n
        dl_dlam = np.einsum("nc,ncd->cd", dl_dk, dk_dlam) / n
        gq, dq = self.net_q.backward(acts_q, dl_dy[:, :1])
        gf, df = self.net_f.backward(acts_f, dl_dy[:, 1:])
        if self.ablation == "quality_only":
            df = np.zeros_like(df)
        dx = np.hstack([dq, df]) / self.scale
        return float(per_sample.mean()), gq + gf + [dl_dlam], dx

    def value_and_grad(self, loss_fn, batch):
        """Hook for ``nn.grad_check``; ``loss_fn`` is ignored (the loss is fixed)."""
        x, labels = batch
        loss, grads, _ = self.loss_and_grads(x, labels)
        return loss, grads

    def loss(self, x, labels):
        return self.loss_and_grads(x, labels)[0]

    # -- scoring ------------------------------------------------------------
    def _require_trained(self):
        if not self.trained:
            raise ModelNotReadyError("FANet model has not been trained or loaded")

    def score_points(self, y_hat):
        """Forensicability of score points under the current centers."""
        y = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
        c = self.centers
        d1 = np.linalg.norm(y - c.centers[0], axis=1)
        d2 = np.linalg.norm(y - c.centers[1], axis=1)
        gap = np.abs(d1 - d2)
        if not self.has_low_class:
            return gap
        k3 = rbf_kernel(y, c.centers[2], c.lam[2], c.sigma)
        return self.beta * (1.0 - k3) + (1.0 - self.beta) * gap

    def score(self, x):
        self._require_trained()
        return self.score_points(self.predict(x))

    def flops(self):
        return self.net_q.flops() + self.net_f.flops()

    # -- persistence ------------------------------------------------------
    def save(self, path, meta=None):
        c = self.centers
        meta = dict(meta or {})
        meta.update({"net_q": self.net_q.manifest(), "net_f": self.net_f.manifest(), "ablation": self.ablation,
                     "trained": self.trained})
        arrays = (checkpoint.network_arrays(self.net_q, "q.") + checkpoint.network_arrays(self.net_f, "f.")
                  + [("centers", c.centers), ("lambda", c.lam), ("m", c.m), ("n_acc", c.n_acc),
                     ("sigma", np.array([c.sigma])), ("eta", np.array([c.eta])),
                     ("beta", np.array([self.beta])), ("mean", self.mean), ("scale", self.scale)])
        checkpoint.write(path, "fanet", meta, arrays)

    @classmethod
    def load(cls, path):
        _, meta, a = checkpoint.read(path, expect_kind="fanet")
        try:
            net_q = checkpoint.restore_network(meta["net_q"], a, "q.")
            net_f = checkpoint.restore_network(meta["net_f"], a, "f.")
            centers = CenterSet(a["centers"], a["lambda"], float(a["sigma"][0]), float(a["eta"][0]),
                                a["m"], a["n_acc"])
            return cls(net_q, net_f, centers, beta=float(a["beta"][0]), ablation=meta["ablation"],
                       mean=a["mean"], scale=a["scale"], trained=bool(meta.get("trained", True)))
        except KeyError as exc:
            raise FormatError(f"FANet checkpoint lacks {exc}") from None


def forensicability_score(model, features):
    s = model.score(features)
    return float(s[0]) if np.ndim(features) == 1 else s


def video_score(frame_scores):
    s = np.asarray(list(frame_scores), dtype=np.float64)
    if s.size == 0:
        raise RejectedInputError("a video needs at least one frame score")
    return float(s.mean())


# ---------------------------------------------------------------------------
# training (Algorithm 1)

@dataclass
class TrainResult:
    model: FanetModel
    labels: np.ndarray
    epoch_loss: list


def train_fanet(features, supervision, cfg=None, *, ids=None):
    """Label once from the supervision pairs, then alternate SGD steps on
    the SMapNets and lambda with EMA center updates."""
    cfg = cfg or FanetConfig()
    x = np.asarray(features, dtype=np.float64)
    sup = np.asarray([[p.y_q, p.y_f] if hasattr(p, "y_q") else p for p in supervision], dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != MODEL_INPUT_DIM:
        raise RejectedInputError(f"features must be (n, {MODEL_INPUT_DIM})")
    if len(x) != len(sup):
        raise RejectedInputError("features and supervision are not aligned")
    model = FanetModel.initialized(cfg)
    labels = assign_labels(sup, model.centers.centers, cfg.low_fraction, ids)
    counts = np.bincount(labels, minlength=len(model.centers.centers))
    if counts.min() < cfg.min_class_size:
        detail = ", ".join(f"{CLASS_NAMES[c]}={counts[c]}" for c in range(len(counts)))
        raise TrainingFailedError(f"class collapse: fewer than {cfg.min_class_size} samples in a class ({detail})")
    model.mean = x.mean(axis=0)
    sd = x.std(axis=0)
    model.scale = np.where(sd > 1e-12, sd, 1.0)

    rng = np.random.default_rng(cfg.seed + 1)
    state = SgdState()
    history = []
    for epoch in range(cfg.epochs):
        lr = learning_rate_at(cfg.sgd, epoch)
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            y_hat = model.predict(x[idx])
            loss, grads, _ = model.loss_and_grads(x[idx], labels[idx])
            params, state = sgd_step(model.parameters(), grads, state, cfg.sgd, lr)
            model.set_parameters(params)
            model.centers = update_centers(model.centers, y_hat, labels[idx])
            total += loss * len(idx)
        if not (math.isfinite(total) and np.all(np.isfinite(model.centers.centers))):
            raise TrainingDivergedError(f"training diverged in epoch {epoch}")
        history.append(total / len(x))
    model.trained = True
    return TrainResult(model, labels, history)


# ---------------------------------------------------------------------------
# forensicability scores file

def write_fa_scores(path, ids, scores, y_hat):
    lines = [SCORES_MAGIC, "id\tF\tyq_hat\tyf_hat"]
    for sid, f, (q, g) in zip(ids, scores, y_hat):
        lines.append(f"{sid}\t{float(f)!r}\t{float(q)!r}\t{float(g)!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_fa_scores(path):
    """``{id: (F, yq_hat, yf_hat)}`` in file order."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(lines) < 2 or lines[0] != SCORES_MAGIC:
        raise FormatError(f"{path} is not a forensicability scores file")
    out = {}
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"line {lineno} of {path} has {len(parts)} fields, expected 4")
        try:
            out[parts[0]] = tuple(float(v) for v in parts[1:])
        except ValueError:
            raise FormatError(f"line {lineno} of {path} has a non-numeric value") from None
    return out
