"""Forensic feature extractor: a 5-conv + 3-dense CNN whose penultimate
(128-unit) activation is the forensic feature vector.

Layer stack for an ``S x S`` gray input::

    conv 3x3/2 16 -> conv 3x3/2 32 -> conv 3x3/2 64 -> conv 3x3/2 64
    -> conv 3x3/2 64 -> flatten -> dense 4096 -> dense 128 -> dense 2

All hidden layers use relu. The 2-way head gives logits for
(spoof, genuine); its softmax genuine probability is the forensic score.
"""
from __future__ import annotations

import numpy as np

from . import checkpoint
from .errors import ModelNotReadyError, RejectedInputError
from .featio import FORENSIC_DIM, FeatureTable, read_features, write_features
from .imageops import as_gray, resize
from .nn import (ConvLayer, DenseLayer, Flatten, Network, SgdConfig, SgdState,
                 learning_rate_at, sgd_step, softmax, softmax_cross_entropy)

DEFAULT_INPUT_SIZE = 128
CONV_CHANNELS = (16, 32, 64, 64, 64)
CONV_STRIDES = (2, 2, 2, 2, 2)
HIDDEN_DIM = 4096
# pixel gain after centering; gives early layers usable gradients at lr 0.01
INPUT_GAIN = 4.0
GENUINE = 1
SPOOF = 0


def build_network(input_size=DEFAULT_INPUT_SIZE, *, seed=0, init="auto", hidden_dim=HIDDEN_DIM):
    if int(input_size) < 32:
        raise RejectedInputError("extractor input size must be at least 32")
    rng = np.random.default_rng(seed)
    layers, in_ch = [], 1
    for ch, stride in zip(CONV_CHANNELS, CONV_STRIDES):
        layers.append(ConvLayer(in_ch, ch, 3, stride, 1, "relu", rng=rng, init=init))
        in_ch = ch
    layers.append(Flatten())
    shape = (1, input_size, input_size)
    for layer in layers:
        shape = layer.output_shape(shape)
    layers += [
        DenseLayer(shape[0], hidden_dim, "relu", rng=rng, init=init),
        DenseLayer(hidden_dim, FORENSIC_DIM, "relu", rng=rng, init=init),
        DenseLayer(FORENSIC_DIM, 2, "identity", rng=rng, init=init),
    ]
    return Network(layers, (1, input_size, input_size))


class ForensicExtractor:
    """Wraps the CNN; ``network is None`` means nothing was trained or loaded."""

    def __init__(self, network=None, *, trained=False):
        self.network = network
        self.trained = trained

    @classmethod
    def initialized(cls, input_size=DEFAULT_INPUT_SIZE, *, seed=0, init="auto", hidden_dim=HIDDEN_DIM):
        return cls(build_network(input_size, seed=seed, init=init, hidden_dim=hidden_dim))

    @property
    def ready(self):
        return self.network is not None

    def _require(self):
        if self.network is None:
            raise ModelNotReadyError("forensic extractor has not been trained or loaded")
        return self.network

    @property
    def input_size(self):
        return self._require().input_shape[1]

    def prepare(self, images):
        """Gray, resized, centered and amplified ``(n, 1, S, S)`` batch."""
        s = self.input_size
        out = np.empty((len(images), 1, s, s))
        for i, img in enumerate(images):
            px = as_gray(img)
            if px.shape != (s, s):
                px = resize(px, (s, s))
            out[i, 0] = (px - 0.5) * INPUT_GAIN
        return out

    def extract_batch(self, images, batch_size=64):
        net = self._require()
        feats = []
        for start in range(0, len(images), batch_size):
            acts = net.forward(self.prepare(images[start:start + batch_size]))
            feats.append(acts.outputs[-2])
        if not feats:
            return np.zeros((0, FORENSIC_DIM))
        out = np.vstack(feats)
        assert out.shape[1] == FORENSIC_DIM
        return out

    def extract(self, img):
        return self.extract_batch([img])[0]

    def head_probabilities(self, features):
        """``(n, 2)`` softmax of the classifier head applied to 128-dim features."""
        head = self._require().layers[-1]
        f = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if f.shape[1] != FORENSIC_DIM:
            raise RejectedInputError(f"forensic features must have {FORENSIC_DIM} values, got {f.shape[1]}")
        logits, _ = head.forward(f)
        return softmax(logits)

    def genuine_probability(self, features):
        return self.head_probabilities(features)[:, GENUINE]

    def flops(self):
        """Inference cost without the training-only head."""
        net = self._require()
        return net.flops() - net.layers[-1].flops((FORENSIC_DIM,))

    def save(self, path, meta=None):
        net = self._require()
        meta = dict(meta or {})
        meta["network"] = net.manifest()
        meta["trained"] = self.trained
        checkpoint.write(path, "forensic", meta, checkpoint.network_arrays(net))

    @classmethod
    def load(cls, path):
        _, meta, arrays = checkpoint.read(path, expect_kind="forensic")
        net = checkpoint.restore_network(meta["network"], arrays)
        return cls(net, trained=bool(meta.get("trained", True)))


def _mean_loss(net, x, y, batch_size):
    total = 0.0
    for start in range(0, len(x), batch_size):
        acts = net.forward(x[start:start + batch_size])
        loss, _ = softmax_cross_entropy(acts.output, y[start:start + batch_size])
        total += loss * len(y[start:start + batch_size])
    return total / len(x)


def train_extractor(images, labels, cfg=None, epochs=10, *, batch_size=32, seed=0,
                    input_size=DEFAULT_INPUT_SIZE, hidden_dim=HIDDEN_DIM, history=None):
    """Train on labeled images (1 = genuine, 0 = spoof) with softmax cross-entropy.

    ``history``, when a list, receives the full-set loss at initialization
    and after each epoch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) != len(labels) or len(labels) == 0:
        raise RejectedInputError("images and labels must be nonempty and aligned")
    if not set(np.unique(labels)) <= {SPOOF, GENUINE}:
        raise RejectedInputError("labels must be 0 (spoof) or 1 (genuine)")
    if len(np.unique(labels)) < 2:
        raise RejectedInputError("training corpus must contain both genuine and spoof images")
    if epochs < 1:
        raise RejectedInputError("epochs must be positive")
    cfg = cfg or SgdConfig()
    model = ForensicExtractor.initialized(input_size, seed=seed, hidden_dim=hidden_dim)
    net = model.network
    x = model.prepare(images)
    rng = np.random.default_rng(seed + 1)
    state = SgdState()
    if history is not None:
        history.append(_mean_loss(net, x, labels, 128))
    for epoch in range(epochs):
        lr = learning_rate_at(cfg, epoch)
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            _, grads = net.value_and_grad(softmax_cross_entropy, (x[idx], labels[idx]))
            params, state = sgd_step(net.parameters(), grads, state, cfg, lr)
            net.set_parameters(params)
        if history is not None:
            history.append(_mean_loss(net, x, labels, 128))
    model.trained = True
    return model


def accuracy(model, images, labels):
    probs = model.genuine_probability(model.extract_batch(images))
    return float(np.mean((probs > 0.5).astype(int) == np.asarray(labels)))


def import_features(path):
    """Map id -> 128 forensic values from a feature file (text or binary)."""
    table = read_features(path)
    if len(table) == 0:
        return {}
    if table.forensic is None:
        from .errors import FormatError

        raise FormatError(f"{path} holds no forensic features")
    return {sid: table.forensic[i] for i, sid in enumerate(table.ids)}


def export_features(path, features, fmt="text"):
    ids = list(features)
    block = np.array([features[i] for i in ids], dtype=np.float64).reshape(len(ids), -1) if ids else None
    write_features(path, FeatureTable(ids, None, block), fmt)
