"""Minimal float64 neural-network substrate with hand-derived gradients.

Layers operate on batches: dense layers take ``(batch, features)``, conv
layers take ``(batch, channels, height, width)``. ``Network.forward``
also accepts a single unbatched sample and strips the batch axis from the
output again.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import RejectedInputError, RejectedStateError, TrainingDivergedError

ACTIVATIONS = ("identity", "relu", "sigmoid")


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def _activation_backward(dy, z, y, kind):
    if kind == "relu":
        return dy * (z > 0)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    return dy


def _check_activation(kind):
    if kind not in ACTIVATIONS:
        raise RejectedInputError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _init_uniform(rng, shape, fan_in, fan_out, activation):
    if activation == "relu":
        limit = math.sqrt(6.0 / fan_in)
    else:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class DenseLayer:
    """``y = act(x @ W.T + b)`` with ``W`` of shape ``(out, in)``."""

    kind = "dense"

    def __init__(self, n_in, n_out, activation="identity", *, rng=None, init="auto"):
        _check_activation(activation)
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.activation = activation
        if init == "zeros" or rng is None:
            self.weights = np.zeros((self.n_out, self.n_in))
        else:
            self.weights = _init_uniform(rng, (self.n_out, self.n_in), self.n_in, self.n_out, activation)
        self.bias = np.zeros(self.n_out)

    @property
    def params(self):
        return [self.weights, self.bias]

    @params.setter
    def params(self, values):
        w, b = values
        if w.shape != self.weights.shape or b.shape != self.bias.shape:
            raise RejectedInputError(
                f"dense parameter shapes {w.shape}/{b.shape} do not match "
                f"{self.weights.shape}/{self.bias.shape}"
            )
        self.weights = np.asarray(w, dtype=np.float64)
        self.bias = np.asarray(b, dtype=np.float64)

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.n_in,):
            raise RejectedInputError(f"dense layer expects {self.n_in} inputs, got shape {tuple(in_shape)}")
        return (self.n_out,)

    def forward(self, x):
        z = x @ self.weights.T + self.bias
        y = _activate(z, self.activation)
        return y, (x, z, y)

    def backward(self, dy, cache):
        x, z, y = cache
        dz = _activation_backward(dy, z, y, self.activation)
        return dz @ self.weights, [dz.T @ x, dz.sum(axis=0)]

    def flops(self, in_shape):
        return 2 * self.n_in * self.n_out

    def manifest(self):
        return {"type": self.kind, "n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}


class ConvLayer:
    """2-D cross-correlation, kernels ``(out_ch, in_ch, kh, kw)``."""

    kind = "conv"

    def __init__(self, in_ch, out_ch, kernel_size=3, stride=1, padding=0, activation="identity", *,
                 rng=None, init="auto"):
        _check_activation(activation)
        if stride < 1 or padding < 0:
            raise RejectedInputError("stride must be >= 1 and padding >= 0")
        kh, kw = (kernel_size, kernel_size) if np.isscalar(kernel_size) else kernel_size
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.kh, self.kw = int(kh), int(kw)
        self.stride, self.padding = int(stride), int(padding)
        self.activation = activation
        shape = (self.out_ch, self.in_ch, self.kh, self.kw)
        if init == "zeros" or rng is None:
            self.kernels = np.zeros(shape)
        else:
            fan_in = self.in_ch * self.kh * self.kw
            fan_out = self.out_ch * self.kh * self.kw
            self.kernels = _init_uniform(rng, shape, fan_in, fan_out, activation)
        self.bias = np.zeros(self.out_ch)

    @property
    def params(self):
        return [self.kernels, self.bias]

    @params.setter
    def params(self, values):
        k, b = values
        if k.shape != self.kernels.shape or b.shape != self.bias.shape:
            raise RejectedInputError(
                f"conv parameter shapes {k.shape}/{b.shape} do not match "
                f"{self.kernels.shape}/{self.bias.shape}"
            )
        self.kernels = np.asarray(k, dtype=np.float64)
        self.bias = np.asarray(b, dtype=np.float64)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise RejectedInputError(
                f"conv layer expects ({self.in_ch}, H, W) inputs, got shape {tuple(in_shape)}"
            )
        _, h, w = in_shape
        oh = kernels.conv_output_size(h, self.kh, self.stride, self.padding)
        ow = kernels.conv_output_size(w, self.kw, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise RejectedInputError(f"input {h}x{w} too small for a {self.kh}x{self.kw} kernel")
        return (self.out_ch, oh, ow)

    def forward(self, x):
        b = x.shape[0]
        _, oh, ow = self.output_shape(x.shape[1:])
        cols = kernels.im2col(x, self.kh, self.kw, self.stride, self.padding)
        z = cols @ self.kernels.reshape(self.out_ch, -1).T + self.bias
        z = z.reshape(b, oh, ow, self.out_ch).transpose(0, 3, 1, 2)
        y = _activate(z, self.activation)
        return y, (x.shape, cols, z, y)

    def backward(self, dy, cache):
        x_shape, cols, z, y = cache
        dz = _activation_backward(dy, z, y, self.activation)
        dz2 = dz.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        dk = (dz2.T @ cols).reshape(self.kernels.shape)
        db = dz2.sum(axis=0)
        dcols = dz2 @ self.kernels.reshape(self.out_ch, -1)
        dx = kernels.col2im(dcols, x_shape, self.kh, self.kw, self.stride, self.padding)
        return dx, [dk, db]

    def flops(self, in_shape):
        _, oh, ow = self.output_shape(in_shape)
        return 2 * self.in_ch * self.kh * self.kw * self.out_ch * oh * ow

    def manifest(self):
        return {
            "type": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch,
            "kernel_size": [self.kh, self.kw], "stride": self.stride,
            "padding": self.padding, "activation": self.activation,
        }


class Flatten:
    kind = "flatten"
    params = []

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), []

    def flops(self, in_shape):
        return 0

    def manifest(self):
        return {"type": self.kind}


@dataclass
class Activations:
    """Everything ``Network.backward`` needs from a forward pass."""

    outputs: list
    caches: list
    token: tuple
    batched: bool = True

    @property
    def output(self):
        out = self.outputs[-1]
        return out if self.batched else out[0]


_network_ids = itertools.count()


class Network:
    """An ordered layer stack with a parameter version counter.

    The counter is bumped by ``set_parameters``; activations recorded under
    an older version are refused by ``backward``.
    """

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self._uid = next(_network_ids)
        self.version = 0
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape

    # parameters ---------------------------------------------------------
    def parameters(self):
        return [p for layer in self.layers for p in layer.params]

    def set_parameters(self, values):
        values = list(values)
        expected = sum(len(layer.params) for layer in self.layers)
        if len(values) != expected:
            raise RejectedInputError(f"expected {expected} parameter arrays, got {len(values)}")
        it = iter(values)
        for layer in self.layers:
            n = len(layer.params)
            if n:
                layer.params = [np.asarray(next(it), dtype=np.float64) for _ in range(n)]
        self.version += 1

    def touch(self):
        """Mark parameters as changed after an in-place edit."""
        self.version += 1

    # passes ---------------------------------------------------------------
    def _batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            return x[None], False
        if x.shape[1:] == self.input_shape:
            return x, True
        if len(self.input_shape) == 3 and self.input_shape[0] == 1 and x.shape == self.input_shape[1:]:
            return x[None, None], False
        raise RejectedInputError(
            f"input shape {x.shape} does not match network input {self.input_shape}"
        )

    def forward(self, x):
        xb, batched = self._batch(x)
        outputs, caches = [xb], []
        h = xb
        for layer in self.layers:
            h, cache = layer.forward(h)
            outputs.append(h)
            caches.append(cache)
        return Activations(outputs, caches, (self._uid, self.version), batched)

    def predict(self, x):
        return self.forward(x).output

    def backward(self, acts, output_gradient):
        """Return ``(param_grads, input_grad)``; grads align with ``parameters()``."""
        if not isinstance(acts, Activations) or acts.token != (self._uid, self.version) \
                or len(acts.caches) != len(self.layers):
            raise RejectedStateError("activations do not come from this network's current parameters")
        dy = np.asarray(output_gradient, dtype=np.float64)
        if not acts.batched:
            dy = dy[None]
        if dy.shape != acts.outputs[-1].shape:
            raise RejectedInputError(
                f"output gradient shape {dy.shape} != network output {acts.outputs[-1].shape}"
            )
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(acts.caches)):
            dy, g = layer.backward(dy, cache)
            grads.append(g)
        flat = [g for layer_grads in reversed(grads) for g in layer_grads]
        return flat, (dy if acts.batched else dy[0])

    def value_and_grad(self, loss_fn, batch):
        x, target = batch
        acts = self.forward(x)
        loss, dout = loss_fn(acts.output, target)
        grads, _ = self.backward(acts, dout)
        return loss, grads

    def flops(self):
        total, shape = 0, self.input_shape
        for layer in self.layers:
            total += layer.flops(shape)
            shape = layer.output_shape(shape)
        return total

    def manifest(self):
        return {"input_shape": list(self.input_shape), "layers": [l.manifest() for l in self.layers]}

    @classmethod
    def from_manifest(cls, manifest):
        layers = []
        for spec in manifest["layers"]:
            kind = spec["type"]
            if kind == "dense":
                layers.append(DenseLayer(spec["n_in"], spec["n_out"], spec["activation"]))
            elif kind == "conv":
                layers.append(ConvLayer(spec["in_ch"], spec["out_ch"], tuple(spec["kernel_size"]),
                                        spec["stride"], spec["padding"], spec["activation"]))
            elif kind == "flatten":
                layers.append(Flatten())
            else:
                raise RejectedInputError(f"unknown layer type {kind!r}")
        return cls(layers, manifest["input_shape"])


def forward(net, x):
    return net.forward(x)


def backward(net, activations, output_gradient):
    return net.backward(activations, output_gradient)


# --------------------------------------------------------------------------
# losses: each returns (mean loss, d loss / d output)

def mse_loss(pred, target):
    diff = pred - np.asarray(target, dtype=np.float64).reshape(pred.shape)
    n = pred.shape[0] if pred.ndim else 1
    return float(np.sum(diff**2) / n), 2.0 * diff / n


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), labels].mean())
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


# --------------------------------------------------------------------------
# optimizer

@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_factor: float = 5.0
    decay_every: int = 10

    def __post_init__(self):
        values = (self.learning_rate, self.momentum, self.weight_decay, self.decay_factor)
        if not all(math.isfinite(v) for v in values):
            raise RejectedInputError("SGD configuration must be finite")
        if self.learning_rate <= 0 or self.decay_factor <= 0:
            raise RejectedInputError("learning_rate and decay_factor must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise RejectedInputError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise RejectedInputError("weight_decay must be nonnegative")
        if int(self.decay_every) < 1:
            raise RejectedInputError("decay_every must be a positive integer")


def learning_rate_at(cfg, epoch):
    """Step schedule: divide by ``decay_factor`` once per ``decay_every`` epochs."""
    return cfg.learning_rate / cfg.decay_factor ** (int(epoch) // int(cfg.decay_every))


@dataclass
class SgdState:
    velocity: list = field(default_factory=list)


def sgd_step(params, grads, state, cfg, lr=None):
    """Classical momentum with L2 decay folded into the gradient.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    Returns new parameter arrays and the updated state; inputs are not modified.
    """
    if len(params) != len(grads):
        raise RejectedInputError("params and grads differ in length")
    lr = cfg.learning_rate if lr is None else lr
    velocity = state.velocity if state is not None and state.velocity else [np.zeros_like(p) for p in params]
    new_params, new_velocity = [], []
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape:
            raise RejectedInputError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient encountered")
        v = cfg.momentum * v + g + cfg.weight_decay * p
        new_velocity.append(v)
        new_params.append(p - lr * v)
    return new_params, SgdState(new_velocity)


# --------------------------------------------------------------------------
# gradient checking

def grad_check(net, loss_fn, batch, epsilon=1e-4, *, max_entries=None, seed=0):
    """Largest relative error between analytic and central-difference gradients.

    ``net`` needs ``parameters()`` (arrays perturbed in place and restored)
    and ``value_and_grad(loss_fn, batch)``. With ``max_entries`` only that
    many randomly chosen entries per parameter array are probed.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise RejectedInputError("epsilon must lie in [1e-6, 1e-3]")
    _, analytic = net.value_and_grad(loss_fn, batch)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(net.parameters(), analytic):
        if max_entries is not None and p.size > max_entries:
            idx = rng.choice(p.size, size=max_entries, replace=False)
        else:
            idx = range(p.size)
        a_flat = np.asarray(a).reshape(-1)
        for k in idx:
            pos = np.unravel_index(k, p.shape)
            orig = p[pos]
            p[pos] = orig + epsilon
            f_plus, _ = net.value_and_grad(loss_fn, batch)
            p[pos] = orig - epsilon
            f_minus, _ = net.value_and_grad(loss_fn, batch)
            p[pos] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            denom = max(abs(a_flat[k]), abs(numeric), 1e-12)
            worst = max(worst, abs(a_flat[k] - numeric) / denom)
    return worst
