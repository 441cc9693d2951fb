"""Tiny fully convolutional classifiers built from ring or dense layers.

Networks are a list of :class:`LayerSpec` plus one parameter dict per layer.
Construction enforces the equivariance-preserving building rules: every
convolution has stride 1 and the only spatial reshaping is average pooling
(followed by a 1x1 channel mix), ending in global average pooling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .conv import conv_direct, conv_direct_backward, gmr_conv_backward, gmr_stage1
from .conv.engine import _mix
from .io import read_network, write_network
from .kernel import (
    GmrLayerParams,
    SigmaParams,
    build_basis,
    clip_sigma,
    init_sigma,
    init_weights,
    parameter_count,
    ring_geometry,
)
from .tensor import avg_pool, rotate_bilinear

logger = logging.getLogger(__name__)

KINDS = ("gmr_conv", "dense_conv", "relu", "avg_pool_downsample", "global_avg_pool",
         "linear_head", "bias")


class ArchitectureError(ValueError):
    """The layer stack violates the equivariant building rules."""


class TrainingError(RuntimeError):
    """Training diverged."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    c_in: int = 0
    c_out: int = 0
    k: int = 0
    n: int = 0
    window: int = 0
    stride: int = 1


def validate(specs: Sequence[LayerSpec]):
    """Reject stacks that would break rotation/reflection equivariance or mis-chain channels."""
    channels = None
    for i, s in enumerate(specs):
        if s.kind not in KINDS:
            raise ArchitectureError(f"layer {i}: unsupported kind {s.kind!r}")
        if s.stride != 1:
            raise ArchitectureError(
                f"layer {i}: stride {s.stride}; downsample with avg_pool_downsample instead"
            )
        if s.kind in ("gmr_conv", "dense_conv", "avg_pool_downsample", "linear_head"):
            if channels is not None and s.c_in != channels:
                raise ArchitectureError(f"layer {i}: expects {s.c_in} channels, gets {channels}")
            channels = s.c_out
        elif s.kind == "bias" and channels is not None and s.c_out != channels:
            raise ArchitectureError(f"layer {i}: bias over {s.c_out} channels, gets {channels}")
        if s.kind == "avg_pool_downsample" and s.window < 2:
            raise ArchitectureError(f"layer {i}: pooling window must be >= 2")
    if specs and specs[-1].kind != "linear_head":
        raise ArchitectureError("network must end in a linear head")
    if "global_avg_pool" not in [s.kind for s in specs]:
        raise ArchitectureError("network needs a global average pool before the head")


def _init_layer(s: LayerSpec, rng: np.random.Generator) -> dict:
    if s.kind == "gmr_conv":
        g = ring_geometry(s.k, s.n)
        sigma = init_sigma(g)
        # each ring weight drives a whole ring of taps; divide by the RMS ring
        # mass so feature maps keep their scale through stacked layers
        w = init_weights(s.c_in, s.c_out, g.n, int(rng.integers(2**63))) / ring_mass(s.k, s.n)
        return {"weights": w, "log_sigma": sigma.log_sigma}
    if s.kind == "dense_conv":
        std = math.sqrt(2.0 / (s.c_in * s.k * s.k))
        return {"kernel": rng.normal(0.0, std, size=(s.c_out, s.c_in, s.k, s.k))}
    if s.kind == "avg_pool_downsample":
        return {"w": rng.normal(0.0, math.sqrt(2.0 / s.c_in), size=(s.c_out, s.c_in))}
    if s.kind == "linear_head":
        return {"w": rng.normal(0.0, math.sqrt(1.0 / s.c_in), size=(s.c_out, s.c_in)),
                "b": np.zeros(s.c_out)}
    if s.kind == "bias":
        return {"b": np.zeros(s.c_out)}
    return {}


@dataclass
class Network:
    specs: list[LayerSpec]
    params: list[dict]

    def __post_init__(self):
        validate(self.specs)
        if len(self.params) != len(self.specs):
            raise ArchitectureError("one parameter block per layer is required")

    @classmethod
    def init(cls, specs: Sequence[LayerSpec], seed: int = 0) -> "Network":
        validate(specs)
        rng = np.random.default_rng(seed)
        return cls(list(specs), [_init_layer(s, rng) for s in specs])

    def copy(self) -> "Network":
        return Network(list(self.specs), [{k: v.copy() for k, v in p.items()} for p in self.params])

    def parameter_count(self) -> int:
        return sum(v.size for p in self.params for v in p.values())

    def gmr_params(self, i: int) -> GmrLayerParams:
        s, p = self.specs[i], self.params[i]
        return GmrLayerParams(ring_geometry(s.k, s.n), p["weights"], SigmaParams(p["log_sigma"]))

    # forward / backward

    def forward(self, x: np.ndarray, keep: bool = False):
        caches = []
        for i, (s, p) in enumerate(zip(self.specs, self.params)):
            x, cache = _forward(self, i, s, p, x, keep)
            caches.append(cache)
        return (x, caches) if keep else x

    def backward(self, caches, grad: np.ndarray) -> list[dict]:
        grads: list[dict] = [{} for _ in self.specs]
        for i in range(len(self.specs) - 1, -1, -1):
            grad, grads[i] = _backward(self, i, self.specs[i], self.params[i], caches[i], grad)
        return grads

    def logits(self, x: np.ndarray, batch: int = 64) -> np.ndarray:
        return np.concatenate([self.forward(x[j:j + batch]) for j in range(0, len(x), batch)])


def _forward(net, i, s, p, x, keep):
    kind = s.kind
    if kind == "gmr_conv":
        params = net.gmr_params(i)
        S = gmr_stage1(x, params.basis())
        return _mix(S, params.weights), ((x, S) if keep else None)
    if kind == "dense_conv":
        return conv_direct(x, p["kernel"]), (x if keep else None)
    if kind == "bias":
        return x + p["b"].reshape((1, -1) + (1,) * (x.ndim - 2)), None
    if kind == "relu":
        return np.maximum(x, 0.0), (x > 0 if keep else None)
    if kind == "avg_pool_downsample":
        pooled = avg_pool(x, s.window)
        B, C = pooled.shape[:2]
        y = np.matmul(p["w"], pooled.reshape(B, C, -1)).reshape((B, -1) + pooled.shape[2:])
        return y, ((x.shape, pooled) if keep else None)
    if kind == "global_avg_pool":
        return x.reshape(x.shape[0], x.shape[1], -1).mean(axis=2), (x.shape if keep else None)
    if kind == "linear_head":
        return x @ p["w"].T + p["b"], (x if keep else None)
    raise ArchitectureError(kind)


def _backward(net, i, s, p, cache, g):
    kind = s.kind
    if kind == "gmr_conv":
        x, S = cache
        gg = gmr_conv_backward(x, net.gmr_params(i), None, g, stage1=S)
        return gg.grad_input, {"weights": gg.grad_weights, "log_sigma": gg.grad_log_sigma}
    if kind == "dense_conv":
        gx, gk = conv_direct_backward(cache, p["kernel"], g)
        return gx, {"kernel": gk}
    if kind == "bias":
        return g, {"b": g.reshape(g.shape[0], g.shape[1], -1).sum(axis=(0, 2))}
    if kind == "relu":
        return g * cache, {}
    if kind == "avg_pool_downsample":
        _, pooled = cache
        B, Co = g.shape[:2]
        g2 = g.reshape(B, Co, -1)
        gw = np.tensordot(g2, pooled.reshape(B, pooled.shape[1], -1), axes=([0, 2], [0, 2]))
        gp = np.matmul(p["w"].T, g2).reshape(pooled.shape)
        w = s.window
        up = gp
        for ax in range(2, gp.ndim):
            up = np.repeat(up, w, axis=ax)
        return up / (w ** (gp.ndim - 2)), {"w": gw}
    if kind == "global_avg_pool":
        shape = cache
        hw = math.prod(shape[2:])
        return np.broadcast_to((g / hw).reshape(g.shape + (1,) * (len(shape) - 2)), shape).copy(), {}
    if kind == "linear_head":
        return g @ p["w"], {"w": g.T @ cache, "b": g.sum(axis=0)}
    raise ArchitectureError(kind)


# twin architectures

def twin_specs(conv: str, base_channels: int = 8, classes: int = 4, in_channels: int = 1,
               large_k: int = 9, small_k: int = 5, dense_k: int = 3) -> list[LayerSpec]:
    """Three-stage FCN: conv-relu-pool x2, conv-relu, global pool, linear head."""
    c1, c2, c3 = base_channels, 2 * base_channels, 4 * base_channels
    if conv == "gmr_conv":
        ks = (large_k, large_k, small_k)
        conv_spec = lambda ci, co, k: LayerSpec("gmr_conv", ci, co, k=k, n=(k + 1) // 2)
    elif conv == "dense_conv":
        ks = (dense_k,) * 3
        conv_spec = lambda ci, co, k: LayerSpec("dense_conv", ci, co, k=k)
    else:
        raise ArchitectureError(f"unknown conv kind {conv!r}")
    specs = []
    chans = [(in_channels, c1), (c1, c2), (c2, c3)]
    for stage, ((ci, co), k) in enumerate(zip(chans, ks)):
        specs += [conv_spec(ci, co, k), LayerSpec("bias", c_out=co), LayerSpec("relu")]
        if stage < 2:
            specs += [LayerSpec("avg_pool_downsample", co, co, window=2),
                      LayerSpec("bias", c_out=co)]
    specs += [LayerSpec("global_avg_pool"), LayerSpec("linear_head", c3, classes)]
    return specs


def build_twin_networks(base_channels: int = 8, seed: int = 0, classes: int = 4,
                        dense_k: int = 3) -> tuple[Network, Network]:
    """A ring network and a dense twin of identical topology."""
    gmr = Network.init(twin_specs("gmr_conv", base_channels, classes), seed)
    dense = Network.init(twin_specs("dense_conv", base_channels, classes, dense_k=dense_k), seed)
    return gmr, dense


def conv_parameter_counts(net: Network) -> int:
    """Trainable parameters in the convolution layers (weights plus ring widths)."""
    total = 0
    for s in net.specs:
        if s.kind == "gmr_conv":
            total += parameter_count(s.c_in, s.c_out, ring_geometry(s.k, s.n))[0]
        elif s.kind == "dense_conv":
            total += s.c_in * s.c_out * s.k * s.k
    return total


# synthetic data

@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Concentric-ring images labelled by ring count (1..classes).

    ``ring_norm`` sets the norm whose level sets are drawn: 2 gives circles,
    larger values give axis-aligned rounded squares. The label is the count of
    closed curves, unchanged by any rotation or reflection. The default draws
    rounded squares: training images are then upright, so a dense net can pick
    up axis-aligned edge features that stop matching after a 45 degree turn.
    """

    size: int = 48
    classes: int = 4
    train_per_class: int = 500
    test_per_class: int = 200
    noise: float = 0.1
    ring_norm: float = 8.0
    ring_width: float = 0.9
    seed: int = 0


def _render(spec: SyntheticDatasetSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    H = spec.size
    c = (H - 1) / 2.0 + rng.uniform(-3, 3, size=2)
    outer = rng.uniform(0.28, 0.4) * H
    count = label + 1
    phase = rng.uniform(0.0, 0.35)
    amp = rng.uniform(0.6, 1.4)
    yy, xx = np.meshgrid(np.arange(H) - c[0], np.arange(H) - c[1], indexing="ij")
    p = spec.ring_norm
    d = (np.abs(yy) ** p + np.abs(xx) ** p) ** (1.0 / p)
    img = np.zeros((H, H))
    for j in range(count):
        r = outer * (j + 1 - phase) / count
        img += np.exp(-((d - r) ** 2) / (2 * spec.ring_width**2))
    img = amp * img + rng.normal(0.0, spec.noise, size=img.shape)
    return img


def make_dataset(spec: SyntheticDatasetSpec, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
    """Images ``(N, 1, size, size)`` and labels, deterministic in ``spec.seed`` and ``split``."""
    per_class = spec.train_per_class if split == "train" else spec.test_per_class
    rng = np.random.default_rng([spec.seed, 0 if split == "train" else 1])
    labels = np.repeat(np.arange(spec.classes), per_class)
    rng.shuffle(labels)
    images = np.stack([_render(spec, int(lab), rng) for lab in labels])[:, None]
    return images, labels.astype(np.int64)


# training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 0.015
    momentum: float = 0.9
    batch_size: int = 32
    sigma_lr_scale: float = 1.0
    seed: int = 0


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    B = len(labels)
    loss = -logp[np.arange(B), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1.0
    return float(loss), grad / B


def ring_mass(k: int, n: int) -> np.ndarray:
    """Tap sum of each ring image at its initial width."""
    g = ring_geometry(k, n)
    return build_basis(g, init_sigma(g)).M.reshape(g.n, -1).sum(axis=1)


def sgd_step(net: Network, grads: list[dict], velocity: list[dict], cfg: TrainConfig):
    for i, (s, p, g, v) in enumerate(zip(net.specs, net.params, grads, velocity)):
        if s.kind == "gmr_conv":
            g = dict(g, weights=g["weights"] / ring_mass(s.k, s.n) ** 2,
                     log_sigma=g["log_sigma"] * cfg.sigma_lr_scale)
        for name, gv in g.items():
            v[name] = cfg.momentum * v[name] + gv
            p[name] = p[name] - cfg.lr * v[name]
        if s.kind == "gmr_conv":
            p["log_sigma"] = clip_sigma(SigmaParams(p["log_sigma"]), ring_geometry(s.k, s.n)).log_sigma


@dataclass
class TrainResult:
    net: Network
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)


def train(net: Network, images: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Momentum SGD on softmax cross-entropy; returns a trained copy and its loss curve."""
    net = net.copy()
    velocity = [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]
    result = TrainResult(net)
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(images))
        losses, correct = [], 0
        for j in range(0, len(order), cfg.batch_size):
            idx = order[j:j + cfg.batch_size]
            logits, caches = net.forward(images[idx], keep=True)
            loss, g = softmax_xent(logits, labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(step, loss)
            grads = net.backward(caches, g)
            sgd_step(net, grads, velocity, cfg)
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
            step += 1
        result.step_losses += losses
        result.epoch_losses.append(float(np.mean(losses)))
        result.epoch_accuracy.append(correct / len(images))
        logger.info("epoch %d loss %.4f acc %.3f", epoch, result.epoch_losses[-1],
                    result.epoch_accuracy[-1])
    return result


def accuracy(net: Network, images: np.ndarray, labels: np.ndarray) -> float:
    return float((net.logits(images).argmax(axis=1) == labels).mean())


def evaluate(net: Network, images: np.ndarray, labels: np.ndarray,
             angles: Sequence[float]) -> dict[float, float]:
    """Accuracy on bilinearly rotated (zero-filled) copies of the test set, per angle."""
    return {float(a): accuracy(net, rotate_bilinear(images, a, fill=0.0), labels) for a in angles}


# serialization

def save_network(path, net: Network):
    manifest = [asdict(s) for s in net.specs]
    blocks = []
    for i, s in enumerate(net.specs):
        if s.kind == "gmr_conv":
            blocks.append(net.gmr_params(i))
        elif net.params[i]:
            blocks.append(net.params[i])
        else:
            blocks.append(None)
    with open(path, "wb") as fh:
        write_network(fh, manifest, blocks)


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        manifest, blocks = read_network(fh)
    specs = [LayerSpec(**entry) for entry in manifest]
    params = []
    for s, b in zip(specs, blocks):
        if isinstance(b, GmrLayerParams):
            params.append({"weights": b.weights, "log_sigma": b.sigma.log_sigma})
        else:
            params.append(b or {})
    return Network(specs, params)
