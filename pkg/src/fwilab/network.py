"""Per-iteration update network: a six-layer CNN with its own forward,
backprop, and Adam machinery on plain numpy arrays.

Architecture: a first stage of three 5x5 conv layers with ReLU and output
channels (64, 128, 256), whose three activation maps are concatenated
(448 channels) and fed to a second stage of three 5x5 conv layers with
channels (128, 64, 1); the last layer is linear.  Zero padding keeps the
spatial size fixed, so the output update has the input's shape.

Convolutions run as im2col + one sgemm per layer, which is where nearly all
the time goes; parameters default to float32 with a float64 path available
for gradient verification.  Inputs are an offset/scaled speed map and a
max-abs-normalized misfit gradient; the predicted update is rescaled back to
m/s by the same spec.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ConvLayer",
    "UpdateNetwork",
    "AdamState",
    "NormSpec",
    "conv2d",
    "net_forward",
    "train_step",
    "normalize_sos",
    "normalize_gradient",
    "denormalize_update",
]

KERNEL_SIZE = 5
PAD = KERNEL_SIZE // 2
STAGE1_CHANNELS = (64, 128, 256)
STAGE2_CHANNELS = (128, 64, 1)
N_INPUT_CHANNELS = 2


@dataclass(frozen=True)
class NormSpec:
    """Input/output scaling: speed maps shift by ``offset`` and divide by
    ``scale``; predicted updates multiply back by ``scale``."""

    offset: float = 1400.0
    scale: float = 666.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def normalize_sos(c: np.ndarray, spec: NormSpec) -> np.ndarray:
    return (np.asarray(c, dtype=np.float64) - spec.offset) / spec.scale


def normalize_gradient(g: np.ndarray) -> np.ndarray:
    """Scale a misfit gradient to unit max magnitude (zeros stay zeros)."""
    g = np.asarray(g, dtype=np.float64)
    peak = np.abs(g).max()
    return g / peak if peak > 0 else np.zeros_like(g)


def denormalize_update(h: np.ndarray, spec: NormSpec) -> np.ndarray:
    return np.asarray(h, dtype=np.float64) * spec.scale


@dataclass
class ConvLayer:
    """5x5 convolution (cross-correlation) with bias and optional ReLU."""

    kernel: np.ndarray  # (out_ch, in_ch, 5, 5)
    bias: np.ndarray  # (out_ch,)
    activation: str  # "relu" | "none"

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
            raise ValueError(f"kernel must be (out, in, 5, 5), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ValueError("bias shape must match output channels")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]


def _im2col(x_pad: np.ndarray, h: int, w: int) -> np.ndarray:
    """(C, h+4, w+4) -> (C*25, h*w) patch matrix (contiguous copy)."""
    win = np.lib.stride_tricks.sliding_window_view(
        x_pad, (KERNEL_SIZE, KERNEL_SIZE), axis=(1, 2)
    )  # (C, h, w, 5, 5)
    c = x_pad.shape[0]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(
        c * KERNEL_SIZE * KERNEL_SIZE, h * w
    )


def _conv_forward(x: np.ndarray, layer: ConvLayer, want_cache: bool):
    c_in, h, w = x.shape
    if c_in != layer.in_channels:
        raise ValueError(f"expected {layer.in_channels} input channels, got {c_in}")
    dtype = layer.kernel.dtype
    x_pad = np.zeros((c_in, h + 2 * PAD, w + 2 * PAD), dtype=dtype)
    x_pad[:, PAD : PAD + h, PAD : PAD + w] = x
    patches = _im2col(x_pad, h, w)
    k_mat = layer.kernel.reshape(layer.out_channels, -1)
    y = k_mat @ patches + layer.bias[:, None]
    mask = None
    if layer.activation == "relu":
        mask = y > 0
        y = y * mask
    cache = (patches, mask, (c_in, h, w)) if want_cache else None
    return y.reshape(layer.out_channels, h, w), cache


def _conv_backward(dy: np.ndarray, layer: ConvLayer, cache):
    patches, mask, (c_in, h, w) = cache
    dy_mat = dy.reshape(layer.out_channels, h * w)
    if mask is not None:
        dy_mat = dy_mat * mask
    dk = (dy_mat @ patches.T).reshape(layer.kernel.shape)
    db = dy_mat.sum(axis=1)
    dpatch = layer.kernel.reshape(layer.out_channels, -1).T @ dy_mat
    dpatch = dpatch.reshape(c_in, KERNEL_SIZE, KERNEL_SIZE, h, w)
    dx_pad = np.zeros((c_in, h + 2 * PAD, w + 2 * PAD), dtype=dy.dtype)
    for i in range(KERNEL_SIZE):
        for j in range(KERNEL_SIZE):
            dx_pad[:, i : i + h, j : j + w] += dpatch[:, i, j]
    dx = dx_pad[:, PAD : PAD + h, PAD : PAD + w]
    return dx, dk, db


def conv2d(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Apply one layer to a (C_in, H, W) input; output is (C_out, H, W)."""
    y, _ = _conv_forward(np.asarray(x, dtype=layer.kernel.dtype), layer, False)
    return y


@dataclass
class UpdateNetwork:
    """The six conv layers plus the normalization spec they were trained with."""

    layers: list[ConvLayer]
    norm: NormSpec = field(default_factory=NormSpec)

    def __post_init__(self):
        chans = [layer.out_channels for layer in self.layers]
        expected = list(STAGE1_CHANNELS) + list(STAGE2_CHANNELS)
        if chans != expected:
            raise ValueError(f"layer output channels {chans} != {expected}")
        if self.layers[3].in_channels != sum(STAGE1_CHANNELS):
            raise ValueError("second stage must consume the concatenated maps")

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].kernel.dtype

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.append(layer.kernel)
            out.append(layer.bias)
        return out

    def astype(self, dtype) -> "UpdateNetwork":
        layers = [
            ConvLayer(l.kernel.astype(dtype), l.bias.astype(dtype), l.activation)
            for l in self.layers
        ]
        return UpdateNetwork(layers, self.norm)

    def copy(self) -> "UpdateNetwork":
        return self.astype(self.dtype)

    @staticmethod
    def _layer_plan() -> list[tuple[int, int, str]]:
        s1 = STAGE1_CHANNELS
        s2 = STAGE2_CHANNELS
        return [
            (N_INPUT_CHANNELS, s1[0], "relu"),
            (s1[0], s1[1], "relu"),
            (s1[1], s1[2], "relu"),
            (sum(s1), s2[0], "relu"),
            (s2[0], s2[1], "relu"),
            (s2[1], s2[2], "none"),
        ]

    @classmethod
    def initialize(
        cls, seed: int, dtype=np.float32, norm: NormSpec | None = None
    ) -> "UpdateNetwork":
        """Fan-in-scaled uniform weights, zero biases, deterministic in seed."""
        rng = np.random.default_rng(seed)
        layers = []
        for c_in, c_out, act in cls._layer_plan():
            bound = 1.0 / np.sqrt(c_in * KERNEL_SIZE * KERNEL_SIZE)
            kernel = rng.uniform(
                -bound, bound, size=(c_out, c_in, KERNEL_SIZE, KERNEL_SIZE)
            ).astype(dtype)
            layers.append(ConvLayer(kernel, np.zeros(c_out, dtype=dtype), act))
        return cls(layers, norm or NormSpec())

    @classmethod
    def zeros(cls, dtype=np.float32, norm: NormSpec | None = None) -> "UpdateNetwork":
        layers = [
            ConvLayer(
                np.zeros((c_out, c_in, KERNEL_SIZE, KERNEL_SIZE), dtype=dtype),
                np.zeros(c_out, dtype=dtype),
                act,
            )
            for c_in, c_out, act in cls._layer_plan()
        ]
        return cls(layers, norm or NormSpec())

    def predict_update(self, c_values: np.ndarray, g_values: np.ndarray) -> np.ndarray:
        """Speed-map update in m/s from a raw map and raw misfit gradient."""
        c_norm = normalize_sos(c_values, self.norm)
        g_norm = normalize_gradient(g_values)
        h = net_forward(self, c_norm, g_norm)
        return denormalize_update(h, self.norm)


def _forward_pass(net: UpdateNetwork, x: np.ndarray, want_cache: bool):
    a1, c0 = _conv_forward(x, net.layers[0], want_cache)
    a2, c1 = _conv_forward(a1, net.layers[1], want_cache)
    a3, c2 = _conv_forward(a2, net.layers[2], want_cache)
    cat = np.concatenate([a1, a2, a3], axis=0)
    h1, c3 = _conv_forward(cat, net.layers[3], want_cache)
    h2, c4 = _conv_forward(h1, net.layers[4], want_cache)
    out, c5 = _conv_forward(h2, net.layers[5], want_cache)
    return out[0], (c0, c1, c2, c3, c4, c5)


def _backward_pass(net: UpdateNetwork, dh: np.ndarray, caches):
    c0, c1, c2, c3, c4, c5 = caches
    n1, n2, _ = STAGE1_CHANNELS
    dh2, dk5, db5 = _conv_backward(dh[None, :, :], net.layers[5], c5)
    dh1, dk4, db4 = _conv_backward(dh2, net.layers[4], c4)
    dcat, dk3, db3 = _conv_backward(dh1, net.layers[3], c3)
    da1_cat = dcat[:n1]
    da2_cat = dcat[n1 : n1 + n2]
    da3 = dcat[n1 + n2 :]
    da2, dk2, db2 = _conv_backward(da3, net.layers[2], c2)
    da2 = da2 + da2_cat
    da1, dk1, db1 = _conv_backward(da2, net.layers[1], c1)
    da1 = da1 + da1_cat
    dx, dk0, db0 = _conv_backward(da1, net.layers[0], c0)
    grads = [dk0, db0, dk1, db1, dk2, db2, dk3, db3, dk4, db4, dk5, db5]
    return dx, grads


def net_forward(net: UpdateNetwork, c_norm: np.ndarray, g_norm: np.ndarray) -> np.ndarray:
    """Predicted (normalized) update for one normalized map/gradient pair."""
    if c_norm.shape != g_norm.shape:
        raise ValueError("map and gradient shapes differ")
    x = np.stack([c_norm, g_norm]).astype(net.dtype)
    out, _ = _forward_pass(net, x, want_cache=False)
    return out


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers and the shared step count."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: UpdateNetwork) -> "AdamState":
        params = net.parameters()
        return cls(
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
        )

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ValueError("parameter/gradient count mismatch")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g64 = g.astype(np.float64)
            m *= self.beta1
            m += (1.0 - self.beta1) * g64
            v *= self.beta2
            v += (1.0 - self.beta2) * g64 * g64
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= update.astype(p.dtype)


def train_step(
    net: UpdateNetwork,
    batch: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    adam: AdamState,
    lr: float,
) -> float:
    """One Adam step on the mean per-sample squared reconstruction error.

    ``batch`` holds (C_k, g_k, C_gt) triples in m/s units; the loss for each
    sample is ``sum((C_gt - (C_k + scale*H))**2)`` and gradients flow through
    the output rescaling.  The network and Adam state are updated in place;
    returns the batch loss before the step.
    """
    if not batch:
        raise ValueError("batch must not be empty")
    dtype = net.dtype
    n = len(batch)
    total_loss = 0.0
    grad_sum: list[np.ndarray] | None = None
    for idx, (c_k, g_k, c_gt) in enumerate(batch):
        if c_k.shape != g_k.shape or c_k.shape != c_gt.shape:
            raise ValueError(f"sample {idx}: inconsistent shapes")
        c_norm = normalize_sos(c_k, net.norm).astype(dtype)
        g_norm = normalize_gradient(g_k).astype(dtype)
        x = np.stack([c_norm, g_norm])
        h, caches = _forward_pass(net, x, want_cache=True)
        err = np.asarray(c_gt, np.float64) - (
            np.asarray(c_k, np.float64) + h.astype(np.float64) * net.norm.scale
        )
        loss = float(np.sum(err * err))
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at batch sample {idx}")
        total_loss += loss
        dh = (-2.0 * net.norm.scale / n) * err
        _, grads = _backward_pass(net, dh.astype(dtype), caches)
        if grad_sum is None:
            grad_sum = grads
        else:
            for acc, g in zip(grad_sum, grads):
                acc += g
    adam.step(net.parameters(), grad_sum, lr)
    return total_loss / n
