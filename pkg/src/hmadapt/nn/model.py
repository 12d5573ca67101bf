"""Small residual CNN classifier with hand-written reverse-mode gradients.

Layout: a strided 3x3 stem (conv, BN, ReLU), ``B`` basic residual blocks
grouped into stages (the first block of every stage after the first halves
the resolution and uses a 1x1 projection shortcut), global average pooling
and a fully-connected head.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L


@dataclass(frozen=True)
class NetConfig:
    input_size: int = 64
    in_channels: int = 1
    stem_channels: int = 12
    stem_stride: int = 2
    stage_channels: tuple = (12, 24, 48)
    blocks_per_stage: tuple = (2, 2, 2)
    classes: int = 2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        if len(self.stage_channels) != len(self.blocks_per_stage) or not self.stage_channels:
            raise ValueError("stage_channels and blocks_per_stage must be nonempty and equally long")
        if self.block_count < 1 or min(self.blocks_per_stage) < 1:
            raise ValueError("every stage needs at least one block")
        if self.input_size % self.total_stride:
            raise ValueError(f"input_size {self.input_size} not divisible by total stride {self.total_stride}")
        if self.classes < 2:
            raise ValueError("need at least two classes")

    @property
    def block_count(self) -> int:
        return sum(self.blocks_per_stage)

    @property
    def total_stride(self) -> int:
        return self.stem_stride * 2 ** (len(self.stage_channels) - 1)

    def block_specs(self) -> list[tuple[int, int, int]]:
        """``(in_channels, out_channels, stride)`` for every residual block."""
        specs = []
        c_in = self.stem_channels
        for s, (c_out, n) in enumerate(zip(self.stage_channels, self.blocks_per_stage)):
            for k in range(n):
                stride = 2 if (s > 0 and k == 0) else 1
                specs.append((c_in, c_out, stride))
                c_in = c_out
        return specs

    @classmethod
    def production_shape(cls) -> "NetConfig":
        """512px input, 14 blocks: 29 weight layers with the stem, ~6M parameters."""
        return cls(input_size=512, stem_channels=32, stem_stride=2,
                   stage_channels=(32, 64, 128, 256), blocks_per_stage=(2, 4, 4, 4))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        return d


@dataclass
class NetParams:
    config: NetConfig
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def copy(self) -> "NetParams":
        return NetParams(self.config, copy.deepcopy(self.params), copy.deepcopy(self.buffers))

    @property
    def dtype(self):
        return self.params["fc.weight"].dtype

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "NetParams":
        return NetParams(self.config,
                         {k: v.astype(dtype) for k, v in self.params.items()},
                         {k: v.astype(dtype) for k, v in self.buffers.items()})

    def digest(self, names=None) -> str:
        """SHA-256 over the named parameter buffers (all by default)."""
        h = hashlib.sha256()
        for k in sorted(self.params if names is None else names):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()


def _conv_init(rng, kh, kw, c_in, c_out, dtype):
    bound = np.sqrt(6.0 / (kh * kw * c_in))
    return rng.uniform(-bound, bound, size=(kh, kw, c_in, c_out)).astype(dtype)


def _add_bn(params, buffers, name, c, dtype):
    params[f"{name}.gamma"] = np.ones(c, dtype)
    params[f"{name}.beta"] = np.zeros(c, dtype)
    buffers[f"{name}.mean"] = np.zeros(c, dtype)
    buffers[f"{name}.var"] = np.ones(c, dtype)


def init_params(config: NetConfig, rng: np.random.Generator, dtype=np.float32) -> NetParams:
    params, buffers = {}, {}
    params["stem.conv"] = _conv_init(rng, 3, 3, config.in_channels, config.stem_channels, dtype)
    _add_bn(params, buffers, "stem.bn", config.stem_channels, dtype)
    for i, (c_in, c_out, stride) in enumerate(config.block_specs()):
        p = f"blocks.{i}"
        params[f"{p}.conv1"] = _conv_init(rng, 3, 3, c_in, c_out, dtype)
        _add_bn(params, buffers, f"{p}.bn1", c_out, dtype)
        params[f"{p}.conv2"] = _conv_init(rng, 3, 3, c_out, c_out, dtype)
        _add_bn(params, buffers, f"{p}.bn2", c_out, dtype)
        if stride != 1 or c_in != c_out:
            params[f"{p}.proj"] = _conv_init(rng, 1, 1, c_in, c_out, dtype)
            _add_bn(params, buffers, f"{p}.bnp", c_out, dtype)
    c_last = config.stage_channels[-1]
    bound = 1.0 / np.sqrt(c_last)
    params["fc.weight"] = rng.uniform(-bound, bound, size=(c_last, config.classes)).astype(dtype)
    params["fc.bias"] = np.zeros(config.classes, dtype)
    return NetParams(config, params, buffers)


def block_param_names(net: NetParams, i: int) -> list[str]:
    prefix = f"blocks.{i}."
    return [k for k in net.params if k.startswith(prefix)]


HEAD_PARAMS = ("fc.weight", "fc.bias")


# --- building blocks -------------------------------------------------------

def _bn(net: NetParams, name: str, x, train: bool):
    p, b, cfg = net.params, net.buffers, net.config
    if train:
        out, cache, (mean, var) = L.batchnorm_train(x, p[f"{name}.gamma"], p[f"{name}.beta"], cfg.bn_eps)
        m = cfg.bn_momentum
        b[f"{name}.mean"] = ((1 - m) * b[f"{name}.mean"] + m * mean).astype(x.dtype)
        b[f"{name}.var"] = ((1 - m) * b[f"{name}.var"] + m * var).astype(x.dtype)
        return out, cache
    return L.batchnorm_eval(x, p[f"{name}.gamma"], p[f"{name}.beta"],
                            b[f"{name}.mean"], b[f"{name}.var"], cfg.bn_eps)


def _grad(grads, name, g):
    if grads is not None:
        grads[name] = grads[name] + g if name in grads else g


def stem_forward(net: NetParams, x, train: bool):
    h, c_conv = L.conv2d(x, net.params["stem.conv"], net.config.stem_stride, 1)
    h, c_bn = _bn(net, "stem.bn", h, train)
    h, mask = L.relu(h)
    return h, (c_conv, c_bn, mask)


def stem_backward(cache, dout, grads, need_dx: bool = False):
    c_conv, c_bn, mask = cache
    d = L.relu_backward(dout, mask)
    d, dg, db = L.batchnorm_backward(d, c_bn)
    _grad(grads, "stem.bn.gamma", dg)
    _grad(grads, "stem.bn.beta", db)
    dx, dw = L.conv2d_backward(d, c_conv, need_dw=grads is not None)
    _grad(grads, "stem.conv", dw)
    return dx if need_dx else None


def block_forward(net: NetParams, i: int, x, train: bool):
    p = f"blocks.{i}"
    stride = net.config.block_specs()[i][2]
    h, c1 = L.conv2d(x, net.params[f"{p}.conv1"], stride, 1)
    h, b1 = _bn(net, f"{p}.bn1", h, train)
    h, m1 = L.relu(h)
    h, c2 = L.conv2d(h, net.params[f"{p}.conv2"], 1, 1)
    h, b2 = _bn(net, f"{p}.bn2", h, train)
    if f"{p}.proj" in net.params:
        s, cp = L.conv2d(x, net.params[f"{p}.proj"], stride, 0)
        s, bp = _bn(net, f"{p}.bnp", s, train)
        shortcut = (cp, bp)
    else:
        s, shortcut = x, None
    out, m_out = L.relu(h + s)
    return out, (p, c1, b1, m1, c2, b2, shortcut, m_out)


def block_backward(cache, dout, grads):
    """Return d(input); accumulate parameter grads into ``grads`` unless it is None."""
    p, c1, b1, m1, c2, b2, shortcut, m_out = cache
    need_dw = grads is not None
    d = L.relu_backward(dout, m_out)
    dh, dg, db = L.batchnorm_backward(d, b2)
    _grad(grads, f"{p}.bn2.gamma", dg)
    _grad(grads, f"{p}.bn2.beta", db)
    dh, dw = L.conv2d_backward(dh, c2, need_dw)
    _grad(grads, f"{p}.conv2", dw)
    dh = L.relu_backward(dh, m1)
    dh, dg, db = L.batchnorm_backward(dh, b1)
    _grad(grads, f"{p}.bn1.gamma", dg)
    _grad(grads, f"{p}.bn1.beta", db)
    dx, dw = L.conv2d_backward(dh, c1, need_dw)
    _grad(grads, f"{p}.conv1", dw)
    if shortcut is None:
        return dx + d
    cp, bp = shortcut
    ds, dg, db = L.batchnorm_backward(d, bp)
    _grad(grads, f"{p}.bnp.gamma", dg)
    _grad(grads, f"{p}.bnp.beta", db)
    dxs, dw = L.conv2d_backward(ds, cp, need_dw)
    _grad(grads, f"{p}.proj", dw)
    return dx + dxs


def head_forward(net: NetParams, h):
    pooled, pshape = L.global_avg_pool(h)
    logits, c_fc = L.linear(pooled, net.params["fc.weight"], net.params["fc.bias"])
    return logits, (pshape, c_fc)


def head_backward(cache, dlogits, grads, need_dx: bool = True):
    pshape, c_fc = cache
    dpooled, dw, db = L.linear_backward(dlogits, c_fc)
    _grad(grads, "fc.weight", dw)
    _grad(grads, "fc.bias", db)
    return L.global_avg_pool_backward(dpooled, pshape) if need_dx else None


# --- whole network ---------------------------------------------------------

@dataclass
class ForwardCache:
    logits: np.ndarray
    stem: tuple
    blocks: list
    head: tuple


def as_batch(net: NetParams, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=net.dtype)
    if x.ndim == 3:
        x = x[..., None]
    cfg = net.config
    if x.ndim != 4 or x.shape[1:] != (cfg.input_size, cfg.input_size, cfg.in_channels):
        raise ValueError(f"batch shape {x.shape} does not match "
                         f"(N, {cfg.input_size}, {cfg.input_size}, {cfg.in_channels})")
    return x


def features(net: NetParams, batch, train: bool = False) -> np.ndarray:
    """Pooled penultimate activations (eval mode by default)."""
    x = as_batch(net, batch)
    h, _ = stem_forward(net, x, train)
    for i in range(net.config.block_count):
        h, _ = block_forward(net, i, h, train)
    return h.mean(axis=(1, 2))


def forward(net: NetParams, batch, train: bool = False):
    """Logits for a batch of ``(N, S, S[, C])`` inputs scaled to ``[0, 1]``.

    In train mode batch-norm layers use batch statistics and update the
    running buffers in place.
    """
    x = as_batch(net, batch)
    h, c_stem = stem_forward(net, x, train)
    c_blocks = []
    for i in range(net.config.block_count):
        h, c = block_forward(net, i, h, train)
        c_blocks.append(c)
    logits, c_head = head_forward(net, h)
    return logits, ForwardCache(logits, c_stem, c_blocks, c_head)


def backward_from(cache: ForwardCache, dlogits) -> dict:
    grads = {}
    d = head_backward(cache.head, dlogits, grads)
    for c in reversed(cache.blocks):
        d = block_backward(c, d, grads)
    stem_backward(cache.stem, d, grads)
    return grads


def backward(cache: ForwardCache, labels) -> dict:
    """Gradients of the mean cross-entropy loss for ``labels``."""
    _, dlogits = L.cross_entropy(cache.logits, labels)
    return backward_from(cache, dlogits)


def loss_and_grads(net: NetParams, batch, labels, train: bool = True):
    logits, cache = forward(net, batch, train)
    loss, dlogits = L.cross_entropy(logits, labels)
    return loss, backward_from(cache, dlogits)


def predict_proba(net: NetParams, batch, batch_size: int = 128) -> np.ndarray:
    """Eval-mode probability of the positive class."""
    x = np.asarray(batch)
    out = []
    for start in range(0, len(x), batch_size):
        logits, _ = forward(net, x[start:start + batch_size], train=False)
        out.append(L.softmax(logits.astype(np.float64))[:, 1])
    return np.concatenate(out) if out else np.zeros(0)
