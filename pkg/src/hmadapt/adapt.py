"""Adapting a source-trained classifier to a target domain.

Three procedures: ``test_only`` (use the base model as is), ``last_layer``
(retrain only the fully-connected head) and ``spottune`` (per-input routing of
every residual block through either the frozen base block or a trainable
copy, chosen by a small policy network).

SpotTune routing is trained with the Gumbel-softmax relaxation and a
straight-through estimator: the forward pass uses the hard one-hot decision,
the backward pass differentiates the relaxed weights.  Evaluation routes by
argmax of the policy logits without noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import nn
from .augment import AugmentConfig
from .errors import DataError
from .nn import layers as L
from .nn.model import (HEAD_PARAMS, NetParams, as_batch, block_backward, block_forward,
                       head_backward, head_forward, stem_forward)
from .nn.train import TrainConfig, TrainResult, run_epochs, validation_scorer
from .patches import two_class_sampler

REUSE, FINETUNE = 0, 1


class FinetuneMode(str, Enum):
    TEST_ONLY = "test_only"
    LAST_LAYER = "last_layer"
    SPOTTUNE = "spottune"


def _require_data(*datasets):
    for ds in datasets:
        if ds is None or len(ds) == 0:
            raise DataError("adaptation needs nonempty target train and validation data")


# --- conventional fine-tuning ----------------------------------------------

def finetune_last_layer(base: NetParams, train_ds, val_ds, cfg: TrainConfig,
                        aug: AugmentConfig | None, rng: np.random.Generator) -> TrainResult:
    """Retrain ``fc.weight``/``fc.bias`` only; the backbone runs in eval mode.

    Every other parameter and every batch-norm buffer stays bit-identical to
    ``base``.
    """
    _require_data(train_ds, val_ds)
    net = base.copy()
    sample_rng, aug_rng, val_rng = rng.spawn(3)
    stream = two_class_sampler(train_ds.records, sample_rng)
    opt = cfg.adam()

    def step():
        x, y = train_ds.sample_batch(stream, cfg.batch_size, aug, aug_rng, net.dtype)
        feats = nn.features(net, x, train=False)
        logits, c_fc = L.linear(feats, net.params["fc.weight"], net.params["fc.bias"])
        loss, dlogits = L.cross_entropy(logits, y)
        _, dw, db = L.linear_backward(dlogits, c_fc)
        nn.adam_step(net.params, {"fc.weight": dw, "fc.bias": db}, opt)
        return loss

    validate = validation_scorer(lambda x: nn.predict_proba(net, x), val_ds, val_rng, net.dtype)
    result = run_epochs(epochs=cfg.epochs, steps_per_epoch=cfg.steps_per_epoch, step=step,
                        validate=validate, snapshot=net.copy, label="last_layer")
    result.optimizer = opt
    return result


# --- SpotTune --------------------------------------------------------------

@dataclass
class SpotTuneNet:
    frozen: NetParams
    tuned: NetParams
    policy: dict
    temperature: float = 0.1
    straight_through: bool = True
    # optional fixed decisions, shape (B,) or (N, B), 1 = fine-tuned path
    force_policy: np.ndarray | None = None

    @property
    def block_count(self) -> int:
        return self.frozen.config.block_count

    def copy(self) -> "SpotTuneNet":
        return SpotTuneNet(self.frozen, self.tuned.copy(),
                           {k: v.copy() for k, v in self.policy.items()},
                           self.temperature, self.straight_through,
                           None if self.force_policy is None else np.array(self.force_policy))

    def trainable_names(self) -> list[str]:
        """Keys of the joint parameter view updated during adaptation."""
        names = [f"tuned/{k}" for k in self.tuned.params
                 if k.startswith("blocks.") or k in HEAD_PARAMS]
        return names + [f"policy/{k}" for k in self.policy]


def init_policy(config: nn.NetConfig, rng: np.random.Generator, channels=(4, 8),
                dtype=np.float32) -> dict:
    """Two strided conv stages, global pooling and a linear head giving 2B logits."""
    c1, c2 = channels
    b = config.block_count

    def conv(c_in, c_out):
        bound = np.sqrt(6.0 / (9 * c_in))
        return rng.uniform(-bound, bound, size=(3, 3, c_in, c_out)).astype(dtype)

    bound = 1.0 / np.sqrt(c2)
    return {
        "conv1": conv(config.in_channels, c1),
        "bias1": np.zeros(c1, dtype),
        "conv2": conv(c1, c2),
        "bias2": np.zeros(c2, dtype),
        "fc.weight": rng.uniform(-bound, bound, size=(c2, 2 * b)).astype(dtype),
        "fc.bias": np.zeros(2 * b, dtype),
    }


def make_spottune(base: NetParams, rng: np.random.Generator, temperature: float = 0.1,
                  straight_through: bool = True) -> SpotTuneNet:
    """Frozen base plus an exact clone to fine-tune, with a fresh policy network."""
    frozen = base.copy()
    for arr in list(frozen.params.values()) + list(frozen.buffers.values()):
        arr.setflags(write=False)
    return SpotTuneNet(frozen, base.copy(), init_policy(base.config, rng, dtype=base.dtype),
                       temperature, straight_through)


def policy_forward(policy: dict, x: np.ndarray, blocks: int):
    h1, c1 = L.conv2d(x, policy["conv1"], 2, 1)
    h1, m1 = L.relu(h1 + policy["bias1"])
    h2, c2 = L.conv2d(h1, policy["conv2"], 2, 1)
    h2, m2 = L.relu(h2 + policy["bias2"])
    pooled, pshape = L.global_avg_pool(h2)
    logits, cf = L.linear(pooled, policy["fc.weight"], policy["fc.bias"])
    return logits.reshape(-1, blocks, 2), (c1, m1, c2, m2, pshape, cf)


def policy_backward(cache, dlogits: np.ndarray) -> dict:
    c1, m1, c2, m2, pshape, cf = cache
    g = {}
    dpooled, g["fc.weight"], g["fc.bias"] = L.linear_backward(dlogits.reshape(dlogits.shape[0], -1), cf)
    d = L.relu_backward(L.global_avg_pool_backward(dpooled, pshape), m2)
    g["bias2"] = d.sum(axis=(0, 1, 2))
    d, g["conv2"] = L.conv2d_backward(d, c2)
    d = L.relu_backward(d, m1)
    g["bias1"] = d.sum(axis=(0, 1, 2))
    _, g["conv1"] = L.conv2d_backward(d, c1)
    return g


def sample_gumbel(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return (-np.log(-np.log(u))).astype(dtype)


def one_hot_argmax(z: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z)
    np.put_along_axis(out, z.argmax(axis=-1)[..., None], 1.0, axis=-1)
    return out


def routing_weights(policy_logits: np.ndarray, mode: str, temperature: float,
                    straight_through: bool = True, gumbel: np.ndarray | None = None):
    """Per-sample, per-block ``(reuse, finetune)`` weights and the relaxed sample.

    Returns ``(weights, relaxed)``; ``relaxed`` is None in eval mode.
    """
    if mode == "eval":
        return one_hot_argmax(policy_logits), None
    z = policy_logits if gumbel is None else policy_logits + gumbel
    relaxed = L.softmax(z / temperature)
    return (one_hot_argmax(relaxed) if straight_through else relaxed), relaxed


def _forced_weights(force, n: int, blocks: int, dtype) -> np.ndarray:
    d = np.broadcast_to(np.asarray(force, dtype=np.int64), (n, blocks))
    w = np.zeros((n, blocks, 2), dtype=dtype)
    w[..., FINETUNE] = d
    w[..., REUSE] = 1 - d
    return w


@dataclass
class SpotTuneCache:
    logits: np.ndarray
    weights: np.ndarray
    relaxed: np.ndarray | None
    policy_cache: tuple | None
    blocks: list = field(default_factory=list)
    head: tuple = ()


def spottune_forward(net: SpotTuneNet, batch, mode: str = "eval",
                     rng: np.random.Generator | None = None,
                     gumbel: np.ndarray | None = None, routing: np.ndarray | None = None):
    """Logits of the routed network and a cache for :func:`spottune_backward`.

    ``mode`` is ``"train"`` (Gumbel-perturbed routing, tuned blocks use batch
    statistics) or ``"eval"`` (argmax routing, running statistics).  Frozen
    blocks always run with their stored statistics.  ``gumbel`` fixes the
    noise; ``routing`` (or ``net.force_policy``) overrides the policy.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    x = as_batch(net.frozen, batch)
    blocks = net.block_count
    forced = routing if routing is not None else net.force_policy
    if forced is not None:
        weights, relaxed, pcache = _forced_weights(forced, x.shape[0], blocks, x.dtype), None, None
    else:
        plogits, pcache = policy_forward(net.policy, x, blocks)
        if train and gumbel is None:
            if rng is None:
                raise ValueError("train-mode routing needs an rng or explicit gumbel noise")
            gumbel = sample_gumbel(rng, plogits.shape, plogits.dtype)
        weights, relaxed = routing_weights(plogits, mode, net.temperature, net.straight_through,
                                           gumbel if train else None)
        weights = weights.astype(x.dtype, copy=False)

    h, _ = stem_forward(net.frozen, x, False)
    cache = SpotTuneCache(None, weights, relaxed, pcache)
    for b in range(blocks):
        f, fc = block_forward(net.frozen, b, h, False)
        t, tc = block_forward(net.tuned, b, h, train)
        w0 = weights[:, b, REUSE][:, None, None, None]
        w1 = weights[:, b, FINETUNE][:, None, None, None]
        h = w0 * f + w1 * t
        cache.blocks.append((fc, tc, f, t))
    logits, cache.head = head_forward(net.tuned, h)
    cache.logits = logits
    return logits, cache


def spottune_backward(net: SpotTuneNet, cache: SpotTuneCache, dlogits: np.ndarray) -> dict:
    """Gradients keyed like :meth:`SpotTuneNet.trainable_names`."""
    tuned_grads = {}
    d = head_backward(cache.head, dlogits, tuned_grads)
    dweights = np.zeros(cache.weights.shape, dtype=np.float64)
    for b in reversed(range(len(cache.blocks))):
        fc, tc, f, t = cache.blocks[b]
        w0 = cache.weights[:, b, REUSE][:, None, None, None]
        w1 = cache.weights[:, b, FINETUNE][:, None, None, None]
        dweights[:, b, REUSE] = (d * f).sum(axis=(1, 2, 3))
        dweights[:, b, FINETUNE] = (d * t).sum(axis=(1, 2, 3))
        dx = block_backward(tc, w1 * d, tuned_grads)
        if np.any(w0):
            dx = dx + block_backward(fc, w0 * d, None)
        d = dx
    grads = {f"tuned/{k}": v for k, v in tuned_grads.items()}
    if cache.policy_cache is not None and cache.relaxed is not None:
        y = cache.relaxed
        # straight-through: d(hard)/d(relaxed) treated as identity
        dz = y * (dweights - (dweights * y).sum(axis=-1, keepdims=True)) / net.temperature
        for k, v in policy_backward(cache.policy_cache, dz.astype(y.dtype)).items():
            grads[f"policy/{k}"] = v
    return grads


def spottune_loss_and_grads(net: SpotTuneNet, batch, labels, rng=None, gumbel=None):
    logits, cache = spottune_forward(net, batch, "train", rng=rng, gumbel=gumbel)
    loss, dlogits = L.cross_entropy(logits, labels)
    return loss, spottune_backward(net, cache, dlogits)


def spottune_predict_proba(net: SpotTuneNet, batch, batch_size: int = 128) -> np.ndarray:
    x = np.asarray(batch)
    out = []
    for start in range(0, len(x), batch_size):
        logits, _ = spottune_forward(net, x[start:start + batch_size], "eval")
        out.append(L.softmax(logits.astype(np.float64))[:, 1])
    return np.concatenate(out) if out else np.zeros(0)


def _joint_view(net: SpotTuneNet) -> dict:
    view = {f"tuned/{k}": net.tuned.params[k] for k in net.tuned.params
            if k.startswith("blocks.") or k in HEAD_PARAMS}
    view.update({f"policy/{k}": v for k, v in net.policy.items()})
    return view


def _write_back(net: SpotTuneNet, view: dict) -> None:
    for key, value in view.items():
        group, name = key.split("/", 1)
        (net.tuned.params if group == "tuned" else net.policy)[name] = value


def spottune_train(net: SpotTuneNet, train_ds, val_ds, cfg: TrainConfig,
                   aug: AugmentConfig | None, rng: np.random.Generator) -> TrainResult:
    """Jointly fit the tuned blocks, tuned head and policy with Adam.

    ``net.frozen`` is never written.  Returns the epoch snapshot with the
    highest validation AUC (eval-mode routing).
    """
    _require_data(train_ds, val_ds)
    net = net.copy()
    sample_rng, aug_rng, noise_rng, val_rng = rng.spawn(4)
    stream = two_class_sampler(train_ds.records, sample_rng)
    opt = cfg.adam()
    dtype = net.frozen.dtype

    def step():
        x, y = train_ds.sample_batch(stream, cfg.batch_size, aug, aug_rng, dtype)
        loss, grads = spottune_loss_and_grads(net, x, y, rng=noise_rng)
        view = _joint_view(net)
        nn.adam_step(view, grads, opt)
        _write_back(net, view)
        return loss

    validate = validation_scorer(lambda x: spottune_predict_proba(net, x), val_ds, val_rng, dtype)
    result = run_epochs(epochs=cfg.epochs, steps_per_epoch=cfg.steps_per_epoch, step=step,
                        validate=validate, snapshot=net.copy, label="spottune")
    result.optimizer = opt
    return result


# --- policy statistics -----------------------------------------------------

@dataclass
class PolicyStats:
    finetune_probability: np.ndarray
    sample_count: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["block_index", "finetune_probability"])
            for i, p in enumerate(self.finetune_probability.tolist()):
                w.writerow([i, repr(p)])

    @classmethod
    def from_csv(cls, path) -> "PolicyStats":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        probs = np.array([float(r["finetune_probability"]) for r in rows])
        return cls(probs, -1)


def routing_decisions(net: SpotTuneNet, batch) -> np.ndarray:
    """Hard eval-mode decisions ``(N, B)``; 1 means the fine-tuned block was used."""
    x = as_batch(net.frozen, batch)
    if net.force_policy is not None:
        return np.broadcast_to(np.asarray(net.force_policy, dtype=np.int64),
                               (x.shape[0], net.block_count)).copy()
    plogits, _ = policy_forward(net.policy, x, net.block_count)
    return plogits.argmax(axis=-1)


def policy_stats(net: SpotTuneNet, inputs, batch_size: int = 128) -> PolicyStats:
    x = np.asarray(inputs)
    if len(x) == 0:
        raise DataError("policy statistics need at least one sample")
    decisions = np.concatenate([routing_decisions(net, x[i:i + batch_size])
                                for i in range(0, len(x), batch_size)])
    return PolicyStats(decisions.mean(axis=0), int(decisions.shape[0]))
