"""Small multi-modal dense networks with hand-written gradients.

Each device trains one encoder per modality it owns plus a classifier head
shared by every device. Parameters live in flat per-block vectors (one block
per modality encoder, one block for the head) so that blocks can be shipped,
averaged and diffed without caring about layer layout. The classifier always
consumes a fixed-width concatenation of all modality feature slots; slots for
modalities a device does not own stay zero, which keeps the head block
structurally identical across devices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ModalityMismatchError, NumericOverflowError, ShapeMismatchError

BITS_PER_PARAM = 32   # single precision on the wire
FLOPS_PER_PARAM = 6   # fwd + bwd multiply-accumulate budget per sample


@dataclass(frozen=True)
class ArchSpec:
    """Layer dimensions for the modality encoders and the shared head.

    Encoders are two dense layers with a tanh hidden layer; the head is a
    dense net (tanh hidden layers, linear output) over the fused features.
    """

    input_dims: tuple[int, ...]
    encoder_hidden: int = 16
    feature_len: int = 8
    classifier_hidden: tuple[int, ...] = (16,)
    num_classes: int = 6

    def __post_init__(self):
        dims = (self.encoder_hidden, self.feature_len, self.num_classes,
                *self.input_dims, *self.classifier_hidden)
        if len(self.input_dims) < 1 or any(d < 1 for d in dims):
            raise ShapeMismatchError("all architecture dimensions must be >= 1")

    @property
    def num_modalities(self) -> int:
        return len(self.input_dims)

    @property
    def shared_block_id(self) -> int:
        return self.num_modalities + 1

    @property
    def fusion_width(self) -> int:
        return self.num_modalities * self.feature_len

    def block_shapes(self, block_id: int) -> tuple[tuple[int, ...], ...]:
        """Layer array shapes of one block, in storage order."""
        if 1 <= block_id <= self.num_modalities:
            d = self.input_dims[block_id - 1]
            h, f = self.encoder_hidden, self.feature_len
            return ((h, d), (h,), (f, h), (f,))
        if block_id == self.shared_block_id:
            widths = (self.fusion_width, *self.classifier_hidden, self.num_classes)
            shapes: list[tuple[int, ...]] = []
            for w_in, w_out in zip(widths[:-1], widths[1:]):
                shapes.append((w_out, w_in))
                shapes.append((w_out,))
            return tuple(shapes)
        raise ShapeMismatchError(f"unknown block id {block_id}")

    def block_param_count(self, block_id: int) -> int:
        return sum(int(np.prod(s)) for s in self.block_shapes(block_id))


@dataclass
class ParamBlock:
    """One flat parameter vector plus the layer shapes it packs."""

    block_id: int
    values: np.ndarray
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = sum(int(np.prod(s)) for s in self.shapes)
        if self.values.ndim != 1 or self.values.shape[0] != expected:
            raise ShapeMismatchError(
                f"block {self.block_id}: {self.values.size} values, shapes imply {expected}")
        if not np.isfinite(self.values).all():
            raise NumericOverflowError(f"block {self.block_id} holds non-finite values")

    @property
    def param_count(self) -> int:
        return int(self.values.shape[0])

    def arrays(self) -> list[np.ndarray]:
        """Read-only layer views into the flat vector."""
        out, off = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(self.values[off:off + size].reshape(shape))
            off += size
        return out

    def same_structure(self, other: "ParamBlock") -> bool:
        return self.shapes == other.shapes and self.param_count == other.param_count


@dataclass
class MultiModalParams:
    """Per-device parameter set: one block per owned modality plus the head."""

    blocks: dict[int, ParamBlock]
    owned: tuple[int, ...]

    def __post_init__(self):
        self.owned = tuple(sorted(self.owned))
        if not self.blocks:
            raise ShapeMismatchError("empty parameter set")
        head = max(self.blocks)
        if set(self.blocks) != set(self.owned) | {head} or head in self.owned:
            raise ShapeMismatchError(
                f"blocks {sorted(self.blocks)} do not match owned modalities {self.owned}")

    @property
    def head_id(self) -> int:
        return max(self.blocks)

    def copy(self) -> "MultiModalParams":
        return MultiModalParams(
            {b: ParamBlock(p.block_id, p.values.copy(), p.shapes) for b, p in self.blocks.items()},
            self.owned)


# Gradients reuse the parameter container: same blocks, same shapes.
Gradient = MultiModalParams


def init_full_params(arch: ArchSpec, rng: np.random.Generator) -> dict[int, ParamBlock]:
    """One shared random init covering every block id (1..M+1).

    Weights are drawn N(0, 1/fan_in); biases start at zero. Devices and the
    server slice their copies out of this single draw so that block m is
    identical everywhere at round zero.
    """
    blocks = {}
    for block_id in range(1, arch.shared_block_id + 1):
        parts = []
        for shape in arch.block_shapes(block_id):
            if len(shape) == 2:
                parts.append(rng.normal(0.0, 1.0 / np.sqrt(shape[1]), size=shape).ravel())
            else:
                parts.append(np.zeros(shape))
        blocks[block_id] = ParamBlock(block_id, np.concatenate(parts), arch.block_shapes(block_id))
    return blocks


def slice_device_params(full: Mapping[int, ParamBlock], owned: Sequence[int],
                        shared_id: int) -> MultiModalParams:
    """Copy the blocks a device maintains out of a full parameter set."""
    wanted = tuple(sorted(owned))
    blocks = {b: ParamBlock(b, full[b].values.copy(), full[b].shapes)
              for b in (*wanted, shared_id)}
    return MultiModalParams(blocks, wanted)


def _check_features(arch: ArchSpec, params: MultiModalParams,
                    features: Mapping[int, np.ndarray]) -> int:
    got, want = set(features), set(params.owned)
    if got != want:
        raise ModalityMismatchError(f"sample modalities {sorted(got)} != owned {sorted(want)}")
    batch = None
    for m in params.owned:
        x = np.asarray(features[m], dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != arch.input_dims[m - 1]:
            raise ShapeMismatchError(
                f"modality {m}: got shape {x.shape}, expected (B, {arch.input_dims[m - 1]})")
        if batch is None:
            batch = x.shape[0]
        elif x.shape[0] != batch:
            raise ShapeMismatchError("modalities disagree on batch size")
    return int(batch)


def _forward_cached(arch: ArchSpec, params: MultiModalParams,
                    features: Mapping[int, np.ndarray]):
    batch = _check_features(arch, params, features)
    f = arch.feature_len
    fused = np.zeros((batch, arch.fusion_width))
    enc_cache = {}
    for m in params.owned:
        w1, b1, w2, b2 = params.blocks[m].arrays()
        x = np.asarray(features[m], dtype=np.float64)
        h = np.tanh(x @ w1.T + b1)
        fused[:, (m - 1) * f: m * f] = h @ w2.T + b2
        enc_cache[m] = (x, h)
    arrs = params.blocks[params.head_id].arrays()
    layers = [(arrs[i], arrs[i + 1]) for i in range(0, len(arrs), 2)]
    acts = [fused]
    a = fused
    for v, u in layers[:-1]:
        a = np.tanh(a @ v.T + u)
        acts.append(a)
    v_out, u_out = layers[-1]
    scores = a @ v_out.T + u_out
    if not np.isfinite(scores).all():
        raise NumericOverflowError("non-finite class scores")
    return scores, enc_cache, layers, acts


def forward_batch(arch: ArchSpec, params: MultiModalParams,
                  features: Mapping[int, np.ndarray]) -> np.ndarray:
    """Class scores, shape (B, C)."""
    scores, _, _, _ = _forward_cached(arch, params, features)
    return scores


def forward(arch: ArchSpec, params: MultiModalParams,
            sample: Mapping[int, np.ndarray]) -> np.ndarray:
    """Class scores for a single sample, shape (C,)."""
    batched = {m: np.asarray(x, dtype=np.float64).reshape(1, -1) for m, x in sample.items()}
    return forward_batch(arch, params, batched)[0]


def loss_and_grad(arch: ArchSpec, params: MultiModalParams,
                  features: Mapping[int, np.ndarray],
                  labels: np.ndarray) -> tuple[float, Gradient]:
    """Mean softmax cross-entropy over the batch and its exact gradient.

    The log-sum-exp is computed with max subtraction, so large scores do not
    overflow. Returns a Gradient with exactly the block structure of params.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ShapeMismatchError("empty batch")
    if labels.min() < 0 or labels.max() >= arch.num_classes:
        raise ShapeMismatchError("labels outside 0..C-1")
    scores, enc_cache, layers, acts = _forward_cached(arch, params, features)
    batch = scores.shape[0]
    if labels.shape[0] != batch:
        raise ShapeMismatchError("labels disagree with batch size")

    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(-(shifted[np.arange(batch), labels] - log_norm).mean())

    d = np.exp(shifted - log_norm[:, None])
    d[np.arange(batch), labels] -= 1.0
    d /= batch

    head_id = params.head_id
    grads_head: list[np.ndarray | None] = [None] * (2 * len(layers))
    grads_head[-2] = d.T @ acts[-1]
    grads_head[-1] = d.sum(axis=0)
    d = d @ layers[-1][0]
    for i in range(len(layers) - 2, -1, -1):
        d = d * (1.0 - acts[i + 1] * acts[i + 1])
        grads_head[2 * i] = d.T @ acts[i]
        grads_head[2 * i + 1] = d.sum(axis=0)
        d = d @ layers[i][0]

    f = arch.feature_len
    gblocks = {head_id: ParamBlock(
        head_id, np.concatenate([g.ravel() for g in grads_head]),
        params.blocks[head_id].shapes)}
    for m in params.owned:
        _, _, w2, _ = params.blocks[m].arrays()
        x, h = enc_cache[m]
        dfeat = d[:, (m - 1) * f: m * f]
        gw2 = dfeat.T @ h
        gb2 = dfeat.sum(axis=0)
        dpre = (dfeat @ w2) * (1.0 - h * h)
        gw1 = dpre.T @ x
        gb1 = dpre.sum(axis=0)
        gblocks[m] = ParamBlock(
            m, np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2]),
            params.blocks[m].shapes)
    return loss, MultiModalParams(gblocks, params.owned)


def sgd_step(params: MultiModalParams, grad: Gradient, eta: float) -> MultiModalParams:
    """One plain gradient step; block structure is preserved exactly."""
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    if set(params.blocks) != set(grad.blocks):
        raise ShapeMismatchError("gradient blocks do not match parameter blocks")
    new_blocks = {}
    for b, p in params.blocks.items():
        g = grad.blocks[b]
        if not p.same_structure(g):
            raise ShapeMismatchError(f"block {b}: gradient structure differs")
        new_blocks[b] = ParamBlock(b, p.values - eta * g.values, p.shapes)
    return MultiModalParams(new_blocks, params.owned)


def param_size_bits(block: ParamBlock) -> int:
    """Wire size of one block."""
    return BITS_PER_PARAM * block.param_count


def flops_per_iteration(arch: ArchSpec, owned: Sequence[int], batch_size: int) -> dict[int, int]:
    """Per-block FLOPs of one training iteration at the given batch size."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    block_ids = (*sorted(owned), arch.shared_block_id)
    return {b: FLOPS_PER_PARAM * arch.block_param_count(b) * batch_size for b in block_ids}
