"""Frozen decoder-only micro-transformer.

Stands in for a pretrained language model: pre-norm causal self-attention
blocks with learned absolute positions. All weights are frozen; gradients
flow through them to whatever produced the input rows. Output row k is the
hidden prediction aligned to input position k, read as the model's guess for
token k+1.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tape, Tensor, current_dtype

_MASK_FILL = -1e9


@dataclass(frozen=True)
class BackboneConfig:
    model_dim: int = 64
    layers: int = 4
    heads: int = 4
    ffn_mult: int = 4
    max_context: int = 32
    init_seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.model_dim % self.heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if self.ffn_mult < 1:
            raise ValueError("ffn_mult must be >= 1")
        if self.max_context < 2:
            raise ValueError("max_context must be >= 2")


class BackboneParams:
    """Named frozen tensors plus the config that shaped them."""

    def __init__(self, cfg: BackboneConfig, tensors: dict):
        self.cfg = cfg
        self.tensors = tensors
        self.freeze_locked = False

    def named(self):
        return sorted(self.tensors.items())

    def parameter_count(self) -> int:
        return sum(t.values.size for t in self.tensors.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def parameter_count(cfg: BackboneConfig) -> int:
    """Closed-form tensor-entry count for a config, by construction."""
    d, f = cfg.model_dim, cfg.ffn_mult
    attn = 4 * d * d + 4 * d
    ffn = 2 * f * d * d + f * d + d
    norms = 4 * d
    per_layer = attn + ffn + norms
    return cfg.layers * per_layer + 2 * d + cfg.max_context * d


def init_backbone(cfg: BackboneConfig) -> BackboneParams:
    rng = np.random.default_rng(cfg.init_seed)
    d, f = cfg.model_dim, cfg.ffn_mult
    std = 0.02 / math.sqrt(cfg.layers)

    def w(shape, scale):
        return Tensor(rng.normal(0.0, scale, size=shape))

    tensors = {"pos": w((cfg.max_context, d), 0.02)}
    for i in range(cfg.layers):
        p = f"l{i}."
        tensors[p + "ln1.g"] = Tensor(np.ones((1, d)))
        tensors[p + "ln1.b"] = Tensor(np.zeros((1, d)))
        for name in ("wq", "wk", "wv", "wo"):
            tensors[p + name] = w((d, d), std)
        for name in ("bq", "bk", "bv", "bo"):
            tensors[p + name] = Tensor(np.zeros((1, d)))
        tensors[p + "ln2.g"] = Tensor(np.ones((1, d)))
        tensors[p + "ln2.b"] = Tensor(np.zeros((1, d)))
        tensors[p + "w1"] = w((d, f * d), std)
        tensors[p + "b1"] = Tensor(np.zeros((1, f * d)))
        tensors[p + "w2"] = w((f * d, d), std)
        tensors[p + "b2"] = Tensor(np.zeros((1, d)))
    tensors["lnf.g"] = Tensor(np.ones((1, d)))
    tensors["lnf.b"] = Tensor(np.zeros((1, d)))
    for name, t in tensors.items():
        t.name = name
    return BackboneParams(cfg, tensors)


def _causal_mask(n: int) -> Tensor:
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = _MASK_FILL
    return Tensor(m)


def stack_forward(tape: Tape, get, layers: int, heads: int, x: Tensor, mask: Tensor, pos_rows: Tensor) -> Tensor:
    """Core pre-norm transformer loop over named tensors.

    `get(name)` resolves tensor names ("l0.wq", "lnf.g", ...), so the same
    loop serves the frozen backbone and any trainable clone of it. The
    caller supplies the attention mask (causal, or block-causal for packed
    batches) and the positional rows aligned with x.
    """
    n, d = x.values.shape
    dh = d // heads
    inv_sqrt = 1.0 / math.sqrt(dh)

    x = tape.add(x, pos_rows)
    for i in range(layers):
        p = f"l{i}."
        h = tape.layernorm(x, get(p + "ln1.g"), get(p + "ln1.b"))
        q = tape.add(tape.matmul(h, get(p + "wq")), get(p + "bq"))
        k = tape.add(tape.matmul(h, get(p + "wk")), get(p + "bk"))
        v = tape.add(tape.matmul(h, get(p + "wv")), get(p + "bv"))
        heads_out = []
        for hd in range(heads):
            lo, hi = hd * dh, (hd + 1) * dh
            qh = tape.slice_cols(q, lo, hi)
            kh = tape.slice_cols(k, lo, hi)
            vh = tape.slice_cols(v, lo, hi)
            scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt)
            weights = tape.softmax_rows(tape.add(scores, mask))
            heads_out.append(tape.matmul(weights, vh))
        merged = heads_out[0] if len(heads_out) == 1 else tape.concat_cols(heads_out)
        attn_out = tape.add(tape.matmul(merged, get(p + "wo")), get(p + "bo"))
        x = tape.add(x, attn_out)

        h2 = tape.layernorm(x, get(p + "ln2.g"), get(p + "ln2.b"))
        f1 = tape.gelu(tape.add(tape.matmul(h2, get(p + "w1")), get(p + "b1")))
        f2 = tape.add(tape.matmul(f1, get(p + "w2")), get(p + "b2"))
        x = tape.add(x, f2)
    return tape.layernorm(x, get("lnf.g"), get("lnf.b"))


def backbone_forward(tape: Tape, params: BackboneParams, z: Tensor) -> Tensor:
    """Apply the frozen stack to (n, D) input rows; returns (n, D)."""
    cfg = params.cfg
    n, d = z.values.shape
    if d != cfg.model_dim:
        raise ValueError(f"input width {d} != model_dim {cfg.model_dim}")
    if n > cfg.max_context:
        raise ValueError(f"context {n} exceeds max_context {cfg.max_context}")
    pos = tape.slice_rows(params["pos"], 0, n)
    return stack_forward(
        tape, params.__getitem__, cfg.layers, cfg.heads, z, _causal_mask(n), pos
    )


def _smooth_sequence(rng, length: int, dim: int) -> np.ndarray:
    """Random mixture of low-frequency sinusoids, one curve per dimension."""
    t = np.linspace(0.0, 1.0, length)[:, None]
    freq = rng.uniform(0.5, 2.5, size=(1, dim))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(1, dim))
    amp = rng.uniform(0.2, 1.0, size=(1, dim))
    return amp * np.sin(2.0 * np.pi * freq * t + phase)


def pretrain_backbone(
    params: BackboneParams, steps: int, seed: int = 0, lr: float = 1e-3
) -> tuple:
    """Optional warm-up: next-vector prediction on synthetic smooth sequences.

    Unfreezes the stack for `steps` gradient descent updates, then re-freezes
    every tensor and locks the params against further pretraining. Returns
    (params, first_loss, last_loss).
    """
    if params.freeze_locked:
        raise RuntimeError("backbone is freeze-locked; pretraining already ran")
    params.freeze_locked = True
    if steps == 0:
        return params, None, None

    cfg = params.cfg
    rng = np.random.default_rng(seed)
    length = min(cfg.max_context, 16)
    for t in params.tensors.values():
        t.requires_grad = True
        t.path = True
    first = last = None
    try:
        for _ in range(steps):
            seq = _smooth_sequence(rng, length + 1, cfg.model_dim).astype(current_dtype())
            tape = Tape()
            out = backbone_forward(tape, params, Tensor(seq[:-1]))
            loss = tape.mse_sum(out, Tensor(seq[1:]))
            from .autograd import backward

            backward(tape, loss)
            val = loss.values.item() / length
            if first is None:
                first = val
            last = val
            live = [t for t in params.tensors.values() if t.grad is not None]
            norm = math.sqrt(sum(float((t.grad**2).sum()) for t in live))
            clip = min(1.0, 1.0 / (norm + 1e-12))
            for t in live:
                t.values = t.values - lr * clip * t.grad
                t.zero_grad()
    finally:
        for t in params.tensors.values():
            t.requires_grad = False
            t.path = False
            t.zero_grad()
    return params, first, last
