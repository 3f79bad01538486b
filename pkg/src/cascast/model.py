"""Model assembly: frozen backbone plus trainable shell, in eight variants.

The full model projects cascade tokens into the backbone's space, injects
prompt tokens, runs the frozen causal stack, adapts the hidden rows back to
token space for next-token supervision, and reads the popularity off the
last predicted token. Each ablation variant rewires exactly one stage.

Every trainable tensor lives in the adapter registry; the backbone, prompt
projection, and all masks/selectors are frozen by construction.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .adapter import (
    AdapterConfig,
    AdapterParams,
    PromptEncoder,
    adapt,
    init_adapter,
    inject,
    load_template,
    predict_log_popularity,
    project,
)
from .autograd import Tape, Tensor
from .backbone import (
    _MASK_FILL,
    BackboneConfig,
    init_backbone,
    stack_forward,
)

VARIANTS = (
    "full",
    "wo-auto",
    "wo-prompt",
    "wo-mapping",
    "wo-global",
    "wo-llm",
    "llm2trans",
    "llm2rnn",
)

_FROZEN_STACK = frozenset({"full", "wo-prompt", "wo-mapping", "wo-global"})


@dataclass(frozen=True)
class ModelConfig:
    token_dim: int
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    hidden_dim: int = 0
    head_hidden: int = 0
    adapter_seed: int = 0
    prompt_template: str = "synthetic"
    prompt_vocab: int = 4096
    prompt_seed: int = 0


def _block_causal_mask(batch: int, rows: int) -> np.ndarray:
    """Packed-batch attention mask: causal within a cascade, blocked across."""
    n = batch * rows
    m = np.full((n, n), _MASK_FILL)
    block = np.full((rows, rows), _MASK_FILL)
    block[np.tril_indices(rows)] = 0.0
    for b in range(batch):
        lo = b * rows
        m[lo : lo + rows, lo : lo + rows] = block
    return m


def _tile_selector(batch: int, rows: int, max_context: int) -> np.ndarray:
    """(batch*rows, max_context) matrix mapping positional table -> packed rows."""
    sel = np.zeros((batch * rows, max_context))
    for b in range(batch):
        for k in range(rows):
            sel[b * rows + k, k] = 1.0
    return sel


def _last_row_selector(batch: int, rows: int) -> np.ndarray:
    sel = np.zeros((batch, batch * rows))
    for b in range(batch):
        sel[b, b * rows + rows - 1] = 1.0
    return sel


def _mean_pool_selector(batch: int, rows: int) -> np.ndarray:
    sel = np.zeros((batch, batch * rows))
    for b in range(batch):
        sel[b, b * rows : (b + 1) * rows] = 1.0 / rows
    return sel


def _linear(tape: Tape, params: AdapterParams, prefix: str, x: Tensor) -> Tensor:
    return tape.add(tape.matmul(x, params[prefix + ".w"]), params[prefix + ".b"])


class CascadeModel:
    def __init__(self, cfg: ModelConfig, variant: str = "full"):
        if variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}"
            )
        self.cfg = cfg
        self.variant = variant
        s, d = cfg.token_dim, cfg.backbone.model_dim
        acfg = AdapterConfig(
            token_dim=s,
            model_dim=d,
            hidden_dim=cfg.hidden_dim,
            head_hidden=cfg.head_hidden,
            init_seed=cfg.adapter_seed,
            prompt_vocab=cfg.prompt_vocab,
        )
        self.adapter = self._build_trainable(acfg, variant)
        self.backbone = init_backbone(cfg.backbone) if variant in _FROZEN_STACK else None
        self.uses_prompts = variant not in ("wo-prompt", "wo-auto")
        self.prompts = (
            PromptEncoder(
                load_template(cfg.prompt_template),
                model_dim=d,
                vocab=cfg.prompt_vocab,
                seed=cfg.prompt_seed,
            )
            if self.uses_prompts
            else None
        )
        self.assert_registry()

    # -- construction ------------------------------------------------------

    def _build_trainable(self, acfg: AdapterConfig, variant: str) -> AdapterParams:
        base = init_adapter(acfg)
        rng = np.random.default_rng(acfg.init_seed + 1)
        s, d = acfg.token_dim, acfg.model_dim
        tensors = dict(base.tensors)

        if variant == "wo-auto":
            tensors = {k: v for k, v in tensors.items() if k.startswith("head.")}
        elif variant == "wo-mapping":
            tensors = {k: v for k, v in tensors.items() if k.startswith("head.")}
            std_p = math.sqrt(2.0 / (s + d))
            tensors["proj.lin.w"] = Tensor(rng.normal(0.0, std_p, (s, d)), requires_grad=True)
            tensors["proj.lin.b"] = Tensor(np.zeros((1, d)), requires_grad=True)
            tensors["adpt.lin.w"] = Tensor(rng.normal(0.0, std_p, (d, s)), requires_grad=True)
            tensors["adpt.lin.b"] = Tensor(np.zeros((1, s)), requires_grad=True)
        elif variant == "llm2trans":
            block_cfg = BackboneConfig(
                model_dim=d,
                layers=1,
                heads=self.cfg.backbone.heads,
                ffn_mult=self.cfg.backbone.ffn_mult,
                max_context=self.cfg.backbone.max_context,
                init_seed=acfg.init_seed + 1,
            )
            block = init_backbone(block_cfg)
            for name, t in block.tensors.items():
                t.requires_grad = True
                t.path = True
                tensors["block." + name] = t
            self._block_cfg = block_cfg
        elif variant == "llm2rnn":
            std = math.sqrt(1.0 / d)
            tensors["block.wx"] = Tensor(rng.normal(0.0, std, (d, d)), requires_grad=True)
            tensors["block.wh"] = Tensor(rng.normal(0.0, std, (d, d)), requires_grad=True)
            tensors["block.bh"] = Tensor(np.zeros((1, d)), requires_grad=True)

        for name, t in tensors.items():
            t.name = name
        return AdapterParams(acfg, tensors)

    # -- bookkeeping ---------------------------------------------------------

    def trainable(self) -> dict:
        return self.adapter.tensors

    def learnable_count(self) -> int:
        return self.adapter.parameter_count()

    def total_count(self) -> int:
        total = self.learnable_count()
        if self.backbone is not None:
            total += self.backbone.parameter_count()
        if self.prompts is not None:
            total += self.prompts.projection.size
        return total

    def assert_registry(self) -> None:
        """Trainable tensors live only in the adapter registry."""
        for name, t in self.adapter.named():
            if not t.requires_grad:
                raise AssertionError(f"registry tensor {name} is not trainable")
        if self.backbone is not None:
            for name, t in self.backbone.named():
                if t.requires_grad:
                    raise AssertionError(f"backbone tensor {name} is trainable")

    def checksum_backbone(self) -> str:
        if self.backbone is None:
            return ""
        h = hashlib.sha256()
        for name, t in self.backbone.named():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.values).tobytes())
        return h.hexdigest()

    def warm_start_head(self, offset: float) -> None:
        """Bias the head's output unit so training starts at the base rate."""
        self.adapter["head.2.b"].values[:] = float(offset)

    # -- forward -------------------------------------------------------------

    def _project(self, tape, x):
        if self.variant == "wo-mapping":
            return _linear(tape, self.adapter, "proj.lin", x)
        return project(tape, self.adapter, x)

    def _adapt(self, tape, h):
        if self.variant == "wo-mapping":
            return _linear(tape, self.adapter, "adpt.lin", h)
        return adapt(tape, self.adapter, h)

    def _rnn(self, tape, x: Tensor, batch: int, rows: int) -> Tensor:
        """Position-major tanh recurrence over packed rows."""
        wx, wh, bh = self.adapter["block.wx"], self.adapter["block.wh"], self.adapter["block.bh"]
        state = None
        outs = []
        for k in range(rows):
            xk = tape.slice_rows(x, k * batch, (k + 1) * batch)
            pre = tape.add(tape.matmul(xk, wx), bh)
            if state is not None:
                pre = tape.add(pre, tape.matmul(state, wh))
            state = tape.tanh(pre)
            outs.append(tape.transpose(state))
        stacked = outs[0] if rows == 1 else tape.concat_cols(outs)
        return tape.transpose(stacked)

    def forward_batch(self, tape: Tape, tokens: np.ndarray):
        """tokens (B, N, S) -> (y_hat (B,1) Tensor, (t_hat, t_true) or None).

        Rows are packed cascade-major for attention variants and
        position-major for the recurrent one; either way t_hat and t_true
        share the same layout, and y_hat row b belongs to cascade b.
        """
        if tokens.ndim != 3:
            raise ValueError(f"expected (batch, patches, width), got {tokens.shape}")
        b, n, s = tokens.shape
        if s != self.cfg.token_dim:
            raise ValueError(f"token width {s} != configured {self.cfg.token_dim}")

        if self.variant == "wo-auto":
            flat = Tensor(tokens.reshape(b * n, s))
            pooled = tape.matmul(Tensor(_mean_pool_selector(b, n)), flat)
            return predict_log_popularity(tape, self.adapter, pooled), None

        if n < 2:
            raise ValueError("autoregressive variants need at least 2 patches")
        rows = n - 1
        position_major = self.variant == "llm2rnn"
        if position_major:
            x_np = tokens[:, :-1, :].transpose(1, 0, 2).reshape(rows * b, s)
            t_true_np = tokens[:, 1:, :].transpose(1, 0, 2).reshape(rows * b, s)
        else:
            x_np = tokens[:, :-1, :].reshape(b * rows, s)
            t_true_np = tokens[:, 1:, :].reshape(b * rows, s)

        z = self._project(tape, Tensor(x_np))
        if self.uses_prompts:
            prow = self.prompts.encode_rows(1, rows)
            tiled = np.repeat(prow, b, axis=0) if position_major else np.tile(prow, (b, 1))
            z = inject(tape, z, Tensor(tiled))

        if self.variant == "wo-llm":
            hidden = z
        elif self.variant == "llm2rnn":
            hidden = self._rnn(tape, z, b, rows)
        elif self.variant == "llm2trans":
            cfg = self._block_cfg
            if rows > cfg.max_context:
                raise ValueError(f"context {rows} exceeds max_context {cfg.max_context}")
            pos = tape.matmul(
                Tensor(_tile_selector(b, rows, cfg.max_context)),
                self.adapter["block.pos"],
            )
            hidden = stack_forward(
                tape,
                lambda name: self.adapter["block." + name],
                cfg.layers,
                cfg.heads,
                z,
                Tensor(_block_causal_mask(b, rows)),
                pos,
            )
        else:
            cfg = self.backbone.cfg
            if rows > cfg.max_context:
                raise ValueError(f"context {rows} exceeds max_context {cfg.max_context}")
            pos = tape.matmul(
                Tensor(_tile_selector(b, rows, cfg.max_context)),
                self.backbone["pos"],
            )
            hidden = stack_forward(
                tape,
                self.backbone.__getitem__,
                cfg.layers,
                cfg.heads,
                z,
                Tensor(_block_causal_mask(b, rows)),
                pos,
            )

        t_hat = self._adapt(tape, hidden)
        if position_major:
            head_in = tape.slice_rows(t_hat, (rows - 1) * b, rows * b)
        else:
            head_in = tape.matmul(Tensor(_last_row_selector(b, rows)), t_hat)
        y_hat = predict_log_popularity(tape, self.adapter, head_in)
        return y_hat, (t_hat, Tensor(t_true_np))


def zero_global_columns(tokens: np.ndarray, max_length: int, d_l: int, d_g: int) -> np.ndarray:
    """Drop the global-embedding coordinates from cached tokens (wo-global)."""
    out = tokens.copy()
    d = d_l + d_g
    if tokens.shape[-1] != max_length * d:
        raise ValueError(
            f"token width {tokens.shape[-1]} != max_length*d = {max_length * d}"
        )
    for slot in range(max_length):
        lo = slot * d + d_l
        out[..., lo : lo + d_g] = 0.0
    return out
