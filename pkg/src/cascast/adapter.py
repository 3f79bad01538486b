"""Trainable shell around the frozen backbone.

Projector (token space S -> model space D), adapter (D -> S), scalar task
head (S -> 1), frozen hashed-text prompt encoding with additive injection,
and the two objectives: token-wise squared error and log-scale popularity
error (MSLE), plus the MAPE report metric.
"""

import math
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .autograd import Tape, Tensor

_WORD_SPLIT = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class AdapterConfig:
    token_dim: int
    model_dim: int
    hidden_dim: int = 0  # 0 -> max(token_dim, model_dim)
    head_hidden: int = 0  # 0 -> model_dim
    init_seed: int = 0
    prompt_vocab: int = 4096

    def __post_init__(self):
        if self.token_dim < 1 or self.model_dim < 1:
            raise ValueError("token_dim and model_dim must be positive")
        if self.prompt_vocab < 1:
            raise ValueError("prompt_vocab must be positive")

    @property
    def hidden(self) -> int:
        return self.hidden_dim or max(self.token_dim, self.model_dim)

    @property
    def head_width(self) -> int:
        return self.head_hidden or self.model_dim


class AdapterParams:
    """The only trainable tensors in the whole model."""

    def __init__(self, cfg: AdapterConfig, tensors: dict):
        self.cfg = cfg
        self.tensors = tensors

    def named(self):
        return sorted(self.tensors.items())

    def parameter_count(self) -> int:
        return sum(t.values.size for t in self.tensors.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def init_adapter(cfg: AdapterConfig) -> AdapterParams:
    rng = np.random.default_rng(cfg.init_seed)
    s, d, h, hh = cfg.token_dim, cfg.model_dim, cfg.hidden, cfg.head_width

    def layer(prefix, fan_in, fan_out, tensors):
        std = math.sqrt(2.0 / (fan_in + fan_out))
        tensors[prefix + ".w"] = Tensor(
            rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True
        )
        tensors[prefix + ".b"] = Tensor(np.zeros((1, fan_out)), requires_grad=True)

    tensors = {}
    layer("proj.1", s, h, tensors)
    layer("proj.2", h, d, tensors)
    layer("adpt.1", d, h, tensors)
    layer("adpt.2", h, s, tensors)
    layer("head.1", s, hh, tensors)
    layer("head.2", hh, 1, tensors)
    for name, t in tensors.items():
        t.name = name
    return AdapterParams(cfg, tensors)


def _mlp(tape: Tape, params: AdapterParams, prefix: str, x: Tensor) -> Tensor:
    h = tape.gelu(tape.add(tape.matmul(x, params[prefix + ".1.w"]), params[prefix + ".1.b"]))
    return tape.add(tape.matmul(h, params[prefix + ".2.w"]), params[prefix + ".2.b"])


def project(tape: Tape, params: AdapterParams, tokens: Tensor) -> Tensor:
    """(n, S) token rows -> (n, D) model-space rows."""
    if tokens.values.shape[1] != params.cfg.token_dim:
        raise ValueError(
            f"projector expects width {params.cfg.token_dim}, got {tokens.values.shape[1]}"
        )
    return _mlp(tape, params, "proj", tokens)


def adapt(tape: Tape, params: AdapterParams, hidden: Tensor) -> Tensor:
    """(n, D) backbone outputs -> (n, S) predicted tokens."""
    if hidden.values.shape[1] != params.cfg.model_dim:
        raise ValueError(
            f"adapter expects width {params.cfg.model_dim}, got {hidden.values.shape[1]}"
        )
    return _mlp(tape, params, "adpt", hidden)


def predict_log_popularity(tape: Tape, params: AdapterParams, t_hat_last: Tensor) -> Tensor:
    """Scalar head on the final predicted token; output is log2(P+1) scale."""
    if t_hat_last.values.shape[1] != params.cfg.token_dim:
        raise ValueError(
            f"head expects width {params.cfg.token_dim}, got {t_hat_last.values.shape[1]}"
        )
    return _mlp(tape, params, "head", t_hat_last)


def inject(tape: Tape, z: Tensor, prompts: Tensor) -> Tensor:
    if z.values.shape != prompts.values.shape:
        raise ValueError(
            f"prompt shape {prompts.values.shape} does not match input {z.values.shape}"
        )
    return tape.add(z, prompts)


def token_loss(tape: Tape, t_hat: Tensor, t_true: Tensor) -> Tensor:
    """(1/(N-1)) * sum of squared errors over the N-1 supervised positions."""
    rows = t_hat.values.shape[0]
    if rows < 1:
        raise ValueError("token loss needs at least one supervised position")
    return tape.scale(tape.mse_sum(t_hat, t_true), 1.0 / rows)


def popularity_from_log(y_hat: float) -> int:
    """Invert the log2(P+1) transform; the root itself always counts."""
    raw = 2.0 ** float(y_hat) - 1.0
    return max(1, int(math.floor(raw + 0.5)))


def log_popularity(count) -> float:
    return float(np.log2(np.asarray(count, dtype=np.float64) + 1.0))


def msle(y_hat, counts) -> float:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if y_hat.size == 0 or y_hat.shape != counts.shape:
        raise ValueError("msle needs matching non-empty prediction/count lists")
    if (counts < 1).any():
        raise ValueError("popularity counts must be >= 1")
    return float(np.mean((y_hat - np.log2(counts + 1.0)) ** 2))


def mape(y_hat, counts) -> float:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if y_hat.size == 0 or y_hat.shape != counts.shape:
        raise ValueError("mape needs matching non-empty prediction/count lists")
    if (counts < 1).any():
        raise ValueError("popularity counts must be >= 1")
    truth = np.log2(counts + 1.0)
    return float(np.mean(np.abs(y_hat - truth) / np.log2(counts + 2.0)))


# -- prompts ---------------------------------------------------------------


def fnv1a(token: str) -> int:
    """32-bit FNV-1a over the token's UTF-8 bytes."""
    h = 2166136261
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * 16777619) & 0xFFFFFFFF
    return h


def load_template(name: str) -> str:
    return resources.files("cascast").joinpath("prompts", f"{name}.txt").read_text()


class PromptEncoder:
    """Frozen hashed bag-of-words stand-in for a text encoder.

    Rendered template text is lowercased, split on anything outside
    [a-z0-9], hashed token-by-token (FNV-1a mod V) into a count vector, and
    pushed through a frozen seeded Gaussian projection scaled by 1/sqrt(V).
    """

    def __init__(self, template: str, model_dim: int, vocab: int = 4096, seed: int = 0):
        self.template = template
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((vocab, model_dim))
        self._scale = 1.0 / math.sqrt(vocab)
        self._cache = {}

    def render(self, n: int) -> str:
        if n < 1:
            raise ValueError("patch index starts at 1")
        return self.template.replace("n-th", f"{n}-th")

    def counts(self, n: int) -> np.ndarray:
        out = np.zeros(self.vocab, dtype=np.float64)
        for tok in _WORD_SPLIT.split(self.render(n).lower()):
            if tok:
                out[fnv1a(tok) % self.vocab] += 1.0
        return out

    def encode(self, n: int) -> np.ndarray:
        if n not in self._cache:
            self._cache[n] = (self.counts(n) @ self.projection) * self._scale
        return self._cache[n].copy()

    def encode_rows(self, first: int, last: int) -> np.ndarray:
        """Prompt matrix for patch indices first..last inclusive, one row each."""
        return np.stack([self.encode(n) for n in range(first, last + 1)])
