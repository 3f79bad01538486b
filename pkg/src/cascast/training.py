"""Training loop, evaluation, baselines, and run reporting.

One Adam step per batch of cascades; the combined objective is the batch
MSLE on log popularity plus lambda times the token-wise reconstruction
error. Early stopping watches validation MSLE with a fixed patience, the
best-validation adapter state is restored at the end, and a checksum audit
proves the frozen backbone never moved.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .adapter import log_popularity, mape, msle
from .autograd import Tape, Tensor, backward
from .model import CascadeModel

CSV_COLUMNS = (
    "run_id",
    "dataset",
    "t_obs",
    "variant",
    "msle",
    "mape",
    "epochs",
    "wall_clock_s",
    "learnable_params",
    "total_params",
)

REPORT_SCHEMA_VERSION = 1


class TrainAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 60
    patience: int = 16
    loss_weight: float = 1.0
    seed: int = 0
    staged: bool = False

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.loss_weight < 0:
            raise ValueError("loss_weight must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class RunReport:
    run_id: str
    dataset: str
    t_obs: float
    variant: str
    msle: float
    mape: float
    epochs: int
    wall_clock_s: float
    learnable_params: int
    total_params: int
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)

    def csv_row(self) -> str:
        vals = [getattr(self, c) for c in CSV_COLUMNS]
        return ",".join(
            f"{v:.6f}" if isinstance(v, float) else str(v) for v in vals
        )

    def to_json(self) -> str:
        payload = {"schema_version": REPORT_SCHEMA_VERSION}
        payload.update({c: getattr(self, c) for c in CSV_COLUMNS})
        payload["train_losses"] = list(self.train_losses)
        payload["val_losses"] = list(self.val_losses)
        return json.dumps(payload, indent=2)


@dataclass
class TokenDataset:
    """Cached token sequences with targets and split assignment."""

    name: str
    t_obs: float
    tokens: dict
    targets: dict
    splits: dict

    def ids(self, split: str) -> list:
        return sorted(i for i, s in self.splits.items() if s == split)

    def stack(self, ids) -> tuple:
        toks = np.stack([self.tokens[i] for i in ids])
        targets = np.array([[log_popularity(self.targets[i])] for i in ids])
        return toks, targets

    @property
    def token_shape(self):
        any_id = next(iter(self.tokens))
        return self.tokens[any_id].shape


class Adam:
    def __init__(self, tensors: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.items = sorted(tensors.items())
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(t.values) for n, t in self.items}
        self.v = {n: np.zeros_like(t.values) for n, t in self.items}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, tensor in self.items:
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            tensor.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            tensor.zero_grad()


class EarlyStopper:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = None

    def update(self, epoch: int, score: float) -> bool:
        if score < self.best:
            self.best = score
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return self.best_epoch is not None and epoch - self.best_epoch >= self.patience


def _first_non_finite(tape: Tape, trainables: dict) -> str:
    for name in sorted(trainables):
        if not np.isfinite(trainables[name].values).all():
            return name
    for idx, node in enumerate(tape.nodes):
        if not np.isfinite(node.output.values).all():
            return f"{node.op}#{idx}"
    return "<loss>"


def batch_loss(tape: Tape, model: CascadeModel, tokens: np.ndarray, log_targets: np.ndarray, lam: float, token_only: bool = False):
    y_hat, pair = model.forward_batch(tape, tokens)
    b = tokens.shape[0]
    head_term = tape.scale(tape.mse_sum(y_hat, Tensor(log_targets)), 1.0 / b)
    if pair is None:
        return head_term, y_hat
    t_hat, t_true = pair
    # mean over every predicted entry, so the auxiliary term stays on the
    # same scale as the head term instead of growing with token width
    token_term = tape.scale(
        tape.mse_sum(t_hat, t_true), (lam if lam > 0 else 1.0) / t_hat.values.size
    )
    if token_only:
        return token_term, y_hat
    if lam == 0:
        return head_term, y_hat
    return tape.add(head_term, token_term), y_hat


def predict_split(model: CascadeModel, data: TokenDataset, split: str, batch: int = 256):
    ids = data.ids(split)
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    preds = []
    counts = []
    for lo in range(0, len(ids), batch):
        chunk = ids[lo : lo + batch]
        toks, _ = data.stack(chunk)
        tape = Tape()
        y_hat, _ = model.forward_batch(tape, toks)
        preds.extend(float(v) for v in y_hat.values[:, 0])
        counts.extend(data.targets[i] for i in chunk)
    return np.array(preds), np.array(counts, dtype=np.float64)


def evaluate(model: CascadeModel, data: TokenDataset, split: str, batch: int = 256) -> tuple:
    preds, counts = predict_split(model, data, split, batch)
    return msle(preds, counts), mape(preds, counts)


def train_model(
    model: CascadeModel,
    data: TokenDataset,
    cfg: TrainConfig,
    run_id: str = "run",
    val_metric=None,
) -> RunReport:
    """Train the adapter registry; returns the report with test metrics.

    `val_metric(epoch, model)` is an injectable validation seam (used by
    tests to force stopping behavior); the default evaluates MSLE on the
    val split.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    train_ids = data.ids("train")
    if not train_ids:
        raise ValueError("train split is empty")

    mean_log = float(np.mean([log_popularity(data.targets[i]) for i in train_ids]))
    if "head.2.b" in model.adapter.tensors:
        model.warm_start_head(mean_log)

    pre_checksum = model.checksum_backbone()
    optim = Adam(model.trainable(), cfg.learning_rate)
    stopper = EarlyStopper(cfg.patience)
    best_state = None
    train_losses = []
    val_losses = []

    staged_epochs = max(1, cfg.max_epochs // 3) if cfg.staged else 0
    epochs_run = 0
    for epoch in range(1, cfg.max_epochs + 1):
        epochs_run = epoch
        token_only = cfg.staged and epoch <= staged_epochs
        order = rng.permutation(len(train_ids))
        total = 0.0
        seen = 0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [train_ids[j] for j in order[lo : lo + cfg.batch_size]]
            toks, targets = data.stack(chunk)
            tape = Tape()
            loss, _ = batch_loss(tape, model, toks, targets, cfg.loss_weight, token_only)
            val = loss.values.item()
            if not np.isfinite(val):
                culprit = _first_non_finite(tape, model.trainable())
                raise TrainAbort(
                    f"non-finite loss at epoch {epoch}; first NaN in tensor {culprit!r}"
                )
            backward(tape, loss)
            optim.step()
            total += val * len(chunk)
            seen += len(chunk)
        train_losses.append(total / seen)

        if val_metric is not None:
            score = float(val_metric(epoch, model))
        else:
            score, _ = evaluate(model, data, "val")
        val_losses.append(score)
        if not token_only:
            if stopper.update(epoch, score):
                best_state = {n: t.values.copy() for n, t in model.adapter.named()}
            if stopper.should_stop(epoch):
                break

    if best_state is not None:
        for name, tensor in model.adapter.named():
            tensor.values[:] = best_state[name]

    post_checksum = model.checksum_backbone()
    if pre_checksum != post_checksum:
        raise TrainAbort("frozen backbone was modified during training")

    try:
        test_msle, test_mape = evaluate(model, data, "test")
    except ValueError:
        test_msle = test_mape = float("nan")
    return RunReport(
        run_id=run_id,
        dataset=data.name,
        t_obs=data.t_obs,
        variant=model.variant,
        msle=test_msle,
        mape=test_mape,
        epochs=epochs_run,
        wall_clock_s=time.perf_counter() - start,
        learnable_params=model.learnable_count(),
        total_params=model.total_count(),
        train_losses=train_losses,
        val_losses=val_losses,
    )


# -- feature baselines -------------------------------------------------------


def fit_linear_baseline(features: dict, targets: dict, splits: dict) -> tuple:
    """Least-squares on train; returns (test_msle, test_mape, weights)."""
    train_ids = sorted(i for i, s in splits.items() if s == "train")
    test_ids = sorted(i for i, s in splits.items() if s == "test")
    x = np.array([features[i] for i in train_ids])
    y = np.array([log_popularity(targets[i]) for i in train_ids])
    xb = np.hstack([x, np.ones((len(x), 1))])
    w, *_ = np.linalg.lstsq(xb, y, rcond=None)
    xt = np.hstack([np.array([features[i] for i in test_ids]), np.ones((len(test_ids), 1))])
    preds = xt @ w
    counts = np.array([targets[i] for i in test_ids], dtype=np.float64)
    return msle(preds, counts), mape(preds, counts), w


def fit_mlp_baseline(
    features: dict,
    targets: dict,
    splits: dict,
    hidden: int = 32,
    epochs: int = 400,
    lr: float = 1e-3,
    seed: int = 0,
) -> tuple:
    """Two-layer perceptron with a linear skip initialized at the
    least-squares solution, so it starts where the linear baseline ends and
    full-batch Adam plus best-val selection can only refine from there."""
    ids = {s: sorted(i for i, k in splits.items() if k == s) for s in ("train", "val", "test")}
    xs = {s: np.array([features[i] for i in ids[s]]) for s in ids}
    ys = {s: np.array([[log_popularity(targets[i])] for i in ids[s]]) for s in ids}
    mu = xs["train"].mean(axis=0)
    sd = xs["train"].std(axis=0)
    sd[sd == 0] = 1.0
    xs = {s: (xs[s] - mu) / sd for s in xs}

    xb = np.hstack([xs["train"], np.ones((len(xs["train"]), 1))])
    w0, *_ = np.linalg.lstsq(xb, ys["train"][:, 0], rcond=None)

    rng = np.random.default_rng(seed)
    f = xs["train"].shape[1]
    params = {
        "skip.w": Tensor(w0[:-1].reshape(f, 1), requires_grad=True),
        "skip.b": Tensor(np.array([[w0[-1]]]), requires_grad=True),
        "mlp.w1": Tensor(rng.normal(0, np.sqrt(2.0 / (f + hidden)), (f, hidden)), requires_grad=True),
        "mlp.b1": Tensor(np.zeros((1, hidden)), requires_grad=True),
        "mlp.w2": Tensor(np.zeros((hidden, 1)), requires_grad=True),
        "mlp.b2": Tensor(np.zeros((1, 1)), requires_grad=True),
    }

    def forward(tape, x_np):
        x = Tensor(x_np)
        lin = tape.add(tape.matmul(x, params["skip.w"]), params["skip.b"])
        h = tape.gelu(tape.add(tape.matmul(x, params["mlp.w1"]), params["mlp.b1"]))
        nl = tape.add(tape.matmul(h, params["mlp.w2"]), params["mlp.b2"])
        return tape.add(lin, nl)

    optim = Adam(params, lr)
    best = (np.inf, {n: t.values.copy() for n, t in params.items()})
    m = len(xs["train"])
    for _ in range(epochs):
        tape = Tape()
        out = forward(tape, xs["train"])
        loss = tape.scale(tape.mse_sum(out, Tensor(ys["train"])), 1.0 / m)
        backward(tape, loss)
        optim.step()
        val_out = forward(Tape(), xs["val"]).values
        val_msle = float(np.mean((val_out - ys["val"]) ** 2))
        if val_msle < best[0]:
            best = (val_msle, {n: t.values.copy() for n, t in params.items()})
    for name, tensor in params.items():
        tensor.values[:] = best[1][name]
    preds = forward(Tape(), xs["test"]).values[:, 0]
    counts = np.array([targets[i] for i in ids["test"]], dtype=np.float64)
    return msle(preds, counts), mape(preds, counts)
