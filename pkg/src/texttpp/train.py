"""Gradients, Adam, the early-stopping training loop and evaluation metrics."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import DataError, NumericalError
from .heads import LossWeights, predict_time, sequence_terms, total_objective
from .tpp import MCConfig

log = logging.getLogger(__name__)

SCOPES = ("all", "lora_and_heads", "heads_only")
SCOPE_GROUPS = {
    "all": ("embedding", "temporal", "backbone", "lora", "heads"),
    "lora_and_heads": ("lora", "temporal", "heads"),
    "heads_only": ("heads",),
}
EVAL_SALT = 0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 8
    max_epochs: int = 20
    patience: int = 3
    train_fraction: float = 1.0
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    mc_samples: int = 20
    trainable_scope: str = "all"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must lie in (0, 1]")
        if self.trainable_scope not in SCOPES:
            raise ValueError(f"trainable_scope must be one of {SCOPES}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")

    @property
    def mc(self) -> MCConfig:
        return MCConfig(self.mc_samples, self.seed)


def trainable_parameters(model, scope: str) -> dict[str, torch.nn.Parameter]:
    groups = model.parameter_groups()
    return {name: p for g in SCOPE_GROUPS[scope] for name, p in groups[g]}


def compute_gradients(objective: torch.Tensor, params: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of ``objective`` for exactly the given parameters."""
    if not torch.isfinite(objective):
        raise NumericalError("objective is not finite")
    names = list(params)
    grads = torch.autograd.grad(objective, [params[n] for n in names], allow_unused=True)
    out = {}
    for name, g in zip(names, grads):
        g = torch.zeros_like(params[name]) if g is None else g
        if not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name}")
        out[name] = g
    return out


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    """Bias-corrected Adam update, applied in place."""
    state.step += 1
    c1 = 1 - beta1**state.step
    c2 = 1 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, torch.zeros_like(p))
        v = state.v.setdefault(name, torch.zeros_like(p))
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        p -= lr * (m / c1) / (torch.sqrt(v / c2) + eps)
    return state


@dataclass(frozen=True)
class Metrics:
    ll_per_event: float
    accuracy: float
    rmse: float
    num_events: int
    num_sequences: int
    num_correct: int

    def to_dict(self, conventions: dict | None = None) -> dict:
        return {
            "ll_per_event": self.ll_per_event,
            "accuracy": self.accuracy,
            "rmse": self.rmse,
            "num_events": self.num_events,
            "num_sequences": self.num_sequences,
            "conventions": conventions or {},
        }


def _encode_all(model, sequences):
    usable = [s for s in sequences if len(s) >= 2]
    if len(usable) < len(sequences):
        log.info("skipping %d sequence(s) with fewer than two events", len(sequences) - len(usable))
    return [model.encode(s) for s in usable]


def _sequences(data):
    return list(getattr(data, "sequences", data))


def _batches(items, size):
    for start in range(0, len(items), size):
        yield items[start : start + size]


@torch.no_grad()
def evaluate(model, data, mc: MCConfig | None = None, batch_size: int = 32, encoded=None) -> Metrics:
    """Metrics over events 2..n of every sequence with at least two events."""
    mc = mc or MCConfig()
    encoded = encoded if encoded is not None else _encode_all(model, _sequences(data))
    if not encoded:
        raise DataError("nothing to evaluate: no sequence has two or more events")
    was_training = model.training
    model.eval()
    # sorting by id makes the result independent of dataset order
    encoded = sorted(encoded, key=lambda e: e.seq.id)
    total_ll, correct, sq_err, count = 0.0, 0, 0.0, 0
    try:
        for batch in _batches(encoded, batch_size):
            histories = model.history_vectors(batch)
            for enc, h in zip(batch, histories):
                terms = sequence_terms(model, enc, h, mc, EVAL_SALT)
                total_ll += float(terms.log_likelihood)
                prev = h[:-1]
                pred_type = torch.argmax(model.type_head(prev), dim=-1).numpy()
                correct += int((pred_type == enc.seq.types[1:]).sum())
                times = torch.as_tensor(np.array(enc.seq.times), dtype=h.dtype)
                pred_time = predict_time(prev, model.time_head, times[:-1], model.time_target).numpy()
                sq_err += float(((enc.seq.times[1:] - pred_time) ** 2).sum())
                count += len(enc.seq) - 1
    finally:
        model.train(was_training)
    return Metrics(total_ll / count, correct / count, math.sqrt(sq_err / count), count, len(encoded), correct)


@torch.no_grad()
def objective_value(model, encoded, cfg: TrainConfig, batch_size: int = 32) -> float:
    was_training = model.training
    model.eval()
    try:
        ordered = sorted(encoded, key=lambda e: e.seq.id)
        total = 0.0
        for batch in _batches(ordered, batch_size):
            total += float(total_objective(batch, model, cfg.weights, cfg.mc, salt=EVAL_SALT))
    finally:
        model.train(was_training)
    return total


@dataclass
class TrainResult:
    model: object
    history: list[dict]
    best_epoch: int
    stopped_early: bool


def train_loop(model, train_data, val_data=None, cfg: TrainConfig | None = None, callback=None) -> TrainResult:
    """Adam on the summed objective with seeded shuffling and early stopping on
    the validation objective. The returned model holds the best-validation weights."""
    cfg = cfg or TrainConfig()
    train_enc = _encode_all(model, _sequences(train_data))
    if not train_enc:
        raise DataError("training split has no sequence with two or more events")
    val_enc = _encode_all(model, _sequences(val_data)) if val_data is not None else []

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(train_enc))
    keep = max(1, int(math.floor(cfg.train_fraction * len(train_enc) + 1e-9)))
    train_enc = [train_enc[i] for i in order[:keep]]

    params = trainable_parameters(model, cfg.trainable_scope)
    if not params:
        raise ValueError(f"scope {cfg.trainable_scope!r} selects no parameters")
    # dropout draws from torch's global generator; fork it so runs depend only on the seed
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        history, best_state, best_epoch, stopped = _epochs(model, train_enc, val_enc, params, cfg, callback)

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, best_epoch, stopped)


def _epochs(model, train_enc, val_enc, params, cfg: TrainConfig, callback):
    state = AdamState()
    history = []
    best_val, best_state, best_epoch = math.inf, None, 0
    bad_epochs = 0
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_enc))
        epoch_obj = 0.0
        for b, start in enumerate(range(0, len(perm), cfg.batch_size)):
            batch = [train_enc[i] for i in perm[start : start + cfg.batch_size]]
            salt = epoch * 1_000_003 + b + 1
            try:
                obj = total_objective(batch, model, cfg.weights, cfg.mc, salt=salt)
                grads = compute_gradients(obj, params)
            except NumericalError as exc:
                raise NumericalError(f"diverged at epoch {epoch}, batch {b}: {exc}") from exc
            adam_step(params, grads, state, cfg.learning_rate)
            epoch_obj += float(obj.detach())

        record = {"epoch": epoch, "train_objective": epoch_obj / len(train_enc)}
        if val_enc:
            val_obj = objective_value(model, val_enc, cfg)
            metrics = evaluate(model, None, cfg.mc, encoded=val_enc)
            record.update(
                val_objective=val_obj / len(val_enc),
                val_ll_per_event=metrics.ll_per_event,
                val_accuracy=metrics.accuracy,
                val_rmse=metrics.rmse,
            )
            if val_obj < best_val:
                best_val, best_epoch, bad_epochs = val_obj, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                bad_epochs += 1
        else:
            best_epoch = epoch
        history.append(record)
        log.info("epoch %s", record)
        if callback is not None:
            callback(record)
        if val_enc and bad_epochs >= cfg.patience:
            stopped = True
            break
    return history, best_state, best_epoch, stopped
