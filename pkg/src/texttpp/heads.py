"""Next-event type and time heads, their losses and the combined objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import NumericalError
from .tpp import sequence_log_likelihood

TIME_TARGETS = ("gap", "absolute")


@dataclass(frozen=True)
class LossWeights:
    beta_type: float = 1.0
    beta_time: float = 1.0

    def __post_init__(self):
        for name in ("beta_type", "beta_time"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative")


class TypeHead(nn.Linear):
    def __init__(self, hidden_size: int, num_types: int):
        super().__init__(hidden_size, num_types, dtype=torch.float64)


class TimeHead(nn.Linear):
    def __init__(self, hidden_size: int):
        super().__init__(hidden_size, 1, dtype=torch.float64)

    def forward(self, h):
        return super().forward(h)[..., 0]


def predict_type_probs(h, head: TypeHead):
    return torch.softmax(head(h), dim=-1)


def predict_next_type(h, head: TypeHead):
    # torch.argmax returns the first maximal index, i.e. the lowest id on ties
    return torch.argmax(head(h), dim=-1)


def predict_time(h, head: TimeHead, last_time=None, target: str = "gap"):
    """Predicted next time. Gap heads add a non-negative gap to ``last_time``."""
    raw = head(h)
    if target == "absolute":
        return raw
    gap = torch.clamp(raw, min=0.0)
    return gap if last_time is None else last_time + gap


def _as_tensor(x, dtype):
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.array(x), dtype=dtype)


def type_loss(probs, true_types):
    """Summed cross-entropy -log p[true]."""
    true_types = _as_tensor(true_types, torch.long)
    return -torch.log(probs.gather(-1, true_types[..., None])[..., 0]).sum()


def time_loss(pred_times, true_times):
    """Summed squared error."""
    true_times = _as_tensor(true_times, pred_times.dtype)
    return ((true_times - pred_times) ** 2).sum()


@dataclass
class SequenceTerms:
    seq_id: str
    log_likelihood: torch.Tensor
    type_loss: torch.Tensor
    time_loss: torch.Tensor

    def objective(self, weights: LossWeights) -> torch.Tensor:
        return -self.log_likelihood + weights.beta_type * self.type_loss + weights.beta_time * self.time_loss


def sequence_terms(model, encoded, history, mc, salt: int = 0) -> SequenceTerms:
    """Likelihood and prediction losses of one sequence given its history vectors."""
    seq = encoded.seq
    ll = sequence_log_likelihood(seq, history, model.intensity, mc, salt=salt)
    prev = history[:-1]
    logits = model.type_head(prev)
    ce = F.cross_entropy(logits, torch.as_tensor(np.array(seq.types[1:]), dtype=torch.long), reduction="sum")
    times = torch.as_tensor(np.array(seq.times), dtype=history.dtype)
    raw = model.time_head(prev)
    # the loss uses the unclamped head output so negative gaps still get gradient
    pred = raw if model.time_target == "absolute" else times[:-1] + raw
    return SequenceTerms(seq.id, ll, ce, time_loss(pred, times[1:]))


def total_objective(batch, model, weights: LossWeights, mc, salt: int = 0, terms=None) -> torch.Tensor:
    """Sum over sequences of -LL + beta_type * type loss + beta_time * time loss."""
    if terms is None:
        terms = model.batch_terms(batch, mc, salt)
    parts = [t.objective(weights) for t in terms]
    for t, p in zip(terms, parts):
        if not torch.isfinite(p):
            raise NumericalError(f"non-finite objective for sequence {t.seq_id!r}")
    return torch.stack(parts).sum()
