"""Central finite-difference check of every trainable gradient."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from .backbone import BackboneConfig, LoRAConfig
from .core import EventSequence
from .encode import PromptSpec, Vocab
from .heads import LossWeights, total_objective
from .model import ModelConfig, TPPModel
from .tpp import MCConfig
from .train import compute_gradients, trainable_parameters

# each head is paired with a different temporal encoding so one pass covers all
SUITE = (("thp", "sinusoidal"), ("rmtpp", "time_shifted"), ("sahp", "linear"))
TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    intensity: str
    temporal: str
    errors: dict
    num_parameters: int
    seconds: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def worst_parameter(self) -> str:
        return max(self.errors, key=self.errors.get)

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_error < tol


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    """||a - b|| / max(||a||, ||b||); zero when both vanish."""
    scale = max(float(a.norm()), float(b.norm()))
    if scale == 0.0:
        return 0.0
    return float((a - b).norm()) / scale


@torch.no_grad()
def finite_difference_gradient(fn, param: torch.Tensor, step: float = 1e-5) -> torch.Tensor:
    """Central differences with step ``step * max(1, |theta|)`` per element."""
    grad = torch.zeros_like(param)
    flat = param.view(-1)
    out = grad.view(-1)
    for j in range(flat.numel()):
        orig = float(flat[j])
        h = step * max(1.0, abs(orig))
        flat[j] = orig + h
        up = float(fn())
        flat[j] = orig - h
        down = float(fn())
        flat[j] = orig
        out[j] = (up - down) / (2 * h)
    return grad


def check_gradients(model, batch, weights=None, mc=None, salt=0, scope="all", step=1e-5) -> dict[str, float]:
    """Relative error between autograd and finite differences for each parameter tensor.

    The model runs in eval mode and the Monte Carlo draws are pinned by
    ``salt``, so the objective is a deterministic function of the weights.
    """
    weights = weights or LossWeights()
    mc = mc or MCConfig(samples_per_interval=4)
    was_training = model.training
    model.eval()
    try:
        params = trainable_parameters(model, scope)

        def objective():
            return total_objective(batch, model, weights, mc, salt=salt)

        analytic = compute_gradients(objective(), params)
        return {
            name: relative_error(analytic[name], finite_difference_gradient(objective, p, step))
            for name, p in params.items()
        }
    finally:
        model.train(was_training)


def small_model(intensity="thp", temporal="sinusoidal", seed=0, num_types=3, lengths=(5,)):
    """Two layers, two heads, D=16, a narrow FFN and rank-1 LoRA with non-zero B,
    plus a batch of sequences with the given lengths."""
    names = [f"kind{k}" for k in range(num_types)]
    vocab = Vocab()
    for w in ["next", "event"] + [w for n in names for w in n.split()]:
        vocab.add(w)
    cfg = ModelConfig(
        backbone=BackboneConfig(num_layers=2, num_heads=2, model_dim=16, ffn_dim=8),
        intensity=intensity,
        temporal=temporal,
        prompt=PromptSpec(enabled=True, text="next event"),
    )
    model = TPPModel(vocab, names, cfg, seed=seed)
    model.attach_lora(LoRAConfig(rank=1, alpha=2.0, dropout=0.0), seed=seed)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for adapter in model.backbone.lora_adapters().values():
            adapter.B.copy_(0.1 * torch.randn(adapter.B.shape, generator=gen, dtype=torch.float64))
    rng = np.random.default_rng(seed)
    seqs = []
    for i, n in enumerate(lengths):
        times = np.cumsum(rng.exponential(1.0, n))
        seqs.append(EventSequence(f"g{i}", times, rng.integers(0, num_types, n)))
    return model, [model.encode(s) for s in seqs]


def run_suite(seed: int = 0, step: float = 1e-5) -> list[GradCheckResult]:
    results = []
    for intensity, temporal in SUITE:
        start = time.perf_counter()
        model, batch = small_model(intensity, temporal, seed)
        errors = check_gradients(model, batch, step=step)
        n = sum(p.numel() for p in trainable_parameters(model, "all").values())
        results.append(GradCheckResult(intensity, temporal, errors, n, time.perf_counter() - start))
    return results
