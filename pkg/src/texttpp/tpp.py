"""Conditional intensity heads and the Monte Carlo sequence log-likelihood.

Every head maps a history vector ``h`` (..., H) and elapsed time ``dt`` (...)
to per-type intensities (..., K). Leading dimensions broadcast, so the
Monte Carlo pass evaluates ``head(h[:, None, :], dt_samples)``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import NumericalError

RMTPP_CLAMP = 30.0


def intensity_thp(h, dt, alpha, weight, bias):
    """softplus(alpha * dt + W h + b)."""
    return F.softplus(alpha * dt[..., None] + h @ weight.T + bias)


def intensity_rmtpp(h, dt, alpha, weight, bias):
    """exp(alpha * dt + W h + b) with the exponent clamped at 30."""
    return torch.exp(torch.clamp(alpha * dt[..., None] + h @ weight.T + bias, max=RMTPP_CLAMP))


def intensity_sahp(h, dt, w_mu, w_eta, w_gamma):
    """softplus(mu + (eta - mu) exp(-gamma dt)), each rate a gelu of a projection of h.

    gamma additionally passes through softplus so the decay rate is non-negative.
    """
    mu = F.gelu(h @ w_mu.T)
    eta = F.gelu(h @ w_eta.T)
    gamma = F.softplus(F.gelu(h @ w_gamma.T))
    return F.softplus(mu + (eta - mu) * torch.exp(-gamma * dt[..., None]))


class IntensityHead(nn.Module):
    kind = ""

    def __init__(self, hidden_size: int, num_types: int):
        super().__init__()
        self.hidden_size = hidden_size
        self.num_types = num_types


class THPIntensity(IntensityHead):
    kind = "thp"

    def __init__(self, hidden_size, num_types):
        super().__init__(hidden_size, num_types)
        bound = 1.0 / math.sqrt(hidden_size)
        self.alpha = nn.Parameter(torch.full((num_types,), -0.1, dtype=torch.float64))
        self.weight = nn.Parameter(torch.empty(num_types, hidden_size, dtype=torch.float64).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.zeros(num_types, dtype=torch.float64))

    def forward(self, h, dt):
        return intensity_thp(h, dt, self.alpha, self.weight, self.bias)


class RMTPPIntensity(THPIntensity):
    kind = "rmtpp"

    def forward(self, h, dt):
        return intensity_rmtpp(h, dt, self.alpha, self.weight, self.bias)


class SAHPIntensity(IntensityHead):
    kind = "sahp"

    def __init__(self, hidden_size, num_types):
        super().__init__(hidden_size, num_types)
        bound = 1.0 / math.sqrt(hidden_size)

        def proj():
            return nn.Parameter(torch.empty(num_types, hidden_size, dtype=torch.float64).uniform_(-bound, bound))

        self.w_mu, self.w_eta, self.w_gamma = proj(), proj(), proj()

    def forward(self, h, dt):
        return intensity_sahp(h, dt, self.w_mu, self.w_eta, self.w_gamma)


HEADS = {cls.kind: cls for cls in (THPIntensity, RMTPPIntensity, SAHPIntensity)}


def make_intensity_head(kind: str, hidden_size: int, num_types: int) -> IntensityHead:
    try:
        return HEADS[kind](hidden_size, num_types)
    except KeyError:
        raise ValueError(f"unknown intensity head {kind!r}; choose from {sorted(HEADS)}") from None


@dataclass(frozen=True)
class MCConfig:
    samples_per_interval: int = 20
    seed: int = 0
    stratified: bool = False

    def __post_init__(self):
        if self.samples_per_interval < 1:
            raise ValueError("need at least one Monte Carlo sample per interval")


def mc_fractions(num_intervals: int, mc: MCConfig, seq_id: str = "", salt: int = 0) -> np.ndarray:
    """Uniform draws in (0, 1] of shape (num_intervals, M), one stream per
    (seed, salt, sequence id)."""
    rng = np.random.default_rng([mc.seed, salt, zlib.crc32(str(seq_id).encode())])
    m = mc.samples_per_interval
    u = rng.random((num_intervals, m))
    if mc.stratified:
        u = (np.arange(m) + u) / m
    return 1.0 - u


def nonevent_integral_mc(history, times, head, mc: MCConfig, seq_id: str = "", salt: int = 0, fractions=None):
    """Monte Carlo estimate of the integral of the total intensity over (t_1, t_n).

    Interval i uses history vector i; zero-length intervals contribute zero.
    """
    times = torch.as_tensor(np.array(times), dtype=history.dtype)
    gaps = times[1:] - times[:-1]
    if fractions is None:
        fractions = mc_fractions(gaps.numel(), mc, seq_id, salt)
    fractions = torch.as_tensor(fractions, dtype=history.dtype)
    lam = head(history[:-1, None, :], gaps[:, None] * fractions)
    return (gaps * lam.sum(-1).mean(-1)).sum()


def event_log_intensities(history, times, types, head):
    """log lambda_{k_i}(t_i | h_{i-1}) for events 2..n."""
    times = torch.as_tensor(np.array(times), dtype=history.dtype)
    types = torch.as_tensor(np.array(types), dtype=torch.long)
    lam = head(history[:-1], times[1:] - times[:-1])
    picked = lam.gather(-1, types[1:, None])[:, 0]
    if (picked <= 0).any():
        raise NumericalError("intensity vanished at an observed event")
    return torch.log(picked)


def sequence_log_likelihood(seq, history, head, mc: MCConfig, salt: int = 0, fractions=None):
    """Sum of event log-intensities (events 2..n) minus the non-event integral."""
    if len(seq) < 2:
        raise ValueError("log-likelihood needs at least two events")
    event_term = event_log_intensities(history, seq.times, seq.types, head).sum()
    integral = nonevent_integral_mc(history, seq.times, head, mc, seq.id, salt, fractions)
    return event_term - integral
