"""Synthetic ground truth: Poisson and exponential-kernel Hawkes generators,
exact Hawkes intensities/likelihoods, and time perturbation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Dataset, EventSequence, EventType

GREEK = (
    "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu "
    "nu xi omicron pi rho sigma tau upsilon phi chi psi omega"
).split()


@dataclass(frozen=True, eq=False)
class HawkesParams:
    """Multivariate Hawkes process with kernel ``A[k, j] * exp(-beta * s)``.

    ``A[k, j]`` is the jump in type-k intensity caused by a type-j event.
    """

    mu: np.ndarray
    A: np.ndarray
    beta: float

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        if A.shape != (mu.size, mu.size):
            raise ValueError(f"A must be {mu.size}x{mu.size}, got {A.shape}")
        if np.any(mu <= 0):
            raise ValueError("base rates must be positive")
        if np.any(A < 0):
            raise ValueError("excitation matrix must be non-negative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        radius = np.max(np.abs(np.linalg.eigvals(A / self.beta)))
        if radius >= 1:
            raise ValueError(f"non-stationary: spectral radius of A/beta is {radius:.4f}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def num_types(self) -> int:
        return self.mu.size

    def stationary_rates(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.num_types) - self.A / self.beta, self.mu)


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    max_events: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")


def simulate_poisson(rate: float, num_types: int, sim: SimConfig, seq_id: str = "0") -> EventSequence:
    """Superposition of ``num_types`` homogeneous processes, each at ``rate``."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    rng = np.random.default_rng(sim.seed)
    total = rate * num_types
    times = []
    t = rng.exponential(1.0 / total)
    while t <= sim.horizon and len(times) < sim.max_events:
        times.append(t)
        t += rng.exponential(1.0 / total)
    types = rng.integers(0, num_types, size=len(times))
    return EventSequence(seq_id, times, types, 0.0, sim.horizon)


def simulate_hawkes(params: HawkesParams, sim: SimConfig, seq_id: str = "0") -> EventSequence:
    """Ogata thinning. The bound is the total intensity just after the current
    time, which dominates until the next event because kernels only decay."""
    rng = np.random.default_rng(sim.seed)
    mu, A, beta = params.mu, params.A, params.beta
    excitation = np.zeros(params.num_types)
    t = 0.0
    times, types = [], []
    while True:
        bound = mu.sum() + excitation.sum()
        step = rng.exponential(1.0 / bound)
        t_new = t + step
        if t_new > sim.horizon:
            break
        excitation *= np.exp(-beta * step)
        t = t_new
        lam = mu + excitation
        if rng.uniform() * bound <= lam.sum():
            if len(times) >= sim.max_events:
                warnings.warn(f"sequence {seq_id}: truncated at max_events={sim.max_events}")
                break
            k = int(rng.choice(params.num_types, p=lam / lam.sum()))
            times.append(t)
            types.append(k)
            excitation += A[:, k]
    return EventSequence(seq_id, times, types, 0.0, sim.horizon)


def hawkes_intensity_exact(params: HawkesParams, times, types, t: float, right_limit: bool = False) -> np.ndarray:
    """Per-type intensity at ``t`` given the history ``(times, types)``.

    Only events strictly before ``t`` count; ``right_limit=True`` also counts
    events at ``t`` (the value just after ``t``).
    """
    times = np.asarray(times, dtype=np.float64)
    types = np.asarray(types, dtype=np.int64)
    mask = times <= t if right_limit else times < t
    decay = np.exp(-params.beta * (t - times[mask]))
    return params.mu + params.A[:, types[mask]] @ decay


def hawkes_loglik_exact(params: HawkesParams, seq: EventSequence) -> float:
    """Log-likelihood over ``(t_1, t_n)`` with event terms for events 2..n."""
    times, types = seq.times, seq.types
    n = times.size
    if n < 2:
        raise ValueError("need at least two events")
    # lag[i, j] = t_i - t_j, masked to strictly earlier events
    lag = times[:, None] - times[None, :]
    prior = lag > 0
    kernel = np.where(prior, np.exp(-params.beta * np.where(prior, lag, 0.0)), 0.0)
    lam_at_events = params.mu[types] + np.einsum("ij,ij->i", params.A[types][:, types], kernel)
    event_term = np.log(lam_at_events[1:]).sum()
    span = times[-1] - times[0]
    tail = 1.0 - np.exp(-params.beta * (times[-1] - times))
    compensator = params.mu.sum() * span + (params.A.sum(axis=0)[types] / params.beta * tail).sum()
    return float(event_term - compensator)


def fit_poisson_rates(sequences, num_types: int) -> np.ndarray:
    """Per-type homogeneous rates maximising the (t_1, t_n) likelihood."""
    counts = np.zeros(num_types)
    exposure = 0.0
    for seq in sequences:
        if len(seq) < 2:
            continue
        counts += np.bincount(seq.types[1:], minlength=num_types)
        exposure += seq.times[-1] - seq.times[0]
    return np.maximum(counts, 1e-12) / exposure


def poisson_loglik(rates, seq: EventSequence) -> float:
    rates = np.asarray(rates, dtype=np.float64)
    return float(np.log(rates[seq.types[1:]]).sum() - rates.sum() * (seq.times[-1] - seq.times[0]))


def perturb_times(seq: EventSequence, ratio: float, seed: int) -> EventSequence:
    """Jitter each event after the first by U[-1, 1] * ratio * (preceding gap),
    never moving it before the previous perturbed time."""
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    if ratio == 0 or len(seq) < 2:
        return seq
    rng = np.random.default_rng(seed)
    times = seq.times
    delta = rng.uniform(-1.0, 1.0, size=times.size - 1) * ratio * np.diff(times)
    out = times.copy()
    for i in range(1, times.size):
        out[i] = max(out[i - 1], times[i] + delta[i - 1])
    end = max(seq.window_end, out[-1])
    return EventSequence(seq.id, out, seq.types, seq.window_start, end)


def perturb_dataset(ds: Dataset, ratio: float, seed: int) -> Dataset:
    seeds = np.random.SeedSequence(seed).spawn(len(ds.sequences))
    return ds.with_sequences(
        perturb_times(s, ratio, int(ss.generate_state(1)[0])) for s, ss in zip(ds.sequences, seeds)
    )


def label_types(num_types: int, naming: str = "textual") -> tuple[EventType, ...]:
    if naming == "ordinal":
        return tuple(EventType(k, str(k)) for k in range(num_types))
    if naming != "textual":
        raise ValueError(f"naming must be 'textual' or 'ordinal', got {naming!r}")
    names = []
    for k in range(num_types):
        word = GREEK[k % len(GREEK)]
        names.append(f"type {word}" if k < len(GREEK) else f"type {word} {k // len(GREEK)}")
    return tuple(EventType(k, n) for k, n in enumerate(names))


def simulate_dataset(
    kind: str,
    num_sequences: int,
    horizon: float,
    seed: int = 0,
    *,
    rate: float | None = None,
    num_types: int | None = None,
    hawkes: HawkesParams | None = None,
    naming: str = "textual",
    max_events: int = 100_000,
    min_length: int = 2,
    name: str | None = None,
) -> Dataset:
    """Generate ``num_sequences`` independent sequences with per-sequence seeds.

    Sequences shorter than ``min_length`` are discarded, so the result can hold
    fewer than ``num_sequences`` entries.
    """
    if kind == "poisson":
        if rate is None or num_types is None:
            raise ValueError("poisson simulation needs rate and num_types")
        k = num_types
    elif kind == "hawkes":
        if hawkes is None:
            raise ValueError("hawkes simulation needs HawkesParams")
        k = hawkes.num_types
    else:
        raise ValueError(f"unknown simulation kind {kind!r}")
    children = np.random.SeedSequence(seed).spawn(num_sequences)
    seqs = []
    for i, child in enumerate(children):
        sim = SimConfig(horizon, max_events, int(child.generate_state(1)[0]))
        if kind == "poisson":
            seq = simulate_poisson(rate, k, sim, seq_id=str(i))
        else:
            seq = simulate_hawkes(hawkes, sim, seq_id=str(i))
        if len(seq) >= min_length:
            seqs.append(seq)
    return Dataset(name or f"synthetic-{kind}", "unit", label_types(k, naming), tuple(seqs))
