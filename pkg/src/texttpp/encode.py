"""Tokenization, temporal embeddings and assembly of the flattened event stream."""

from __future__ import annotations

import configparser
import functools
import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import torch
from torch import nn

from .core import Dataset
from .exceptions import SequenceTooLongError

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

ORDERS = ("type_first", "time_first")
TYPE_FORMATS = ("textual", "ordinal")
VARIANTS = ("sinusoidal", "time_shifted", "linear")

TASKS = {
    "type_first": "Based on this sequence, predict the next event type and the corresponding time.",
    "time_first": "Based on this sequence, predict the next event time and the corresponding type.",
}

_ALIASES = {
    "stackoverflow": "stack_overflow",
    "so": "stack_overflow",
    "chicago": "chicago_crime",
    "crime": "chicago_crime",
    "taxi": "nyc_taxi",
    "nyc_taxi_trip": "nyc_taxi",
    "earthquake": "us_earthquake",
    "u_s_earthquake": "us_earthquake",
    "amazon": "amazon_review",
    "amazon_reviews": "amazon_review",
}


def _dataset_key(name: str) -> str:
    key = re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")
    return _ALIASES.get(key, key)


def load_prompt_templates(path=None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    if path is None:
        parser.read_string(resources.files("texttpp").joinpath("data/prompts.txt").read_text("utf-8"))
    else:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    return parser


def default_prompt(dataset_name: str, order: str = "type_first", templates=None) -> str:
    """``{sequence description} {event description} {task description}``."""
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}")
    templates = templates or load_prompt_templates()
    key = _dataset_key(dataset_name)
    section = templates[key] if templates.has_section(key) else templates[templates.default_section]
    return " ".join([section["sequence"], section[order], TASKS[order]])


@dataclass(frozen=True)
class PromptSpec:
    enabled: bool = True
    text: str = ""
    order: str = "type_first"
    type_format: str = "textual"

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, got {self.order!r}")
        if self.type_format not in TYPE_FORMATS:
            raise ValueError(f"type_format must be one of {TYPE_FORMATS}, got {self.type_format!r}")
        if self.enabled and not self.text.strip():
            raise ValueError("an enabled prompt needs non-empty text")

    @classmethod
    def for_dataset(cls, name: str, enabled=True, order="type_first", type_format="textual"):
        text = default_prompt(name, order) if enabled else ""
        return cls(enabled, text, order, type_format)


def words(text: str) -> list[str]:
    return text.lower().split()


def type_texts(ds: Dataset, type_format: str) -> list[str]:
    if type_format == "ordinal":
        return [str(k) for k in range(ds.num_types)]
    return ds.type_texts


@dataclass
class Vocab:
    tokens: list[str] = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK)

    def __len__(self) -> int:
        return len(self.tokens)


def build_vocab(ds: Dataset, prompt: PromptSpec) -> Vocab:
    vocab = Vocab()
    for text in type_texts(ds, prompt.type_format):
        for w in words(text):
            vocab.add(w)
    if prompt.enabled:
        for w in words(prompt.text):
            vocab.add(w)
    return vocab


@dataclass(frozen=True)
class TokenizedEvent:
    token_ids: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.token_ids)


def tokenize_event_type(text: str, vocab: Vocab) -> TokenizedEvent:
    ids = tuple(vocab.lookup(w) for w in words(text))
    if not ids:
        raise ValueError("event type text has no tokens")
    return TokenizedEvent(ids)


# temporal embeddings


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, True
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), False


@functools.lru_cache(maxsize=32)
def _inverse_frequencies(dim: int, dtype=torch.float64) -> torch.Tensor:
    # 0-based column c uses 10000^(c/D) for even c and 10000^((c+1)/D) for odd c
    c = torch.arange(dim, dtype=dtype)
    exponent = torch.where(c % 2 == 0, c, c + 1) / dim
    return 10000.0 ** (-exponent)


@functools.lru_cache(maxsize=32)
def _even_columns(dim: int) -> torch.Tensor:
    return torch.arange(dim) % 2 == 0


def _sinusoid(phase: torch.Tensor, dim: int) -> torch.Tensor:
    """``phase`` has shape (..., dim); cos on even columns, sin on odd ones."""
    scaled = phase * _inverse_frequencies(dim, phase.dtype)
    return torch.where(_even_columns(dim), torch.cos(scaled), torch.sin(scaled))


def temporal_positional_encoding(t, dim: int):
    if dim < 2 or dim % 2:
        raise ValueError("dimension must be even and at least 2")
    t, is_tensor = _as_tensor(t)
    out = _sinusoid(t[..., None].expand(*t.shape, dim), dim)
    return out if is_tensor else out.numpy()


def time_shifted_encoding(position, t, scale):
    """Sinusoid of phase ``position + scale_j * t`` per dimension j."""
    scale, is_tensor = _as_tensor(scale)
    t = torch.as_tensor(t, dtype=scale.dtype)
    position = torch.as_tensor(position, dtype=scale.dtype)
    phase = position[..., None] + scale * t[..., None]
    out = _sinusoid(phase, scale.shape[-1])
    return out if is_tensor else out.numpy()


def linear_time_embedding(t, weight, bias):
    weight, is_tensor = _as_tensor(weight)
    bias = torch.as_tensor(bias, dtype=weight.dtype)
    t = torch.as_tensor(t, dtype=weight.dtype)
    out = t[..., None] * weight + bias
    return out if is_tensor else out.numpy()


@dataclass(frozen=True)
class TemporalEncodingSpec:
    variant: str = "sinusoidal"
    dim: int = 32

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.dim < 2 or self.dim % 2:
            raise ValueError("temporal embedding dimension must be even and at least 2")


class TemporalEmbedding(nn.Module):
    """Maps event times (and event positions) to D-dimensional vectors."""

    def __init__(self, spec: TemporalEncodingSpec):
        super().__init__()
        self.spec = spec
        d = spec.dim
        if spec.variant == "time_shifted":
            self.scale = nn.Parameter(torch.ones(d, dtype=torch.float64))
        elif spec.variant == "linear":
            self.weight = nn.Parameter(torch.empty(d, dtype=torch.float64).uniform_(-0.1, 0.1))
            self.bias = nn.Parameter(torch.zeros(d, dtype=torch.float64))

    def forward(self, times: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        if self.spec.variant == "sinusoidal":
            return temporal_positional_encoding(times, self.spec.dim)
        if self.spec.variant == "time_shifted":
            return time_shifted_encoding(positions.to(times.dtype), times, self.scale)
        return linear_time_embedding(times, self.weight, self.bias)


# stream assembly


@dataclass(frozen=True, eq=False)
class StreamLayout:
    """Slot bookkeeping for one flattened stream.

    ``token_ids`` holds PAD at time slots; ``time_event`` holds the event index
    at time slots and -1 elsewhere.
    """

    token_ids: np.ndarray
    time_event: np.ndarray
    event_last_index: np.ndarray

    @property
    def total_len(self) -> int:
        return int(self.token_ids.size)


def build_layout(prompt_ids, tokenized, order: str = "type_first") -> StreamLayout:
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}")
    prompt_ids = list(prompt_ids)
    lengths = np.array([tok.length for tok in tokenized], dtype=np.int64)
    n = lengths.size
    total = len(prompt_ids) + int(lengths.sum()) + n
    token_ids = np.full(total, PAD, dtype=np.int64)
    time_event = np.full(total, -1, dtype=np.int64)
    token_ids[: len(prompt_ids)] = prompt_ids
    last = len(prompt_ids) + np.cumsum(lengths + 1) - 1
    pos = len(prompt_ids)
    for i, tok in enumerate(tokenized):
        if order == "type_first":
            token_ids[pos : pos + tok.length] = tok.token_ids
            time_event[pos + tok.length] = i
        else:
            time_event[pos] = i
            token_ids[pos + 1 : pos + 1 + tok.length] = tok.token_ids
        pos += tok.length + 1
    return StreamLayout(token_ids, time_event, last)


@dataclass(frozen=True, eq=False)
class AssembledSequence:
    embeddings: torch.Tensor
    event_last_index: np.ndarray

    @property
    def total_len(self) -> int:
        return int(self.embeddings.shape[0])


def embed_layout(layout: StreamLayout, times, token_embeddings, temporal) -> torch.Tensor:
    """Differentiable stream embedding; ``temporal(times, positions)`` fills time slots."""
    table = token_embeddings.weight if isinstance(token_embeddings, nn.Embedding) else token_embeddings
    table = torch.as_tensor(table)
    times = torch.as_tensor(np.array(times), dtype=table.dtype)
    ids = torch.from_numpy(layout.token_ids)
    ev = torch.from_numpy(layout.time_event)
    is_time = ev >= 0
    ev_idx = ev.clamp(min=0)
    temporal_rows = temporal(times[ev_idx], ev_idx)
    return torch.where(is_time[:, None], temporal_rows, table[ids])


def assemble_sequence(
    seq,
    tokenized,
    prompt_ids,
    order: str,
    temporal,
    token_embeddings,
    max_len: int | None = None,
) -> AssembledSequence:
    """Prompt tokens then one block per event, ``[type tokens, time]`` or
    ``[time, type tokens]``; records each block's final slot."""
    if len(tokenized) != len(seq):
        raise ValueError(f"{len(tokenized)} tokenized events for {len(seq)} events")
    layout = build_layout(prompt_ids, tokenized, order)
    if max_len is not None and layout.total_len > max_len:
        raise SequenceTooLongError(
            f"sequence {seq.id!r}: stream length {layout.total_len} exceeds max_seq_len {max_len}"
        )
    emb = embed_layout(layout, seq.times, token_embeddings, temporal)
    return AssembledSequence(emb, layout.event_last_index)


def stream_position_encoding(length: int, dim: int, dtype=torch.float64) -> torch.Tensor:
    """Standard sinusoidal position encoding over stream slots."""
    pos = torch.arange(length, dtype=dtype)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe
