"""Causal decoder-only transformer with optional low-rank adapters on the
attention projections."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .encode import stream_position_encoding
from .exceptions import NumericalError, SequenceTooLongError

TARGETS = ("Q", "K", "V", "O")


@dataclass(frozen=True)
class BackboneConfig:
    num_layers: int = 2
    num_heads: int = 2
    model_dim: int = 32
    ffn_dim: int = 128
    max_seq_len: int = 2048
    dropout: float = 0.0

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def hidden_size(self) -> int:
        return self.model_dim


@dataclass(frozen=True)
class LoRAConfig:
    rank: int = 16
    alpha: float = 16.0
    dropout: float = 0.05
    targets: tuple[str, ...] = TARGETS

    def __post_init__(self):
        targets = tuple(t.upper() for t in self.targets)
        if self.rank < 1:
            raise ValueError("LoRA rank must be at least 1")
        if not set(targets) <= set(TARGETS) or not targets:
            raise ValueError(f"LoRA targets must be a non-empty subset of {TARGETS}")
        object.__setattr__(self, "targets", targets)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank


class LoRAAdapter(nn.Module):
    """Adds ``scaling * B @ A @ x``; B starts at zero so the delta starts at zero."""

    def __init__(self, dim: int, cfg: LoRAConfig, generator: torch.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(dim)
        a = torch.rand(cfg.rank, dim, generator=generator, dtype=torch.float64) * 2 * bound - bound
        self.A = nn.Parameter(a)
        self.B = nn.Parameter(torch.zeros(dim, cfg.rank, dtype=torch.float64))
        self.scaling = cfg.scaling
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x):
        return self.scaling * (self.dropout(x) @ self.A.T) @ self.B.T

    def delta_weight(self) -> torch.Tensor:
        return self.scaling * self.B @ self.A


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        d = cfg.model_dim
        self.num_heads = cfg.num_heads
        self.proj = nn.ModuleDict({t: nn.Linear(d, d, bias=False) for t in TARGETS})
        self.lora = nn.ModuleDict()
        self.dropout = nn.Dropout(cfg.dropout)

    def project(self, target: str, x):
        y = self.proj[target](x)
        if target in self.lora:
            y = y + self.lora[target](x)
        return y

    def forward(self, x):
        b, n, d = x.shape
        h = self.num_heads
        q, k, v = (self.project(t, x).view(b, n, h, d // h).transpose(1, 2) for t in "QKV")
        scores = q @ k.transpose(-2, -1) / math.sqrt(d // h)
        causal = torch.ones(n, n, dtype=torch.bool, device=x.device).triu(1)
        scores = scores.masked_fill(causal, float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.project("O", out)


class Block(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.ln_attn = nn.LayerNorm(cfg.model_dim)
        self.attn = CausalSelfAttention(cfg)
        self.ln_ffn = nn.LayerNorm(cfg.model_dim)
        self.ffn_in = nn.Linear(cfg.model_dim, cfg.ffn_dim)
        self.ffn_out = nn.Linear(cfg.ffn_dim, cfg.model_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x):
        x = x + self.dropout(self.attn(self.ln_attn(x)))
        return x + self.dropout(self.ffn_out(F.gelu(self.ffn_in(self.ln_ffn(x)))))


class Backbone(nn.Module):
    """Pre-norm transformer over an embedding stream of shape (batch, length, D).

    Right-padding needs no mask: causal attention keeps padded slots out of
    every earlier position. Dropout follows ``self.training``.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.num_layers))
        self.ln_out = nn.LayerNorm(cfg.model_dim)
        self.dropout = nn.Dropout(cfg.dropout)
        self.to(torch.float64)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 2
        if squeeze:
            x = x[None]
        length = x.shape[1]
        if length > self.cfg.max_seq_len:
            raise SequenceTooLongError(f"stream length {length} exceeds max_seq_len {self.cfg.max_seq_len}")
        x = self.dropout(x + stream_position_encoding(length, self.cfg.model_dim, x.dtype))
        for i, block in enumerate(self.blocks):
            x = block(x)
            if not torch.isfinite(x).all():
                raise NumericalError(f"non-finite activation after layer {i}")
        x = self.ln_out(x)
        return x[0] if squeeze else x

    def attach_lora(self, cfg: LoRAConfig, seed: int = 0) -> dict[str, LoRAAdapter]:
        gen = torch.Generator().manual_seed(seed)
        if cfg.rank > self.cfg.model_dim:
            raise ValueError("LoRA rank cannot exceed model_dim")
        adapters = {}
        for i, block in enumerate(self.blocks):
            block.attn.lora.clear()
            for t in cfg.targets:
                adapter = LoRAAdapter(self.cfg.model_dim, cfg, gen)
                block.attn.lora[t] = adapter
                adapters[f"blocks.{i}.attn.lora.{t}"] = adapter
        self.lora_config = cfg
        return adapters

    def lora_adapters(self) -> dict[str, LoRAAdapter]:
        return {
            f"blocks.{i}.attn.lora.{t}": a for i, b in enumerate(self.blocks) for t, a in b.attn.lora.items()
        }

    def merge_lora(self) -> None:
        """Fold every adapter into its base weight and drop the adapters."""
        with torch.no_grad():
            for block in self.blocks:
                for t, adapter in block.attn.lora.items():
                    block.attn.proj[t].weight += adapter.delta_weight()
                block.attn.lora.clear()

    def base_parameters(self):
        return [p for n, p in self.named_parameters() if ".lora." not in n]

    def lora_parameters(self):
        return [p for n, p in self.named_parameters() if ".lora." in n]


def attach_lora(backbone: Backbone, cfg: LoRAConfig, seed: int = 0) -> dict[str, LoRAAdapter]:
    return backbone.attach_lora(cfg, seed)


def count_lora_parameters(backbone: Backbone) -> int:
    return sum(p.numel() for p in backbone.lora_parameters())


def extract_history_vectors(hidden: torch.Tensor, event_last_index) -> torch.Tensor:
    """Rows of ``hidden`` at each event's final slot."""
    idx = torch.as_tensor(event_last_index, dtype=torch.long)
    if idx.numel() and (idx.min() < 0 or idx.max() >= hidden.shape[-2]):
        raise IndexError("event boundary outside the hidden-state rows")
    return hidden.index_select(-2, idx)
