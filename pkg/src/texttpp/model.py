"""The composite model: token and temporal embeddings, causal backbone,
intensity head and next-event heads."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, BackboneConfig, LoRAConfig, extract_history_vectors
from .core import Dataset, EventSequence, normalize_times
from .encode import (
    PromptSpec,
    StreamLayout,
    TemporalEmbedding,
    TemporalEncodingSpec,
    Vocab,
    build_layout,
    build_vocab,
    embed_layout,
    tokenize_event_type,
    type_texts,
    words,
)
from .exceptions import DataError, SequenceTooLongError
from .heads import TIME_TARGETS, TimeHead, TypeHead, predict_time, sequence_terms
from .tpp import make_intensity_head

CHECKPOINT_FORMAT = "texttpp-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    intensity: str = "thp"
    temporal: str = "sinusoidal"
    prompt: PromptSpec = field(default_factory=lambda: PromptSpec(enabled=False))
    time_target: str = "gap"

    def __post_init__(self):
        if self.time_target not in TIME_TARGETS:
            raise ValueError(f"time_target must be one of {TIME_TARGETS}")


@dataclass(frozen=True, eq=False)
class EncodedSequence:
    seq: EventSequence
    layout: StreamLayout


class TPPModel(nn.Module):
    def __init__(self, vocab: Vocab, type_texts: list[str], cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.type_texts = list(type_texts)
        self.num_types = len(type_texts)
        self.time_target = cfg.time_target
        self.type_tokens = [tokenize_event_type(t, vocab) for t in type_texts]
        self.prompt_ids = [vocab.lookup(w) for w in words(cfg.prompt.text)] if cfg.prompt.enabled else []
        d = cfg.backbone.model_dim
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.token_embedding = nn.Embedding(len(vocab), d, dtype=torch.float64)
            self.temporal = TemporalEmbedding(TemporalEncodingSpec(cfg.temporal, d))
            self.backbone = Backbone(cfg.backbone)
            self.intensity = make_intensity_head(cfg.intensity, d, self.num_types)
            self.type_head = TypeHead(d, self.num_types)
            self.time_head = TimeHead(d)

    @classmethod
    def from_dataset(cls, ds: Dataset, cfg: ModelConfig, seed: int = 0) -> "TPPModel":
        vocab = build_vocab(ds, cfg.prompt)
        return cls(vocab, type_texts(ds, cfg.prompt.type_format), cfg, seed)

    # encoding

    def encode(self, seq: EventSequence) -> EncodedSequence:
        if len(seq) and (seq.types.min() < 0 or seq.types.max() >= self.num_types):
            raise DataError(f"sequence {seq.id!r} has type ids outside 0..{self.num_types - 1}")
        seq = normalize_times(seq)
        layout = build_layout(self.prompt_ids, [self.type_tokens[k] for k in seq.types], self.cfg.prompt.order)
        if layout.total_len > self.cfg.backbone.max_seq_len:
            raise SequenceTooLongError(
                f"sequence {seq.id!r}: stream length {layout.total_len} exceeds "
                f"max_seq_len {self.cfg.backbone.max_seq_len}"
            )
        return EncodedSequence(seq, layout)

    def embed(self, enc: EncodedSequence) -> torch.Tensor:
        return embed_layout(enc.layout, enc.seq.times, self.token_embedding.weight, self.temporal)

    # forward

    def history_vectors(self, batch: list[EncodedSequence]) -> list[torch.Tensor]:
        """One (n_i, D) tensor of history vectors per sequence, from a single
        right-padded backbone pass."""
        streams = [self.embed(enc) for enc in batch]
        padded = nn.utils.rnn.pad_sequence(streams, batch_first=True)
        hidden = self.backbone(padded)
        return [extract_history_vectors(hidden[i], enc.layout.event_last_index) for i, enc in enumerate(batch)]

    def batch_terms(self, batch, mc, salt: int = 0):
        histories = self.history_vectors(batch)
        return [sequence_terms(self, enc, h, mc, salt) for enc, h in zip(batch, histories)]

    @torch.no_grad()
    def predict_next(self, batch: list[EncodedSequence]):
        """For every prefix ending at event i: (type probabilities, predicted next time)."""
        out = []
        for enc, h in zip(batch, self.history_vectors(batch)):
            probs = torch.softmax(self.type_head(h), dim=-1)
            times = torch.as_tensor(np.array(enc.seq.times), dtype=h.dtype)
            pred = predict_time(h, self.time_head, times, self.time_target)
            out.append((probs, pred))
        return out

    # parameter groups

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups = {"embedding": [], "temporal": [], "backbone": [], "lora": [], "heads": []}
        for name, p in self.named_parameters():
            if ".lora." in name:
                groups["lora"].append((name, p))
            elif name.startswith("backbone."):
                groups["backbone"].append((name, p))
            elif name.startswith("token_embedding."):
                groups["embedding"].append((name, p))
            elif name.startswith("temporal."):
                groups["temporal"].append((name, p))
            else:
                groups["heads"].append((name, p))
        return groups

    def attach_lora(self, cfg: LoRAConfig, seed: int = 0):
        return self.backbone.attach_lora(cfg, seed)


# checkpoints


def _tensor_dict(module: nn.Module) -> dict:
    return {k: {"shape": list(v.shape), "data": v.detach().reshape(-1).tolist()} for k, v in module.state_dict().items()}


def save_checkpoint(model: TPPModel, path, extra: dict | None = None) -> None:
    """JSON container: format tag, config, vocab, type texts and all weights."""
    lora = getattr(model.backbone, "lora_config", None)
    if not model.backbone.lora_adapters():
        lora = None
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "backbone": asdict(model.cfg.backbone),
            "intensity": model.cfg.intensity,
            "temporal": model.cfg.temporal,
            "prompt": asdict(model.cfg.prompt),
            "time_target": model.cfg.time_target,
        },
        "lora": None if lora is None else {**asdict(lora), "targets": list(lora.targets)},
        "vocab": model.vocab.tokens,
        "type_texts": model.type_texts,
        "weights": _tensor_dict(model),
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[TPPModel, dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {payload.get('format')!r}")
    c = payload["config"]
    cfg = ModelConfig(
        backbone=BackboneConfig(**c["backbone"]),
        intensity=c["intensity"],
        temporal=c["temporal"],
        prompt=PromptSpec(**c["prompt"]),
        time_target=c["time_target"],
    )
    model = TPPModel(Vocab(list(payload["vocab"])), payload["type_texts"], cfg)
    if payload["lora"] is not None:
        lora = payload["lora"]
        model.attach_lora(LoRAConfig(lora["rank"], lora["alpha"], lora["dropout"], tuple(lora["targets"])))
    state = {
        k: torch.tensor(np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]))
        for k, v in payload["weights"].items()
    }
    model.load_state_dict(state)
    return model, payload.get("extra", {})
