"""Flat key-value run configuration, read from YAML and overridable from the CLI."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .backbone import TARGETS, BackboneConfig, LoRAConfig
from .encode import PromptSpec, default_prompt
from .heads import LossWeights
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_MODULE_ALIASES = {"q_proj": "Q", "k_proj": "K", "v_proj": "V", "o_proj": "O"}


def parse_targets(value) -> tuple[str, ...]:
    """Accepts "QKVO", "q_proj,v_proj" or a list of either form."""
    if isinstance(value, str):
        parts = [p for p in value.replace(",", " ").split()]
        if len(parts) == 1 and parts[0].upper() == parts[0] and set(parts[0]) <= set(TARGETS):
            parts = list(parts[0])
    else:
        parts = list(value)
    out = []
    for p in parts:
        t = _MODULE_ALIASES.get(str(p).lower(), str(p).upper())
        if t not in TARGETS:
            raise ConfigError(f"unknown target module {p!r}")
        if t not in out:
            out.append(t)
    if not out:
        raise ConfigError("target_modules is empty")
    return tuple(out)


@dataclass(frozen=True)
class HyperParams:
    # backbone
    hidden_size: int = 32
    num_layers: int = 2
    num_heads: int = 2
    ffn_size: int = 128
    max_seq_len: int = 2048
    dropout: float = 0.0
    # encoding and heads
    intensity: str = "thp"
    temporal: str = "sinusoidal"
    prompt: bool = False
    prompt_text: str | None = None
    order: str = "type_first"
    type_format: str = "textual"
    time_target: str = "gap"
    # optimisation
    learning_rate: float = 5e-4
    batch_size: int = 8
    max_epoch: int = 20
    patience: int = 3
    train_fraction: float = 1.0
    beta_type: float = 1.0
    beta_time: float = 1.0
    num_integrals: int = 20
    trainable_scope: str = "all"
    seed: int = 0
    # adapters; rank 0 means none
    lora_rank: int = 0
    lora_alpha: float = 16.0
    lora_dropout: float = 0.05
    target_modules: str = "QKVO"

    def model_config(self, dataset_name: str = "") -> ModelConfig:
        text = ""
        if self.prompt:
            text = self.prompt_text or default_prompt(dataset_name, self.order)
        return ModelConfig(
            backbone=BackboneConfig(
                self.num_layers, self.num_heads, self.hidden_size, self.ffn_size, self.max_seq_len, self.dropout
            ),
            intensity=self.intensity,
            temporal=self.temporal,
            prompt=PromptSpec(self.prompt, text, self.order, self.type_format),
            time_target=self.time_target,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epoch,
            patience=self.patience,
            train_fraction=self.train_fraction,
            seed=self.seed,
            weights=LossWeights(self.beta_type, self.beta_time),
            mc_samples=self.num_integrals,
            trainable_scope=self.trainable_scope,
        )

    def lora_config(self) -> LoRAConfig | None:
        if self.lora_rank <= 0:
            return None
        return LoRAConfig(self.lora_rank, self.lora_alpha, self.lora_dropout, parse_targets(self.target_modules))

    def validate(self, dataset_name: str = "") -> "HyperParams":
        """Builds every derived config once so bad values fail early."""
        try:
            self.model_config(dataset_name)
            self.train_config()
            self.lora_config()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    dataset_name: str | None = None
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    output_dir: str = "runs/latest"
    params: HyperParams = field(default_factory=HyperParams)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in RUN_KEYS}
        out["split_ratios"] = list(self.split_ratios)
        out.update(asdict(self.params))
        return out


HYPER_KEYS = tuple(f.name for f in fields(HyperParams))
RUN_KEYS = tuple(f.name for f in fields(RunConfig) if f.name != "params")
_TYPES = {f.name: f.type for f in fields(HyperParams)} | {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    kind = _TYPES[key]
    if value is None:
        return None
    try:
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        if key == "split_ratios":
            if isinstance(value, str):
                value = value.replace(",", " ").split()
            ratios = tuple(float(v) for v in value)
            if len(ratios) != 3:
                raise ValueError(value)
            return ratios
        if key == "target_modules":
            return "".join(parse_targets(value))
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def make_run_config(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Merges ``values`` over ``base`` (or the defaults). Unknown keys are errors."""
    base = base or RunConfig()
    unknown = sorted(set(values) - set(HYPER_KEYS) - set(RUN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    run = {k: _coerce(k, v) for k, v in values.items() if k in RUN_KEYS}
    hyper = {k: _coerce(k, v) for k, v in values.items() if k in HYPER_KEYS}
    cfg = replace(base, **run, params=replace(base.params, **hyper))
    cfg.params.validate(cfg.dataset_name or "")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed config: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a key-value mapping at top level")
    return make_run_config(raw)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
