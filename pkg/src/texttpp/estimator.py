"""scikit-learn style wrapper: fit / predict / score over event-sequence datasets."""

from __future__ import annotations

import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import HYPER_KEYS, HyperParams
from .core import Dataset, EventSequence, EventType, dataset_from_dict, validate_dataset, validate_sequence
from .exceptions import DataError
from .model import TPPModel, load_checkpoint, save_checkpoint
from .tpp import MCConfig
from .train import evaluate, train_loop

CONVENTIONS = {
    "log_likelihood": "per predicted event: total over events 2..n divided by their count",
    "integral_window": "(t_1, t_n)",
    "time_prediction": "t_prev + max(0, predicted gap)",
    "time_origin": "each sequence shifted so its first event is at 0",
}


def check_dataset(X, num_types: int | None = None) -> Dataset:
    """Coerce ``X`` to a validated :class:`Dataset`.

    Accepts a Dataset, a dict in the JSON schema, or a list of EventSequence
    (type texts are then the ordinals ``"0".."K-1"``). Single-event sequences
    pass; they are skipped at training and evaluation time.
    """
    if isinstance(X, dict):
        X = dataset_from_dict(X)
    elif isinstance(X, EventSequence):
        X = [X]
    if not isinstance(X, Dataset):
        seqs = list(X)
        if not all(isinstance(s, EventSequence) for s in seqs):
            raise TypeError("expected a Dataset, a schema dict or a list of EventSequence")
        k = num_types
        if k is None:
            k = 1 + max((int(s.types.max()) for s in seqs if len(s)), default=0)
        X = Dataset("unnamed", "", tuple(EventType(i, str(i)) for i in range(k)), tuple(seqs))
    if not X.sequences:
        raise DataError("dataset has no sequences")
    problems = [p for p in validate_dataset(X) if not p.endswith("length < 2")]
    if num_types is not None and X.num_types != num_types:
        problems.append(f"dataset has {X.num_types} event types, model expects {num_types}")
    if problems:
        raise DataError(f"{len(problems)} problem(s): " + "; ".join(problems[:5]))
    return X


def check_sequences(X, num_types: int) -> list[EventSequence]:
    seqs = list(X.sequences) if isinstance(X, Dataset) else [X] if isinstance(X, EventSequence) else list(X)
    for s in seqs:
        problems = [p for p in validate_sequence(s, num_types) if p != "length < 2"]
        if problems:
            raise DataError(f"sequence {s.id!r}: " + "; ".join(problems[:5]))
    return seqs


class TPPEstimator(BaseEstimator):
    """Transformer intensity model trained by maximum likelihood plus next-event losses.

    Hyperparameters use the same names as the run config. With
    ``warm_start=True`` a second ``fit`` continues from the current weights;
    combined with ``lora_rank > 0`` and ``trainable_scope="lora_and_heads"``
    this adapts a pretrained model to a new dataset through adapters only.
    """

    def __init__(
        self,
        hidden_size=32,
        num_layers=2,
        num_heads=2,
        ffn_size=128,
        max_seq_len=2048,
        dropout=0.0,
        intensity="thp",
        temporal="sinusoidal",
        prompt=False,
        prompt_text=None,
        order="type_first",
        type_format="textual",
        time_target="gap",
        learning_rate=5e-4,
        batch_size=8,
        max_epoch=20,
        patience=3,
        train_fraction=1.0,
        beta_type=1.0,
        beta_time=1.0,
        num_integrals=20,
        trainable_scope="all",
        seed=0,
        lora_rank=0,
        lora_alpha=16.0,
        lora_dropout=0.05,
        target_modules="QKVO",
        warm_start=False,
    ):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ffn_size = ffn_size
        self.max_seq_len = max_seq_len
        self.dropout = dropout
        self.intensity = intensity
        self.temporal = temporal
        self.prompt = prompt
        self.prompt_text = prompt_text
        self.order = order
        self.type_format = type_format
        self.time_target = time_target
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epoch = max_epoch
        self.patience = patience
        self.train_fraction = train_fraction
        self.beta_type = beta_type
        self.beta_time = beta_time
        self.num_integrals = num_integrals
        self.trainable_scope = trainable_scope
        self.seed = seed
        self.lora_rank = lora_rank
        self.lora_alpha = lora_alpha
        self.lora_dropout = lora_dropout
        self.target_modules = target_modules
        self.warm_start = warm_start

    def hyperparams(self) -> HyperParams:
        return HyperParams(**{k: getattr(self, k) for k in HYPER_KEYS})

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"this {type(self).__name__} is not fitted yet; call fit first")

    def fit(self, X, y=None, X_val=None, callback=None):
        """Train on ``X``; early stopping watches ``X_val`` when given. ``y`` is ignored."""
        warm = self.warm_start and hasattr(self, "model_")
        X = check_dataset(X, self.n_types_ if warm else None)
        if X_val is not None:
            X_val = check_dataset(X_val, X.num_types)
        hp = self.hyperparams().validate(X.name)
        if not warm:
            self.model_ = TPPModel.from_dataset(X, hp.model_config(X.name), seed=self.seed)
            self.n_types_ = X.num_types
            self.type_texts_ = list(self.model_.type_texts)
        lora = hp.lora_config()
        if lora is not None and not self.model_.backbone.lora_adapters():
            self.model_.attach_lora(lora, seed=self.seed)
        result = train_loop(self.model_, X, X_val, hp.train_config(), callback)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.stopped_early_ = result.stopped_early
        return self

    def _mc(self, num_integrals=None) -> MCConfig:
        return MCConfig(num_integrals or self.num_integrals, self.seed)

    def evaluate(self, X, num_integrals=None):
        self._check_fitted()
        return evaluate(self.model_, check_sequences(X, self.n_types_), self._mc(num_integrals))

    def score(self, X, y=None) -> float:
        """Held-out log-likelihood per predicted event (higher is better)."""
        return self.evaluate(X).ll_per_event

    def predict(self, X) -> list[dict]:
        """For each sequence and each prefix ending at event i, the most likely
        next type, its probabilities and the predicted next time (input units)."""
        self._check_fitted()
        seqs = [s for s in check_sequences(X, self.n_types_) if len(s) >= 1]
        self.model_.eval()
        out = []
        with torch.no_grad():
            for s in seqs:
                probs, times = self.model_.predict_next([self.model_.encode(s)])[0]
                out.append(
                    {
                        "id": s.id,
                        "next_type": torch.argmax(probs, dim=-1).numpy(),
                        "type_probs": probs.numpy(),
                        "next_time": times.numpy() + s.times[0],
                    }
                )
        return out

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(self.model_, path, {"params": self.get_params(), "n_types": self.n_types_})

    @classmethod
    def load(cls, path) -> "TPPEstimator":
        model, extra = load_checkpoint(path)
        return cls.from_model(model, extra.get("params", {}))

    @classmethod
    def from_model(cls, model: TPPModel, params: dict | None = None) -> "TPPEstimator":
        est = cls(**(params or {}))
        est.model_ = model
        est.n_types_ = model.num_types
        est.type_texts_ = list(model.type_texts)
        return est


__all__ = ["CONVENTIONS", "TPPEstimator", "check_dataset", "check_sequences"]
