"""Distillation training loop, checkpointing, and soft-label inference.

The student network is trained on the rule labeler's per-sentence binary
labels; report-level scores come from maxpooling sentence scores at
inference time. Early stopping monitors validation loss and restores the
best epoch's weights.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import (
    EncodedSentence,
    Report,
    Sentence,
    Vocabulary,
    build_vocabulary,
    encode,
    encode_tokens,
    split_sentences,
    tokenize,
)
from .errors import InputError, NumericalError
from .ioutil import atomic_write_bytes
from .net.adam import AdamState, adam_step
from .net.kernels import active_backend
from .net.model import (
    EncodedBatch,
    forward_batch,
    backward_batch,
    sample_dropout_masks,
)
from .net.params import DropoutConfig, ModelDims, ModelParams, init_params

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    validation_fraction: float = 0.1
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-07
    grad_clip: float | None = None
    seed: int = 0
    dropout: DropoutConfig = field(default_factory=DropoutConfig)
    dims: ModelDims = field(default_factory=ModelDims)

    def __post_init__(self) -> None:
        if not 0.0 < self.validation_fraction < 1.0:
            raise InputError("validation_fraction must be in (0, 1)")
        if self.patience < 1:
            raise InputError("patience must be >= 1")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise InputError("max_epochs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "validation_fraction": self.validation_fraction,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "grad_clip": self.grad_clip,
            "seed": self.seed,
            "dropout": self.dropout.to_dict(),
            "dims": self.dims.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        dropout = DropoutConfig(**data.pop("dropout", {}))
        dims = ModelDims(**data.pop("dims", {}))
        return cls(dropout=dropout, dims=dims, **data)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    wall_seconds: float


@dataclass
class TrainHistory:
    rows: list[EpochStats]
    best_epoch: int
    stopped_early: bool

    def to_dict(self, include_wall: bool = True) -> dict:
        rows = []
        for row in self.rows:
            entry = {
                "epoch": row.epoch,
                "train_loss": row.train_loss,
                "val_loss": row.val_loss,
                "val_accuracy": row.val_accuracy,
            }
            if include_wall:
                entry["wall_seconds"] = row.wall_seconds
            rows.append(entry)
        return {
            "rows": rows,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainHistory":
        rows = [
            EpochStats(
                epoch=r["epoch"],
                train_loss=r["train_loss"],
                val_loss=r["val_loss"],
                val_accuracy=r["val_accuracy"],
                wall_seconds=r.get("wall_seconds", 0.0),
            )
            for r in data["rows"]
        ]
        return cls(rows=rows, best_epoch=data["best_epoch"], stopped_early=data["stopped_early"])

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_accuracy,wall_seconds"]
        for row in self.rows:
            lines.append(
                f"{row.epoch},{row.train_loss!r},{row.val_loss!r},"
                f"{row.val_accuracy!r},{row.wall_seconds:.3f}"
            )
        return "\n".join(lines) + "\n"


class EarlyStopper:
    """Stop after `patience` consecutive epochs without val-loss improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise InputError("patience must be >= 1")
        self.patience = patience
        self.best_loss = float("inf")
        self.best_epoch = 0
        self._stale = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch's validation loss; True means stop now."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self._stale = 0
            return False
        self._stale += 1
        return self._stale >= self.patience


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------


@dataclass
class SplitDataset:
    train: list[EncodedSentence]
    val: list[EncodedSentence]
    train_ids: list[str]
    val_ids: list[str]


def split_report_ids(
    ids: Iterable[str], validation_fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Deterministic report-level split, invariant to input ordering."""
    ordered = sorted(set(ids))
    if len(ordered) < 2:
        raise InputError("need at least 2 reports to split train/validation")
    rng = np.random.default_rng(seed)
    shuffled = list(ordered)
    rng.shuffle(shuffled)
    n_val = max(1, int(validation_fraction * len(shuffled) + 0.5))
    n_val = min(n_val, len(shuffled) - 1)
    val_ids = set(shuffled[:n_val])
    return [i for i in ordered if i not in val_ids], sorted(val_ids)


def make_training_set(
    corpus: Sequence[Report],
    rule_labels: dict[str, list[int]],
    vocab: Vocabulary,
    max_len: int,
    seed: int,
    validation_fraction: float = 0.1,
) -> SplitDataset:
    """One encoded example per sentence, labeled by the rule teacher."""
    if not corpus:
        raise InputError("corpus is empty")
    for report in corpus:
        if report.id not in rule_labels:
            raise InputError(f"report {report.id!r} has no rule labels")
    train_ids, val_ids = split_report_ids(
        (r.id for r in corpus), validation_fraction, seed
    )
    val_set = set(val_ids)

    train: list[EncodedSentence] = []
    val: list[EncodedSentence] = []
    for report in corpus:
        sentences = split_sentences(report)
        labels = rule_labels[report.id]
        if len(labels) != len(sentences):
            raise InputError(
                f"report {report.id!r}: {len(labels)} rule labels for "
                f"{len(sentences)} sentences"
            )
        bucket = val if report.id in val_set else train
        for sentence, label in zip(sentences, labels):
            encoded = encode(sentence, vocab, max_len, label=label)
            if encoded.true_length > 0:
                bucket.append(encoded)
    if not train or not val:
        raise InputError("train/validation split produced an empty side")
    return SplitDataset(train=train, val=val, train_ids=train_ids, val_ids=val_ids)


def build_training_vocabulary(
    corpus: Sequence[Report], config: TrainConfig
) -> Vocabulary:
    """Vocabulary from training-split sentences only."""
    train_ids, _ = split_report_ids(
        (r.id for r in corpus), config.validation_fraction, config.seed
    )
    train_set = set(train_ids)
    sentences = [
        s for r in corpus if r.id in train_set for s in split_sentences(r)
    ]
    return build_vocabulary(sentences, config.dims.vocab_size)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _iter_batches(
    dataset: list[EncodedSentence], order: np.ndarray, batch_size: int
) -> Iterable[EncodedBatch]:
    for start in range(0, len(order), batch_size):
        rows = order[start : start + batch_size]
        yield EncodedBatch.from_sentences([dataset[i] for i in rows])


def evaluate(
    params: ModelParams, dataset: list[EncodedSentence], batch_size: int
) -> tuple[float, float]:
    """(mean BCE, accuracy at threshold 0.5) in inference mode."""
    if not dataset:
        raise InputError("cannot evaluate an empty dataset")
    loss_sum = 0.0
    correct = 0
    order = np.arange(len(dataset))
    for batch in _iter_batches(dataset, order, batch_size):
        result = forward_batch(params, batch)
        loss_sum += float(result.losses.sum())
        correct += int(((result.scores >= 0.5).astype(int) == batch.labels).sum())
    return loss_sum / len(dataset), correct / len(dataset)


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = float(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    norm = total ** 0.5
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale


def train(
    train_split: list[EncodedSentence],
    val_split: list[EncodedSentence],
    config: TrainConfig,
    vocab: Vocabulary,
    dtype=np.float32,
    log=None,
) -> tuple["Checkpoint", TrainHistory]:
    """Fit the student network; returns the best-epoch checkpoint."""
    if not train_split or not val_split:
        raise InputError("both train and validation splits must be nonempty")
    init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(config.dims, np.random.default_rng(init_seq), dtype)
    adam_state = AdamState.init_like(params)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    stopper = EarlyStopper(config.patience)
    rows: list[EpochStats] = []
    best_params = params.copy()
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(train_split))
        loss_sum = 0.0
        for batch_index, batch in enumerate(
            _iter_batches(train_split, order, config.batch_size)
        ):
            masks = sample_dropout_masks(
                batch, config.dims, config.dropout, dropout_rng, dtype
            )
            result = forward_batch(params, batch, masks)
            batch_loss = float(result.losses.mean())
            if not np.isfinite(batch_loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_index}"
                )
            loss_sum += float(result.losses.sum())
            grads = backward_batch(params, batch, result)
            if config.grad_clip is not None:
                _clip_gradients(grads, config.grad_clip)
            adam_step(
                params, grads, adam_state,
                lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
            )

        val_loss, val_accuracy = evaluate(params, val_split, config.batch_size)
        if not np.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        train_loss = loss_sum / len(train_split)
        rows.append(
            EpochStats(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=val_loss,
                val_accuracy=val_accuracy,
                wall_seconds=time.perf_counter() - started,
            )
        )
        if log:
            log(
                f"epoch {epoch}: train_loss={train_loss:.4f} "
                f"val_loss={val_loss:.4f} val_acc={val_accuracy:.4f}"
            )
        should_stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best_params = params.copy()
        if should_stop:
            history = TrainHistory(rows=rows, best_epoch=stopper.best_epoch, stopped_early=True)
            break
    else:
        history = TrainHistory(rows=rows, best_epoch=stopper.best_epoch, stopped_early=False)

    checkpoint = Checkpoint(
        dims=config.dims,
        vocab=vocab,
        params=best_params.astype(np.float32),
        config=config,
        history=history,
    )
    return checkpoint, history


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    dims: ModelDims
    vocab: Vocabulary
    params: ModelParams
    config: TrainConfig
    history: TrainHistory
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def save(self, path: str | Path) -> None:
        """Single-line JSON header, then raw little-endian float32 blocks."""
        arrays = self.params.arrays()
        header = {
            "format_version": self.format_version,
            "dims": self.dims.to_dict(),
            "vocab": {
                "max_size": self.vocab.max_size,
                "tokens": self.vocab.tokens_by_index(),
            },
            "config": self.config.to_dict(),
            # wall_seconds excluded so identical runs give identical bytes
            "history": self.history.to_dict(include_wall=False),
            "arrays": [
                {"name": name, "shape": list(array.shape)}
                for name, array in arrays.items()
            ],
        }
        blob = bytearray(json.dumps(header, ensure_ascii=False).encode("utf-8"))
        blob += b"\n"
        for array in arrays.values():
            blob += np.ascontiguousarray(array, dtype="<f4").tobytes()
        atomic_write_bytes(path, bytes(blob))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise InputError(f"checkpoint not found: {path}")
        raw = path.read_bytes()
        newline = raw.find(b"\n")
        if newline < 0:
            raise InputError(f"{path}: not a checkpoint (missing header)")
        try:
            header = json.loads(raw[:newline].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InputError(f"{path}: corrupt checkpoint header: {exc}") from exc
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise InputError(
                f"{path}: unsupported checkpoint version {header.get('format_version')!r}"
            )
        dims = ModelDims(**header["dims"])
        vocab = Vocabulary.from_tokens(
            header["vocab"]["tokens"], header["vocab"]["max_size"]
        )
        config = TrainConfig.from_dict(header["config"])
        history = TrainHistory.from_dict(header["history"])

        params = ModelParams.zeros(dims, np.float32)
        offset = newline + 1
        blocks = params.arrays()
        for entry in header["arrays"]:
            name = entry["name"]
            if name not in blocks:
                raise InputError(f"{path}: unknown array block {name!r}")
            target = blocks[name]
            if list(target.shape) != entry["shape"]:
                raise InputError(f"{path}: shape mismatch for block {name!r}")
            count = target.size
            data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
            target[:] = data.reshape(target.shape)
            offset += count * 4
        if offset != len(raw):
            raise InputError(f"{path}: trailing bytes in checkpoint")
        return cls(dims=dims, vocab=vocab, params=params, config=config, history=history)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


@dataclass
class LabeledScore:
    report_id: str
    score: float
    hard_label: int
    sentence_scores: list[float]

    @property
    def uncertainty(self) -> float:
        return 1.0 - abs(2.0 * self.score - 1.0)

    def to_record(self) -> dict:
        return {
            "id": self.report_id,
            "score": self.score,
            "hard_label": self.hard_label,
            "uncertainty": self.uncertainty,
            "sentence_scores": self.sentence_scores,
        }


def _score_encoded(
    checkpoint: Checkpoint, encoded: list[EncodedSentence], batch_size: int = 512
) -> np.ndarray:
    scores = np.empty(len(encoded), dtype=np.float64)
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start : start + batch_size]
        result = forward_batch(checkpoint.params, EncodedBatch.from_sentences(chunk))
        scores[start : start + len(chunk)] = result.scores
    return scores


def predict_sentence(checkpoint: Checkpoint, sentence: Sentence | str) -> float:
    """Deterministic inference-mode score for one sentence."""
    if isinstance(sentence, str):
        tokens = [t.normalized for t in tokenize(sentence)]
    else:
        tokens = [t.normalized for t in sentence.tokens]
    if not tokens:
        raise InputError("sentence is empty after tokenization")
    encoded = encode_tokens(tokens, checkpoint.vocab, checkpoint.dims.max_len)
    return float(_score_encoded(checkpoint, [encoded])[0])


def predict_report(
    checkpoint: Checkpoint, report: Report, threshold: float = 0.5
) -> LabeledScore:
    """Maxpool sentence scores into a report score."""
    encoded = [
        encode(s, checkpoint.vocab, checkpoint.dims.max_len)
        for s in split_sentences(report)
    ]
    encoded = [e for e in encoded if e.true_length > 0]
    if not encoded:
        raise InputError(f"report {report.id!r}: no non-empty sentences")
    sentence_scores = [float(s) for s in _score_encoded(checkpoint, encoded)]
    score = max(sentence_scores)
    return LabeledScore(
        report_id=report.id,
        score=score,
        hard_label=int(score >= threshold),
        sentence_scores=sentence_scores,
    )


SORT_MODES = ("none", "uncertainty_desc", "score_desc")


def label_corpus(
    checkpoint: Checkpoint,
    corpus: Sequence[Report],
    threshold: float = 0.5,
    sort: str = "none",
) -> list[LabeledScore]:
    """Score every report; optional stable ordering for prioritization."""
    if not corpus:
        raise InputError("corpus is empty")
    # Reports are scored independently so results never depend on how a
    # corpus is batched or sharded across workers.
    results = [predict_report(checkpoint, report, threshold) for report in corpus]
    return sort_labeled(results, sort)


def sort_labeled(results: list[LabeledScore], sort: str) -> list[LabeledScore]:
    """Stable ordering for prioritization; ties broken by report id."""
    if sort not in SORT_MODES:
        raise InputError(f"sort must be one of {SORT_MODES}, got {sort!r}")
    if sort == "uncertainty_desc":
        return sorted(results, key=lambda r: (-r.uncertainty, r.report_id))
    if sort == "score_desc":
        return sorted(results, key=lambda r: (-r.score, r.report_id))
    return results
