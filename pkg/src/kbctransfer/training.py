"""1-N training with periodic validation, best-snapshot selection and grid search."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import ClusterMap, OneToNGroup, TripleStore, WordVectors, group_one_to_n, in_batch_candidates
from .errors import NumericError, TrainingError
from .evaluation import FilterIndex, evaluate
from .model import ENCODERS, MODELS, KBCModel, build_model
from .optim import AdamState, adam_step

NEGATIVES = ("auto", "full", "in-batch")
LOG_COLUMNS = ("epoch", "loss", "MR", "MRR", "H@10")


@dataclass(frozen=True)
class TrainConfig:
    model: str = "conve"
    encoder: str = "gru"
    dim: int = 300
    lr: float = 1e-4
    batch_size: int = 4096
    dropout: float = 0.3
    n3: float = 0.0
    epochs: int = 500
    valid_every: int = 20
    negatives: str = "auto"
    seed: int = 0
    word_dim: int | None = None
    conve_reshape: tuple[int, int] | None = None
    conve_channels: int = 32
    pooling: str = "last"
    freeze_words: bool = False
    in_batch_threshold: int = 100_000
    eval_batch: int = 256

    def __post_init__(self):
        if self.conve_reshape is not None:
            object.__setattr__(self, "conve_reshape", tuple(int(v) for v in self.conve_reshape))
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.model not in MODELS:
            problems.append(f"model must be one of {MODELS}")
        if self.encoder not in ENCODERS:
            problems.append(f"encoder must be one of {ENCODERS}")
        if self.negatives not in NEGATIVES:
            problems.append(f"negatives must be one of {NEGATIVES}")
        if self.dim <= 0:
            problems.append("dim must be positive")
        if not self.lr > 0:
            problems.append("lr must be positive")
        if self.batch_size < 1:
            problems.append("batch_size must be at least 1")
        if not 0 <= self.dropout < 1:
            problems.append("dropout must lie in [0, 1)")
        if self.n3 < 0:
            problems.append("n3 must be non-negative")
        if self.epochs < 0:
            problems.append("epochs must be non-negative")
        if self.valid_every < 1:
            problems.append("valid_every must be at least 1")
        if problems:
            raise ValueError("invalid training config: " + "; ".join(problems))

    def as_dict(self) -> dict:
        out = asdict(self)
        if out["conve_reshape"] is not None:
            out["conve_reshape"] = list(out["conve_reshape"])
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown training config keys {sorted(unknown)}")
        return cls(**values)

    def sort_key(self) -> tuple:
        return tuple((k, "" if v is None else str(v)) for k, v in sorted(self.as_dict().items()))

    def negatives_for(self, store: TripleStore) -> str:
        if self.negatives != "auto":
            return self.negatives
        return "in-batch" if store.n_entities > self.in_batch_threshold else "full"


@dataclass
class TrainReport:
    config: TrainConfig
    trace: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_mrr: float = float("nan")
    best_state: dict[str, np.ndarray] = field(default_factory=dict)
    checkpoint: Path | None = None
    wall_clock: float = 0.0

    @property
    def mrr_trace(self) -> list[float]:
        return [row["MRR"] for row in self.trace]


def batches(groups: Sequence[OneToNGroup], batch_size: int, rng: np.random.Generator) -> list[list[OneToNGroup]]:
    """Shuffled batches of groups; a trailing batch of one joins its predecessor."""
    order = rng.permutation(len(groups))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # batch norm needs two rows per batch
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return [[groups[i] for i in chunk] for chunk in chunks]


def batch_targets(batch: Sequence[OneToNGroup], candidates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Multi-hot targets over ``candidates`` plus the positive column indices."""
    targets = np.zeros((len(batch), len(candidates)), dtype=T.get_default_dtype())
    cols = []
    for i, g in enumerate(batch):
        c = np.searchsorted(candidates, g.tails)
        targets[i, c] = 1.0
        cols.append(c)
    return targets, np.unique(np.concatenate(cols))


def batch_loss(model: KBCModel, batch: Sequence[OneToNGroup], mode: str, n3: float) -> T.Tensor:
    heads = np.array([g.head for g in batch], dtype=np.int64)
    rels = np.array([g.relation for g in batch], dtype=np.int64)
    if mode == "in-batch":
        candidates = in_batch_candidates(batch)
        scores = model.forward(heads, rels, candidates)
    else:
        candidates = np.arange(model.n_entities)
        scores = model.forward(heads, rels)
    targets, positives = batch_targets(batch, candidates)
    loss = T.softmax_cross_entropy(scores.logits, targets)
    reg = model.penalty(scores, positives, n3 / len(batch))
    return loss if reg is None else loss + reg


def model_for(config: TrainConfig, store: TripleStore, word_vectors: WordVectors | None = None) -> KBCModel:
    return build_model(
        config.model, config.encoder, config.dim, store,
        word_vectors=word_vectors, word_dim=config.word_dim, dropout=config.dropout,
        conve_reshape=config.conve_reshape, conve_channels=config.conve_channels,
        pooling=config.pooling, freeze_words=config.freeze_words, seed=config.seed,
    )


def train(
    store: TripleStore,
    config: TrainConfig,
    model: KBCModel | None = None,
    clusters: ClusterMap | None = None,
    word_vectors: WordVectors | None = None,
    log_path=None,
    on_epoch: Callable[[int, KBCModel], None] | None = None,
) -> tuple[KBCModel, TrainReport]:
    """Train ``model`` (fresh from ``config`` if omitted) and restore its best snapshot.

    With an empty validation split no snapshot is selected and the final
    state is kept.
    """
    if not store.has_reciprocals:
        raise ValueError("training needs a store with reciprocal relations")
    start = time.perf_counter()
    if model is None:
        model = model_for(config, store, word_vectors)
    if hasattr(model.scorer, "dropout"):
        model.scorer.dropout = config.dropout
    model.reseed_dropout([config.seed, 7])
    report = TrainReport(config)
    report.best_state = model.state_dict()
    groups = group_one_to_n(store)
    if not groups and config.epochs:
        raise ValueError("training split is empty")
    mode = config.negatives_for(store)
    params = model.parameters()
    adam = AdamState(lr=config.lr)
    validate = len(store.valid) > 0
    filter_index = FilterIndex(store) if validate else None
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if log:
            log.write("\t".join(LOG_COLUMNS) + "\n")
        for epoch in range(1, config.epochs + 1):
            model.train()
            total, count = 0.0, 0
            for batch in batches(groups, config.batch_size, np.random.default_rng([config.seed, epoch])):
                try:
                    loss = batch_loss(model, batch, mode, config.n3)
                    value = loss.item()
                    if not math.isfinite(value):
                        raise NumericError(f"non-finite loss {value}")
                    T.zero_grad(params.values())
                    grads = T.backward(loss, params.values())
                    adam_step(params, dict(zip(params, grads)), adam)
                except (NumericError, TrainingError) as exc:
                    raise TrainingError(f"{exc} at epoch {epoch}; config {config.as_dict()}") from exc
                total += value * len(batch)
                count += len(batch)
            epoch_loss = total / count
            report.losses.append(epoch_loss)
            if on_epoch is not None:
                on_epoch(epoch, model)
            if epoch % config.valid_every == 0 or epoch == config.epochs:
                row = {"epoch": epoch, "loss": epoch_loss, "MR": float("nan"), "MRR": float("nan"),
                       "H@10": float("nan")}
                if validate:
                    rep = evaluate(model, store, clusters, "valid", filter_index, config.eval_batch)
                    row.update(MR=rep.mr, MRR=rep.mrr, **{"H@10": rep.hits(10)})
                    if not report.trace or rep.mrr > report.best_mrr or math.isnan(report.best_mrr):
                        report.best_mrr = rep.mrr
                        report.best_epoch = epoch
                        report.best_state = model.state_dict()
                else:
                    report.best_epoch = epoch
                    report.best_state = model.state_dict()
                report.trace.append(row)
                if log:
                    log.write("\t".join([str(epoch)] + [f"{row[c]:.6f}" for c in LOG_COLUMNS[1:]]) + "\n")
                    log.flush()
    finally:
        if log:
            log.close()
    model.load_state_dict(report.best_state)
    model.eval()
    report.wall_clock = time.perf_counter() - start
    return model, report


@dataclass
class GridResult:
    best_config: TrainConfig
    best_report: TrainReport
    best_model: KBCModel
    reports: list[TrainReport]


def grid_configs(base: TrainConfig, grid: dict[str, Sequence]) -> list[TrainConfig]:
    """Cartesian product of ``grid`` over ``base``, in config lexicographic order."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must name at least one value per key")
    keys = sorted(grid)
    configs = [replace(base, **dict(zip(keys, combo))) for combo in itertools.product(*(grid[k] for k in keys))]
    return sorted(configs, key=TrainConfig.sort_key)


def grid_search(
    store: TripleStore,
    base: TrainConfig,
    grid: dict[str, Sequence],
    model_factory: Callable[[TrainConfig], KBCModel] | None = None,
    clusters: ClusterMap | None = None,
    word_vectors: WordVectors | None = None,
    log_dir=None,
) -> GridResult:
    """Exhaustive sweep; the highest validation MRR wins, earlier configs win ties."""
    best = None
    reports = []
    for i, config in enumerate(grid_configs(base, grid)):
        model = model_factory(config) if model_factory else None
        log_path = Path(log_dir) / f"run{i:03d}.log" if log_dir else None
        model, report = train(store, config, model, clusters, word_vectors, log_path)
        reports.append(report)
        score = -math.inf if math.isnan(report.best_mrr) else report.best_mrr
        if best is None or score > best[0]:
            best = (score, config, report, model)
    return GridResult(best[1], best[2], best[3], reports)


PRETRAIN_DIMS = {"tucker": (100, 200, 300), "conve": (300, 500), "5star": (200, 500)}
DROPOUTS = {"tucker": (0.3, 0.4), "conve": (0.2, 0.3)}


def standard_grid(model: str, stage: str) -> dict[str, tuple]:
    """Hyperparameter grid used for pre-training or fine-tuning ``model``."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    if stage == "pretrain":
        grid = {"lr": (1e-4, 3e-4), "batch_size": (4096,), "epochs": (100,),
                "negatives": ("in-batch",)}
        reg = {"n3": (0.1, 0.03)}
    elif stage == "finetune":
        grid = {"lr": (3e-5, 1e-4, 3e-4), "batch_size": (512, 1024, 2048, 4096), "epochs": (500,)}
        reg = {"n3": (0.3, 0.1, 0.03)}
    else:
        raise ValueError(f"stage must be 'pretrain' or 'finetune', got {stage!r}")
    grid["dim"] = PRETRAIN_DIMS[model]
    if model == "5star":
        grid.update(reg)
    else:
        grid["dropout"] = DROPOUTS[model]
    return grid


def grid_size(grid: dict[str, Sequence]) -> int:
    return math.prod(len(v) for v in grid.values())
