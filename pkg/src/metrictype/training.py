"""Training loop, learning-rate schedule, early stopping, checkpoints and ablations."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import torch

from .baseline_svm import SVMBaseline, SVMConfig
from .dataset_io import Vocabulary, build_vocabularies
from .evaluation import EvalReport, Prediction, build_report
from .neural_core import seed_everything
from .pointer_generator import PGConfig, PointerGenerator
from .segment_encoder import SegConfig, SegmentEncoderModel
from .table_model import TableInstance

logger = logging.getLogger(__name__)

MODEL_KINDS = ("pg", "segenc", "svm")
DEFAULT_LR = {"pg": 3e-3, "segenc": 3e-5}
ABLATION_FLAGS = {"no_copy": ("pg",), "no_generation": ("pg",), "no_segment_embeddings": ("segenc",)}
SEED_ENV = "TABLEMETRIC_SEED"


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: str = "pg"
    batch_size: int = 10
    learning_rate: Optional[float] = None   # None -> per-model default
    max_epochs: int = 20
    patience: int = 10
    alpha: float = 0.5
    seed: int = 0
    embedding_init: Optional[str] = None
    no_copy: bool = False
    no_generation: bool = False
    no_segment_embeddings: bool = False
    warmup_fraction: float = 0.1
    early_stopping_metric: str = "acc_m_token_sm"
    dtype: str = "float32"
    pg: Dict = field(default_factory=dict)      # overrides for PGConfig
    segenc: Dict = field(default_factory=dict)  # overrides for SegConfig
    svm: Dict = field(default_factory=dict)     # overrides for SVMConfig

    def __post_init__(self):
        problems = []
        if self.model not in MODEL_KINDS:
            problems.append(f"model must be one of {MODEL_KINDS}")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            problems.append("patience must lie in [0, max_epochs]")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append("alpha must lie in [0, 1]")
        if self.dtype not in ("float32", "float64"):
            problems.append("dtype must be float32 or float64")
        for flag, kinds in ABLATION_FLAGS.items():
            if getattr(self, flag) and self.model not in kinds:
                problems.append(f"{flag} is not applicable to model {self.model!r}")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else DEFAULT_LR.get(self.model, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def load_config(path=None, **overrides) -> TrainConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    if SEED_ENV in os.environ:
        data["seed"] = int(os.environ[SEED_ENV])
    unknown = set(data) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**data)


def slanted_triangular(step: int, total_steps: int, peak: float, warmup_fraction: float = 0.1) -> float:
    """Linear warmup to ``peak`` at step ceil(frac*T) (at least 1), then linear decay to 0 at step T."""
    cut = max(1, math.ceil(total_steps * warmup_fraction))
    if step <= cut:
        return peak * step / cut
    if total_steps == cut:
        return peak
    return peak * max(0.0, (total_steps - step) / (total_steps - cut))


def make_batches(tables: Sequence[TableInstance], batch_size: int, rng: random.Random) -> List[List[TableInstance]]:
    """Shuffle, then sort within windows by header-level count so batches pad little."""
    order = list(tables)
    rng.shuffle(order)
    window = batch_size * 5
    grouped = []
    for i in range(0, len(order), window):
        grouped += sorted(order[i:i + window], key=lambda t: (t.u + t.v, t.u))
    batches = [grouped[i:i + batch_size] for i in range(0, len(grouped), batch_size)]
    rng.shuffle(batches)
    return batches


# --- model construction ------------------------------------------------------

class OracleModel:
    """Predicts the gold target; used to sanity-check evaluation plumbing."""

    kind = "oracle"

    def predict(self, tables: Sequence[TableInstance]) -> List[Prediction]:
        from .table_model import output_class

        return [Prediction(t.target.location, t.target.level, t.target.tokens,
                           output_class(t.target, t.caption)) for t in tables]


def build_model(config: TrainConfig, vocab: Vocabulary, metric_vocab: Vocabulary):
    if config.model == "pg":
        pg = PGConfig(alpha=config.alpha, no_copy=config.no_copy, no_generation=config.no_generation,
                      embedding_init=config.embedding_init, **config.pg)
        model = PointerGenerator(pg, vocab, metric_vocab)
    elif config.model == "segenc":
        seg = SegConfig(alpha=config.alpha, use_segment_embeddings=not config.no_segment_embeddings, **config.segenc)
        model = SegmentEncoderModel(seg, vocab, metric_vocab)
    else:
        raise ConfigError("svm models are fitted, not built")
    return model.to(getattr(torch, config.dtype))


def copy_classes_for(config: TrainConfig) -> bool:
    return config.model == "pg" and not config.no_copy


def evaluate(model, tables: Sequence[TableInstance], config: Optional[TrainConfig] = None, **extra) -> EvalReport:
    preds = predict_all(model, tables)
    copy_classes = copy_classes_for(config) if config is not None else getattr(model, "kind", "") == "oracle"
    return build_report(tables, preds, copy_classes=copy_classes, **extra)


def predict_all(model, tables: Sequence[TableInstance], chunk: int = 64) -> List[Prediction]:
    preds: List[Prediction] = []
    for i in range(0, len(tables), chunk):
        preds += model.predict(tables[i:i + chunk])
    return preds


# --- checkpoints ---------------------------------------------------------------

def save_checkpoint(out_dir, config: TrainConfig, model, vocab: Vocabulary, metric_vocab: Vocabulary,
                    epoch: int, metrics: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.model == "svm":
        model.save(out / "model.json")
    else:
        torch.save(model.state_dict(), out / "model.pt")
    (out / "vocab.json").write_text(json.dumps({"general": vocab.to_dict(), "metric": metric_vocab.to_dict()}),
                                    encoding="utf-8")
    manifest = {"kind": config.model, "config_hash": config.digest(), "epoch": epoch,
                "metrics": metrics, "config": config.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return out


def write_oracle_checkpoint(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps({"kind": "oracle", "config_hash": None, "epoch": 0,
                                                   "metrics": {}, "config": None}), encoding="utf-8")
    return out


def load_checkpoint(path) -> Tuple[object, Optional[TrainConfig]]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    if manifest["kind"] == "oracle":
        return OracleModel(), None
    cfg = manifest["config"]
    if cfg.get("embedding_init"):
        cfg["embedding_init"] = None  # weights come from the checkpoint
    config = TrainConfig(**cfg)
    if config.model == "svm":
        return SVMBaseline.load(path / "model.json"), config
    vocabs = json.loads((path / "vocab.json").read_text(encoding="utf-8"))
    vocab, metric_vocab = Vocabulary.from_dict(vocabs["general"]), Vocabulary.from_dict(vocabs["metric"])
    model = build_model(config, vocab, metric_vocab)
    if config.model == "pg":
        emb_dim = torch.load(path / "model.pt", map_location="cpu")["embedding.weight"].shape[1]
        if emb_dim != model.config.embedding_dim:
            config.pg = {**config.pg, "embedding_dim": emb_dim}
            model = build_model(config, vocab, metric_vocab)
    model.load_state_dict(torch.load(path / "model.pt", map_location="cpu"))
    model.eval()
    return model, config


# --- training --------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Path
    log: List[dict]
    best_epoch: int
    best_metric: float
    model: object = None


def _round(d: dict) -> dict:
    return {k: (round(v, 10) if isinstance(v, float) else v) for k, v in d.items()}


def train(config: TrainConfig, train_tables: Sequence[TableInstance], val_tables: Sequence[TableInstance],
          out_dir) -> TrainResult:
    if not train_tables or not val_tables:
        raise ValueError("train and validation splits must be non-empty")
    seed_everything(config.seed)
    vocab, metric_vocab = build_vocabularies(train_tables)

    if config.model == "svm":
        svm_cfg = SVMConfig(**{"seed": config.seed, **config.svm})
        model = SVMBaseline.fit(train_tables, svm_cfg)
        report = evaluate(model, val_tables, config)
        metrics = _round(report.percentages())
        log = [{"epoch": 1, "val": metrics}]
        ckpt = save_checkpoint(out_dir, config, model, vocab, metric_vocab, 1, metrics)
        _write_log(out_dir, log)
        return TrainResult(ckpt, log, 1, getattr(report, config.early_stopping_metric), model)

    model = build_model(config, vocab, metric_vocab)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = random.Random(config.seed)
    n_batches = math.ceil(len(train_tables) / config.batch_size)
    total_steps = n_batches * config.max_epochs
    step = 0
    best_metric, best_epoch, best_state, bad_epochs = -math.inf, 0, None, 0
    log: List[dict] = []

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        epoch_loss = 0.0
        for tables in make_batches(train_tables, config.batch_size, rng):
            step += 1
            lr = slanted_triangular(step, total_steps, config.lr, config.warmup_fraction)
            for group in optimizer.param_groups:
                group["lr"] = lr
            batch = model.batch(tables)
            loss = model.loss(model(batch), batch)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step} "
                                    f"(tables {[t.id for t in tables]})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(tables)

        report = evaluate(model, val_tables, config)
        metric = getattr(report, config.early_stopping_metric)
        entry = {"epoch": epoch, "train_loss": round(epoch_loss / len(train_tables), 10),
                 "lr": lr, "val": _round(report.percentages())}
        log.append(entry)
        logger.info("epoch %d loss %.4f val %s", epoch, entry["train_loss"], entry["val"])
        if metric > best_metric:
            best_metric, best_epoch, bad_epochs = metric, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                logger.info("early stopping after epoch %d (best %d)", epoch, best_epoch)
                break

    model.load_state_dict(best_state)
    model.eval()
    ckpt = save_checkpoint(out_dir, config, model, vocab, metric_vocab, best_epoch, log[best_epoch - 1]["val"])
    _write_log(out_dir, log)
    return TrainResult(ckpt, log, best_epoch, best_metric, model)


def _write_log(out_dir, log: List[dict]) -> None:
    Path(out_dir, "train_log.json").write_text(json.dumps(log, indent=1), encoding="utf-8")


def ablate(config: TrainConfig, flag: str, train_tables, val_tables, test_tables, out_dir) -> EvalReport:
    if flag not in ABLATION_FLAGS:
        raise ConfigError(f"unknown ablation flag {flag!r}; choose from {sorted(ABLATION_FLAGS)}")
    if config.model not in ABLATION_FLAGS[flag]:
        raise ConfigError(f"{flag} is not applicable to model {config.model!r}")
    variant = TrainConfig(**{**config.to_dict(), flag: True})
    if flag == "no_generation":
        variant = TrainConfig(**{**variant.to_dict(), "no_copy": True})
    result = train(variant, train_tables, val_tables, out_dir)
    return evaluate(result.model, test_tables, variant, ablation=flag)
