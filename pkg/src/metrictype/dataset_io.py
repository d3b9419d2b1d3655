"""Corpus loading/saving, vocabularies, corpus statistics and a synthetic table generator."""
from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .table_model import Location, MetricTarget, TableInstance, validate

logger = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"


def tokenize(text: str) -> List[str]:
    """Lowercase and split on whitespace; punctuation stays inside tokens."""
    return text.lower().split()


class CorpusError(ValueError):
    """Raised for malformed corpus files (bad JSON or schema problems)."""


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = (), is_metric_vocab: bool = False):
        self.is_metric_vocab = is_metric_vocab
        self.itos: List[str] = [PAD, UNK]
        self.stoi: Dict[str, int] = {PAD: 0, UNK: 1}
        for tok in tokens:
            self.add(tok)

    pad_id = 0
    unk_id = 1

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def __contains__(self, token: str) -> bool:
        return token in self.stoi and self.stoi[token] > 1

    def __len__(self) -> int:
        return len(self.itos)

    def to_dict(self) -> dict:
        return {"is_metric_vocab": self.is_metric_vocab, "tokens": self.itos[2:]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["tokens"], is_metric_vocab=d.get("is_metric_vocab", False))


def header_tokens(table: TableInstance) -> List[str]:
    toks: List[str] = []
    for level in table.row_headers + table.column_headers:
        for name in level:
            toks.extend(tokenize(name))
    return toks


def metric_tokens(table: TableInstance) -> List[str]:
    return [t.strip().lower() for t in table.target.tokens]


def build_vocabularies(tables: Sequence[TableInstance]) -> Tuple[Vocabulary, Vocabulary]:
    """General (caption + header) vocabulary and the metric-type vocabulary.

    Tokens are inserted in sorted order so ids do not depend on corpus order.
    """
    general, metric = set(), set()
    for t in tables:
        general.update(t.caption)
        general.update(header_tokens(t))
        metric.update(metric_tokens(t))
    return Vocabulary(sorted(general)), Vocabulary(sorted(metric), is_metric_vocab=True)


# --- file format -----------------------------------------------------------

def table_from_record(rec: dict) -> TableInstance:
    try:
        m = rec["metric"]
        loc = m["location"]
        if loc not in ("rh", "ch", "none"):
            raise CorpusError(f"unknown location {loc!r}")
        return TableInstance(
            id=str(rec["id"]),
            caption=tokenize(rec["caption"]),
            row_headers=[[str(x) for x in lv] for lv in rec.get("row_headers", [])],
            column_headers=[[str(x) for x in lv] for lv in rec.get("column_headers", [])],
            cells=[[str(x) for x in row] for row in rec.get("cells", [])],
            target=MetricTarget(Location(loc), m.get("level"), tuple(str(x) for x in m["tokens"])),
        )
    except KeyError as e:
        raise CorpusError(f"missing field {e}") from None
    except TypeError as e:
        raise CorpusError(str(e)) from None


def table_to_record(t: TableInstance) -> dict:
    return {
        "id": t.id,
        "caption": " ".join(t.caption),
        "row_headers": [list(lv) for lv in t.row_headers],
        "column_headers": [list(lv) for lv in t.column_headers],
        "cells": [list(r) for r in t.cells],
        "metric": {
            "location": t.target.location.value,
            "level": t.target.level,
            "tokens": list(t.target.tokens),
        },
    }


@dataclass
class LoadResult:
    tables: List[TableInstance]
    rejected: List[dict] = field(default_factory=list)  # {"index", "id", "violations"}


def load_corpus(path, split: Optional[str] = None, quarantine: Optional[Path] = None) -> LoadResult:
    """Load a JSON corpus file.

    ``path`` may be a file, or a directory holding ``<split>.json``. Records
    that fail validation are collected in ``LoadResult.rejected`` and, if
    ``quarantine`` is given (or defaults to ``<file>.rejected.json``), written
    there as a sidecar report.
    """
    path = Path(path)
    if path.is_dir():
        if split is None:
            raise CorpusError(f"{path} is a directory; a split name is required")
        path = path / f"{split}.json"
    text = path.read_text(encoding="utf-8")
    try:
        records = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorpusError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(records, list):
        raise CorpusError(f"{path}: expected a JSON array of table records")

    result = LoadResult(tables=[])
    for i, rec in enumerate(records):
        try:
            table = table_from_record(rec)
        except CorpusError as e:
            raise CorpusError(f"{path}: record {i}: {e}") from None
        problems = validate(table)
        if problems:
            result.rejected.append({"index": i, "id": table.id, "violations": problems})
        else:
            result.tables.append(table)

    if result.rejected:
        logger.warning("%s: %d of %d records failed validation", path, len(result.rejected), len(records))
        sidecar = quarantine or path.with_suffix(".rejected.json")
        sidecar.write_text(json.dumps(result.rejected, indent=2), encoding="utf-8")
    return result


def save_corpus(tables: Sequence[TableInstance], path) -> None:
    Path(path).write_text(
        json.dumps([table_to_record(t) for t in tables], indent=1, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load_word_vectors(path) -> Dict[str, np.ndarray]:
    """Read a whitespace separated ``token v1 ... vD`` text file."""
    vectors: Dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            vec = np.asarray(parts[1:], dtype=np.float64)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise CorpusError(f"{path}:{lineno}: expected {dim} values, got {len(vec)}")
            vectors[parts[0]] = vec
    return vectors


# --- statistics ------------------------------------------------------------

@dataclass
class CorpusStats:
    table_count: int
    average_rows: float
    average_columns: float
    max_row_header_level: int
    max_column_header_level: int
    header_vocab_size: int
    all_metric_type_count: int
    unique_metric_type_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def corpus_stats(tables: Sequence[TableInstance]) -> CorpusStats:
    n = len(tables)
    header_vocab = {tok for t in tables for tok in header_tokens(t)}
    all_metrics = [tok for t in tables for tok in metric_tokens(t)]
    return CorpusStats(
        table_count=n,
        average_rows=float(np.mean([t.n_rows for t in tables])) if n else 0.0,
        average_columns=float(np.mean([t.n_cols for t in tables])) if n else 0.0,
        max_row_header_level=max((t.u for t in tables), default=0),
        max_column_header_level=max((t.v for t in tables), default=0),
        header_vocab_size=len(header_vocab),
        all_metric_type_count=len(all_metrics),
        unique_metric_type_count=len(set(all_metrics)),
    )


# --- synthetic corpora -----------------------------------------------------

DEFAULT_METRICS = ("accuracy", "bleu", "f1", "prec", "rec", "rouge-1", "rouge-l", "meteor", "em", "auc")


@dataclass
class SynthSpec:
    """Knobs for :func:`generate_synthetic`.

    ``proportions`` is (ch, rh, capt). ``caption_lexicon`` defaults to the
    header ``metric_lexicon``; pass unseen words to build copy-only test sets.
    """

    proportions: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    metric_lexicon: Tuple[str, ...] = DEFAULT_METRICS
    caption_lexicon: Optional[Tuple[str, ...]] = None
    models: Tuple[str, ...] = ("baseline", "ours", "bert", "lstm", "cnn", "svm", "crf", "transformer")
    tasks: Tuple[str, ...] = ("task 1", "task 2", "ner", "pos", "parsing", "mt", "qa", "nli")
    datasets: Tuple[str, ...] = ("wmt14", "squad", "conll", "snli", "ptb", "imdb", "sst-2")
    filler: Tuple[str, ...] = ("results", "of", "the", "on", "comparison", "performance", "models", "test", "set", "our", "experimental")
    max_levels: int = 3
    min_size: int = 2
    max_size: int = 5


def _class_counts(size: int, proportions: Sequence[float]) -> List[int]:
    total = float(sum(proportions))
    raw = [size * p / total for p in proportions]
    counts = [int(np.floor(x)) for x in raw]
    # largest remainder, ties to earlier class
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: size - sum(counts)]:
        counts[i] += 1
    return counts


def _header_axis(rng: random.Random, spec: SynthSpec, n: int, n_levels: int, metric_level: Optional[int]):
    pools = [spec.models, spec.tasks, spec.datasets]
    levels = []
    for k in range(1, n_levels + 1):
        pool = spec.metric_lexicon if k == metric_level else pools[(k - 1) % len(pools)]
        if k == metric_level:
            base = rng.sample(list(pool), min(2, len(pool)))
            levels.append([base[i % len(base)] for i in range(n)])
        else:
            levels.append([rng.choice(pool) for _ in range(n)])
    return levels


def generate_synthetic(seed: int, size: int, spec: Optional[SynthSpec] = None) -> List[TableInstance]:
    """Deterministic toy corpus with a fixed mix of ch / rh / out-of-header targets."""
    if size <= 0:
        raise ValueError("size must be positive")
    spec = spec or SynthSpec()
    rng = random.Random(seed)
    n_ch, n_rh, n_capt = _class_counts(size, spec.proportions)
    kinds = ["ch"] * n_ch + ["rh"] * n_rh + ["capt"] * n_capt
    rng.shuffle(kinds)
    caption_lexicon = spec.caption_lexicon or spec.metric_lexicon

    tables = []
    for idx, kind in enumerate(kinds):
        n_r = rng.randint(spec.min_size, spec.max_size)
        n_c = rng.randint(spec.min_size, spec.max_size)
        u = rng.randint(1, spec.max_levels)
        v = rng.randint(1, spec.max_levels)
        rh_metric = rng.randint(1, u) if kind == "rh" else None
        ch_metric = rng.randint(1, v) if kind == "ch" else None
        rows = _header_axis(rng, spec, n_r, u, rh_metric)
        cols = _header_axis(rng, spec, n_c, v, ch_metric)
        caption = rng.sample(list(spec.filler), 4)
        if kind == "rh":
            target = MetricTarget(Location.ROW_HEADER, rh_metric, tuple(rows[rh_metric - 1]))
        elif kind == "ch":
            target = MetricTarget(Location.COLUMN_HEADER, ch_metric, tuple(cols[ch_metric - 1]))
        else:
            metric = rng.choice(list(caption_lexicon))
            caption.insert(rng.randint(0, len(caption)), metric)
            target = MetricTarget(Location.OUT_OF_HEADER, None, (metric,) * n_c)
        cells = [[f"{rng.uniform(0, 100):.1f}" for _ in range(n_c)] for _ in range(n_r)]
        tables.append(TableInstance(
            id=f"synth-{seed}-{idx}",
            caption=tokenize(" ".join(caption)),
            row_headers=rows,
            column_headers=cols,
            cells=cells,
            target=target,
        ))
    return tables
