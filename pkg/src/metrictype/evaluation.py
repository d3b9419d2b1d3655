"""Accuracy metrics and confusion matrices for metric-type identification."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .table_model import OUTPUT_CLASSES, Location, MetricTarget, TableInstance, output_class

HLEVEL_CONVENTIONS = ("all", "in_header")


@dataclass(frozen=True)
class Prediction:
    location: Location
    level: Optional[int]
    tokens: Tuple[str, ...]
    output_class: str
    p_hloc: Optional[Tuple[float, float, float]] = None  # (capt, rh, ch)

    def to_dict(self, table_id: str) -> dict:
        return {
            "id": table_id,
            "class": self.output_class,
            "tokens": list(self.tokens),
            "p_hloc": list(self.p_hloc) if self.p_hloc is not None else None,
            "level": self.level,
            "location": Location(self.location).value,
        }


def _norm(tok: str) -> str:
    return tok.strip().lower()


def _check_aligned(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise ValueError(f"predictions ({len(a)}) and golds ({len(b)}) are not aligned")


def location_accuracy(predictions: Sequence[Prediction], golds: Sequence[MetricTarget],
                      hlevel_convention: str = "all") -> Tuple[float, float]:
    """(acc_hloc, acc_hlevel).

    With the default convention an out-of-header gold counts as level-correct
    iff the predicted location is also out-of-header. ``"in_header"`` scores
    acc_hlevel over in-header golds only.
    """
    _check_aligned(predictions, golds)
    if hlevel_convention not in HLEVEL_CONVENTIONS:
        raise ValueError(f"unknown hlevel convention {hlevel_convention!r}")
    if not golds:
        return 0.0, 0.0
    loc_hits = level_hits = level_total = 0
    for p, g in zip(predictions, golds):
        same_loc = Location(p.location) is g.location
        loc_hits += same_loc
        if g.location is Location.OUT_OF_HEADER:
            if hlevel_convention == "all":
                level_total += 1
                level_hits += same_loc
        else:
            level_total += 1
            level_hits += same_loc and p.level == g.level
    return loc_hits / len(golds), (level_hits / level_total if level_total else 0.0)


def token_accuracy_sm(predicted: Sequence[Sequence[str]], gold: Sequence[Sequence[str]]) -> Tuple[float, float]:
    """(acc_m_sm, acc_m_token_sm) under exact, case-insensitive string matching.

    Token pairs are compared position by position; the per-table
    denominator is max(len(pred), len(gold)) so short outputs are penalised.
    """
    _check_aligned(predicted, gold)
    if not gold:
        return 0.0, 0.0
    list_hits = tok_hits = tok_total = 0
    for p, g in zip(predicted, gold):
        p, g = [_norm(t) for t in p], [_norm(t) for t in g]
        list_hits += p == g
        tok_hits += sum(a == b for a, b in zip(p, g))
        tok_total += max(len(p), len(g))
    return list_hits / len(gold), (tok_hits / tok_total if tok_total else 0.0)


def is_ordered_subsequence(pred: str, gold: str) -> bool:
    it = iter(gold)
    return all(ch in it for ch in pred)


def token_accuracy_ocm(predicted: Sequence[Sequence[str]], gold: Sequence[Sequence[str]]) -> float:
    """Share of predicted tokens whose characters appear in the gold token in order.

    Literal rule, so "rec" scores against "prec".
    """
    _check_aligned(predicted, gold)
    hits = total = 0
    for p, g in zip(predicted, gold):
        p, g = [_norm(t) for t in p], [_norm(t) for t in g]
        hits += sum(is_ordered_subsequence(a, b) for a, b in zip(p, g))
        total += max(len(p), len(g))
    return hits / total if total else 0.0


def confusion_matrix(predicted: Sequence[str], actual: Sequence[str]) -> List[List[int]]:
    """4x4 counts, rows = actual, columns = predicted, order LRow, LCol, CCapt, Gen."""
    _check_aligned(predicted, actual)
    index = {c: i for i, c in enumerate(OUTPUT_CLASSES)}
    matrix = [[0] * len(OUTPUT_CLASSES) for _ in OUTPUT_CLASSES]
    for p, a in zip(predicted, actual):
        matrix[index[a]][index[p]] += 1
    return matrix


@dataclass
class EvalReport:
    acc_hloc: float
    acc_hlevel: float
    acc_m_sm: float
    acc_m_token_sm: float
    acc_m_token_ocm: float
    confusion: List[List[int]]
    n_tables: int
    copy_classes: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("acc_hloc", "acc_hlevel", "acc_m_sm", "acc_m_token_sm", "acc_m_token_ocm"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.acc_m_token_ocm < self.acc_m_token_sm:
            raise AssertionError("ordered-character accuracy fell below string-match accuracy")
        if sum(map(sum, self.confusion)) != self.n_tables:
            raise AssertionError("confusion matrix does not sum to the table count")

    def percentages(self) -> dict:
        return {k: round(100 * getattr(self, k), 2)
                for k in ("acc_hloc", "acc_hlevel", "acc_m_sm", "acc_m_token_sm", "acc_m_token_ocm")}

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("extra"))
        d["percent"] = self.percentages()
        d["classes"] = list(OUTPUT_CLASSES)
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_confusion_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["actual\\predicted", *OUTPUT_CLASSES])
            for cls, row in zip(OUTPUT_CLASSES, self.confusion):
                w.writerow([cls, *row])


def build_report(tables: Sequence[TableInstance], predictions: Sequence[Prediction],
                 copy_classes: bool = True, hlevel_convention: str = "all", **extra) -> EvalReport:
    _check_aligned(predictions, tables)
    golds = [t.target for t in tables]
    acc_hloc, acc_hlevel = location_accuracy(predictions, golds, hlevel_convention)
    pred_tokens = [p.tokens for p in predictions]
    gold_tokens = [g.tokens for g in golds]
    acc_m, acc_tok = token_accuracy_sm(pred_tokens, gold_tokens)
    acc_ocm = token_accuracy_ocm(pred_tokens, gold_tokens)
    actual = [output_class(t.target, t.caption, copy_classes) for t in tables]
    predicted = [p.output_class if copy_classes or p.output_class != "CCapt" else "Gen" for p in predictions]
    return EvalReport(acc_hloc, acc_hlevel, acc_m, acc_tok, acc_ocm,
                      confusion_matrix(predicted, actual), len(tables), copy_classes, dict(extra))
