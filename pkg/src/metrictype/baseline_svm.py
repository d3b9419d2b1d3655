"""tf.idf + linear SVM baseline: one classifier for location, one for the metric token."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import sparse
from sklearn.svm import LinearSVC

from .dataset_io import header_tokens, metric_tokens
from .evaluation import Prediction
from .table_model import Location, TableInstance

NONE_LABEL = "none"


class NotFittedError(RuntimeError):
    pass


class TfidfFeaturizer:
    """Raw-count tf times smoothed idf ln((1+N)/(1+df)) + 1, L2 normalised."""

    def __init__(self):
        self.columns: Optional[Dict[str, int]] = None
        self.idf: Optional[np.ndarray] = None

    def fit(self, documents: Sequence[Sequence[str]]) -> "TfidfFeaturizer":
        df = Counter(tok for doc in documents for tok in set(doc))
        self.columns = {tok: i for i, tok in enumerate(sorted(df))}
        n = len(documents)
        self.idf = np.array([math.log((1 + n) / (1 + df[tok])) + 1 for tok in sorted(df)])
        return self

    def transform_one(self, document: Sequence[str]) -> Dict[int, float]:
        if self.columns is None:
            raise NotFittedError("TfidfFeaturizer.transform called before fit")
        counts = Counter(tok for tok in document if tok in self.columns)
        weights = {self.columns[t]: c * self.idf[self.columns[t]] for t, c in counts.items()}
        norm = math.sqrt(sum(w * w for w in weights.values()))
        return {k: w / norm for k, w in weights.items()} if norm > 0 else {}

    def transform(self, documents: Sequence[Sequence[str]]) -> sparse.csr_matrix:
        if self.columns is None:
            raise NotFittedError("TfidfFeaturizer.transform called before fit")
        rows, cols, vals = [], [], []
        for i, doc in enumerate(documents):
            for j, w in self.transform_one(doc).items():
                rows.append(i)
                cols.append(j)
                vals.append(w)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(len(documents), len(self.columns)))

    def to_dict(self) -> dict:
        return {"columns": self.columns, "idf": self.idf.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TfidfFeaturizer":
        f = cls()
        f.columns = dict(d["columns"])
        f.idf = np.asarray(d["idf"])
        return f


def tfidf_transform(featurizer: TfidfFeaturizer, document: Sequence[str]) -> Dict[int, float]:
    return featurizer.transform_one(document)


@dataclass
class SVMConfig:
    C: float = 1.0
    max_iter: int = 10000
    seed: int = 0


class LinearClassifier:
    """Fitted one-vs-rest linear model kept as plain arrays so it round-trips through JSON."""

    def __init__(self, featurizer: TfidfFeaturizer, labels: List[str], coef: np.ndarray, intercept: np.ndarray):
        self.featurizer = featurizer
        self.labels = labels
        self.coef = coef            # (n_labels, n_features)
        self.intercept = intercept  # (n_labels,)

    @classmethod
    def fit(cls, documents, labels, config: SVMConfig) -> "LinearClassifier":
        if not documents:
            raise ValueError("cannot fit on an empty training set")
        featurizer = TfidfFeaturizer().fit(documents)
        classes = sorted(set(labels))
        n_feat = len(featurizer.columns)
        if len(classes) == 1:
            return cls(featurizer, classes, np.zeros((1, n_feat)), np.ones(1))
        svm = LinearSVC(C=config.C, max_iter=config.max_iter, random_state=config.seed)
        svm.fit(featurizer.transform(documents), labels)
        coef, intercept = svm.coef_, svm.intercept_
        if len(classes) == 2:
            # binary LinearSVC stores one hyperplane for the positive (second) class
            coef = np.vstack([-coef[0], coef[0]])
            intercept = np.array([-intercept[0], intercept[0]])
        return cls(featurizer, list(svm.classes_), coef, intercept)

    def decision(self, document: Sequence[str]) -> np.ndarray:
        scores = self.intercept.copy()
        for j, w in self.featurizer.transform_one(document).items():
            scores += w * self.coef[:, j]
        return scores

    def predict(self, document: Sequence[str], allowed: Optional[set] = None) -> str:
        scores = self.decision(document)
        order = np.argsort(-scores, kind="stable")
        for k in order:
            if allowed is None or self.labels[k] in allowed:
                return self.labels[k]
        return self.labels[int(order[0])]

    def to_dict(self) -> dict:
        return {"featurizer": self.featurizer.to_dict(), "labels": self.labels,
                "coef": self.coef.tolist(), "intercept": self.intercept.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearClassifier":
        return cls(TfidfFeaturizer.from_dict(d["featurizer"]), list(d["labels"]),
                   np.asarray(d["coef"], dtype=float).reshape(len(d["labels"]), -1),
                   np.asarray(d["intercept"], dtype=float))


def location_label(table: TableInstance) -> str:
    t = table.target
    if t.location is Location.OUT_OF_HEADER:
        return NONE_LABEL
    return f"{t.location.value}:{t.level}"


def feasible_labels(table: TableInstance) -> set:
    labels = {NONE_LABEL}
    labels.update(f"rh:{k}" for k in range(1, table.u + 1))
    labels.update(f"ch:{l}" for l in range(1, table.v + 1))
    return labels


def fit_location_classifier(tables: Sequence[TableInstance], config: SVMConfig = SVMConfig()) -> LinearClassifier:
    return LinearClassifier.fit([header_tokens(t) for t in tables], [location_label(t) for t in tables], config)


def fit_token_classifier(tables: Sequence[TableInstance], config: SVMConfig = SVMConfig()) -> LinearClassifier:
    return LinearClassifier.fit([list(t.caption) for t in tables], [metric_tokens(t)[0] for t in tables], config)


class SVMBaseline:
    def __init__(self, location: LinearClassifier, token: LinearClassifier, config: SVMConfig = SVMConfig()):
        self.location = location
        self.token = token
        self.config = config

    @classmethod
    def fit(cls, tables: Sequence[TableInstance], config: SVMConfig = SVMConfig()) -> "SVMBaseline":
        return cls(fit_location_classifier(tables, config), fit_token_classifier(tables, config), config)

    def predict(self, tables: Sequence[TableInstance]) -> List[Prediction]:
        preds = []
        for t in tables:
            # levels the table doesn't have are never predicted
            allowed = feasible_labels(t)
            label = self.location.predict(header_tokens(t), allowed=allowed)
            if label not in allowed:
                label = NONE_LABEL
            if label == NONE_LABEL:
                tok = self.token.predict(list(t.caption))
                preds.append(Prediction(Location.OUT_OF_HEADER, None, (tok,) * max(t.n_cols, 1), "Gen"))
                continue
            axis, level = label.split(":")
            level = int(level)
            if axis == "rh":
                preds.append(Prediction(Location.ROW_HEADER, level, t.row_headers[level - 1], "LRow"))
            else:
                preds.append(Prediction(Location.COLUMN_HEADER, level, t.column_headers[level - 1], "LCol"))
        return preds

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({
            "kind": "svm", "config": asdict(self.config),
            "location": self.location.to_dict(), "token": self.token.to_dict(),
        }), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SVMBaseline":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(LinearClassifier.from_dict(d["location"]), LinearClassifier.from_dict(d["token"]),
                   SVMConfig(**d["config"]))
