"""Pointer-generator with supervised header-level attention."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .dataset_io import Vocabulary, load_word_vectors
from .evaluation import Prediction
from .neural_core import EmbeddingTable, SequenceEncoder, level_token_ids
from .table_model import Location, LocationClass, TableInstance, check

_TINY = 1e-30


@dataclass
class PGConfig:
    embedding_dim: int = 100
    hidden_size: int = 256
    num_layers: int = 2
    dropout: float = 0.1
    alpha: float = 0.5
    copy_loss_all: bool = False   # train the copy gate on in-header tables too
    no_copy: bool = False
    no_generation: bool = False
    embedding_init: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PGBatch:
    tables: List[TableInstance]
    caption_ids: torch.Tensor        # (B, Tc) general-vocab ids
    caption_mask: torch.Tensor       # (B, Tc)
    caption_ext_ids: torch.Tensor    # (B, Tc) ids in the extended metric vocabulary
    ext_tokens: List[List[str]]      # per table: caption tokens appended after the metric vocab
    row_tokens: torch.Tensor         # (B, U, K)
    col_tokens: torch.Tensor         # (B, V, K)
    gold_class: torch.Tensor         # (B,) LocationClass
    gold_level: torch.Tensor         # (B,) 0-based level on the gold axis, -1 if none
    gold_ext: torch.Tensor           # (B,) extended id of the gold token, -1 if unreachable
    gold_in_caption: torch.Tensor    # (B,) float 0/1

    def __len__(self) -> int:
        return len(self.tables)


@dataclass
class PGModelOutput:
    p_hloc: torch.Tensor          # (B, 3) over (capt, rh, ch)
    row_attention: torch.Tensor   # (B, U) a_rh, zero on absent levels
    col_attention: torch.Tensor   # (B, V)
    p_copy: torch.Tensor          # (B,)
    p_vocab: torch.Tensor         # (B, |W_m|)
    extended: torch.Tensor        # (B, |W_m| + max extra)
    caption_attention: torch.Tensor  # (B, Tc)
    log_p_hloc: Optional[torch.Tensor] = None

    @property
    def row_weights(self) -> torch.Tensor:
        return self.row_attention * self.p_hloc[:, LocationClass.RH:LocationClass.RH + 1]

    @property
    def col_weights(self) -> torch.Tensor:
        return self.col_attention * self.p_hloc[:, LocationClass.CH:LocationClass.CH + 1]

    def level_weights(self, i: int, u: int, v: int) -> torch.Tensor:
        """w_hlevel for table ``i`` in flat (rows then columns) order, length u+v."""
        return torch.cat([self.row_weights[i, :u], self.col_weights[i, :v]])


def extended_distribution(p_copy: torch.Tensor, p_vocab: torch.Tensor, caption_attention: torch.Tensor,
                          caption_ext_ids: torch.Tensor, n_extra: int) -> torch.Tensor:
    """P(w) = p_copy * sum of caption attention on positions holding w + (1 - p_copy) * P_vocab(w).

    Caption tokens outside the metric vocabulary occupy ids past ``len(p_vocab)``.
    """
    gen = (1 - p_copy).unsqueeze(-1) * p_vocab
    extended = torch.cat([gen, p_vocab.new_zeros(p_vocab.shape[0], n_extra)], -1)
    return extended.scatter_add(1, caption_ext_ids, p_copy.unsqueeze(-1) * caption_attention)


def _pad3(levels: List[List[List[int]]]) -> torch.Tensor:
    b = len(levels)
    n_lv = max((len(t) for t in levels), default=0)
    k = max((len(lv) for t in levels for lv in t), default=0)
    out = torch.zeros(b, max(n_lv, 1), max(k, 1), dtype=torch.long)
    for i, t in enumerate(levels):
        for j, lv in enumerate(t):
            out[i, j, :len(lv)] = torch.tensor(lv, dtype=torch.long)
    return out


def make_batch(tables: Sequence[TableInstance], vocab: Vocabulary, metric_vocab: Vocabulary) -> PGBatch:
    tables = [check(t) for t in tables]
    b = len(tables)
    tc = max(len(t.caption) for t in tables)
    caption_ids = torch.zeros(b, tc, dtype=torch.long)
    caption_ext = torch.zeros(b, tc, dtype=torch.long)
    caption_mask = torch.zeros(b, tc, dtype=torch.bool)
    ext_tokens: List[List[str]] = []
    gold_class = torch.zeros(b, dtype=torch.long)
    gold_level = torch.full((b,), -1, dtype=torch.long)
    gold_ext = torch.full((b,), -1, dtype=torch.long)
    gold_in_caption = torch.zeros(b)
    base = len(metric_vocab)

    for i, t in enumerate(tables):
        extra: Dict[str, int] = {}
        for j, tok in enumerate(t.caption):
            caption_ids[i, j] = vocab.lookup(tok)
            caption_mask[i, j] = True
            if tok in metric_vocab:
                caption_ext[i, j] = metric_vocab.lookup(tok)
            else:
                caption_ext[i, j] = base + extra.setdefault(tok, len(extra))
        ext_tokens.append(list(extra))
        tgt = t.target
        gold_class[i] = LocationClass.from_location(tgt.location)
        if tgt.location is not Location.OUT_OF_HEADER:
            gold_level[i] = tgt.level - 1
        gold = tgt.tokens[0].strip().lower()
        gold_in_caption[i] = float(gold in t.caption)
        if gold in metric_vocab:
            gold_ext[i] = metric_vocab.lookup(gold)
        elif gold in extra:
            gold_ext[i] = base + extra[gold]

    rows = [[level_token_ids(lv, vocab) for lv in t.row_headers] for t in tables]
    cols = [[level_token_ids(lv, vocab) for lv in t.column_headers] for t in tables]
    return PGBatch(tables, caption_ids, caption_mask, caption_ext, ext_tokens,
                   _pad3(rows), _pad3(cols), gold_class, gold_level, gold_ext, gold_in_caption)


class PointerGenerator(nn.Module):
    def __init__(self, config: PGConfig, vocab: Vocabulary, metric_vocab: Vocabulary,
                 vectors: Optional[Dict[str, np.ndarray]] = None):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.metric_vocab = metric_vocab
        if vectors is None and config.embedding_init:
            vectors = load_word_vectors(config.embedding_init)
        if vectors:
            self.embedding = EmbeddingTable.from_pretrained_vectors(vocab, vectors)
            config.embedding_dim = self.embedding.embedding_dim
        else:
            self.embedding = EmbeddingTable(len(vocab), config.embedding_dim)
        h = config.hidden_size
        self.caption_encoder = SequenceEncoder(config.embedding_dim, h, config.num_layers, config.dropout)
        self.header_encoder = SequenceEncoder(config.embedding_dim, h, config.num_layers, config.dropout)
        self.location_head = nn.Linear(8 * h, 3)
        self.copy_head = nn.Linear(4 * h, 1)
        self.vocab_head = nn.Linear(4 * h, len(metric_vocab))

    @property
    def dtype(self) -> torch.dtype:
        return self.embedding.weight.dtype

    def batch(self, tables: Sequence[TableInstance]) -> PGBatch:
        return make_batch(tables, self.vocab, self.metric_vocab)

    def _level_vectors(self, token_ids: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        live = (token_ids != 0).to(self.dtype)                      # (B, L, K)
        summed = (self.embedding(token_ids) * live.unsqueeze(-1)).sum(2)
        counts = live.sum(2)
        return summed / counts.clamp_min(1).unsqueeze(-1), counts > 0

    def _header_context(self, token_ids: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """[last level state; attention-weighted levels] and the level attention, zero for absent axes."""
        vecs, mask = self._level_vectors(token_ids)
        b, n_levels = mask.shape
        h2 = self.header_encoder.output_size
        context = vecs.new_zeros(b, 2 * h2)
        attention = vecs.new_zeros(b, n_levels)
        present = mask.any(1).nonzero(as_tuple=True)[0]
        if len(present):
            enc = self.header_encoder(vecs[present], mask[present])
            context = context.index_copy(0, present, torch.cat([enc.final, enc.context], -1))
            attention = attention.index_copy(0, present, enc.attention)
        return context, attention

    def forward(self, batch: PGBatch) -> PGModelOutput:
        cfg = self.config
        c_rh, a_rh = self._header_context(batch.row_tokens)
        c_ch, a_ch = self._header_context(batch.col_tokens)
        logits = self.location_head(torch.cat([c_rh, c_ch], -1))
        # an absent axis cannot hold the metric-type
        blocked = torch.stack([
            torch.full_like(batch.gold_class, cfg.no_generation, dtype=torch.bool),
            batch.row_tokens.ne(0).flatten(1).any(1).logical_not(),
            batch.col_tokens.ne(0).flatten(1).any(1).logical_not(),
        ], dim=1)
        logits = logits.masked_fill(blocked, float("-inf"))
        log_p_hloc = torch.log_softmax(logits, -1)
        p_hloc = log_p_hloc.exp()

        cap = self.caption_encoder(self.embedding(batch.caption_ids), batch.caption_mask)
        c_capt = torch.cat([cap.final, cap.context], -1)
        if cfg.no_copy:
            p_copy = c_capt.new_zeros(len(batch))
        else:
            p_copy = torch.sigmoid(self.copy_head(c_capt)).squeeze(-1)
        special = torch.zeros(len(self.metric_vocab), dtype=torch.bool)
        special[:2] = True  # PAD / UNK are never emitted
        vocab_logits = self.vocab_head(c_capt).masked_fill(special, float("-inf"))
        p_vocab = torch.softmax(vocab_logits, -1)

        n_extra = max(len(e) for e in batch.ext_tokens)
        extended = extended_distribution(p_copy, p_vocab, cap.attention, batch.caption_ext_ids, n_extra)
        return PGModelOutput(p_hloc, a_rh, a_ch, p_copy, p_vocab, extended, cap.attention, log_p_hloc)

    # --- training objective -----------------------------------------------------

    def loss(self, output: PGModelOutput, batch: PGBatch, alpha: Optional[float] = None) -> torch.Tensor:
        return pg_loss(output, batch, self.config.alpha if alpha is None else alpha,
                       no_copy=self.config.no_copy, no_generation=self.config.no_generation,
                       copy_loss_all=self.config.copy_loss_all)

    # --- inference ----------------------------------------------------------------

    @torch.no_grad()
    def predict(self, tables: Sequence[TableInstance]) -> List[Prediction]:
        was_training = self.training
        self.eval()
        batch = self.batch(tables)
        out = self(batch)
        self.train(was_training)
        return resolve_predictions(out, batch, self.metric_vocab)


def _log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp_min(_TINY))


def pg_loss(output: PGModelOutput, batch: PGBatch, alpha: float, no_copy: bool = False,
            no_generation: bool = False, copy_loss_all: bool = False) -> torch.Tensor:
    """Mean over the batch of the joint location / level / copy / generation objective."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    log_p = output.log_p_hloc if output.log_p_hloc is not None else _log(output.p_hloc)
    total = output.p_hloc.new_zeros(())
    for i, table in enumerate(batch.tables):
        gold = int(batch.gold_class[i])
        in_header = gold != LocationClass.CAPT
        location_term = output.p_hloc.new_zeros(())
        if in_header or not no_generation:
            location_term = -log_p[i, gold]
        if in_header:
            attention = output.row_attention if gold == LocationClass.RH else output.col_attention
            level = int(batch.gold_level[i])
            # gold level weight renormalised over the live levels: a * p_axis / (p_rh + p_ch)
            log_w = _log(attention[i, level]) + log_p[i, gold]
            log_norm = torch.logsumexp(log_p[i, [LocationClass.RH, LocationClass.CH]], 0)
            location_term = location_term - (log_w - log_norm)

        token_term = output.p_hloc.new_zeros(())
        if not no_copy and (copy_loss_all or not in_header):
            y = batch.gold_in_caption[i].to(output.p_copy.dtype)
            p = output.p_copy[i]
            token_term = token_term - (y * _log(p) + (1 - y) * _log(1 - p))
        gold_ext = int(batch.gold_ext[i])
        if not in_header and not no_generation and gold_ext >= 0:
            token_term = token_term - _log(output.extended[i, gold_ext])
        total = total + (1 - alpha) * location_term + alpha * token_term
    return total / len(batch)


def _argmax(x: np.ndarray) -> int:
    # np.argmax returns the first maximum: ties go to the lowest index
    return int(np.argmax(x))


def resolve_predictions(out: PGModelOutput, batch: PGBatch, metric_vocab: Vocabulary) -> List[Prediction]:
    preds = []
    base = len(metric_vocab)
    for i, t in enumerate(batch.tables):
        p_hloc = out.p_hloc[i].double().cpu().numpy()
        hloc = LocationClass(_argmax(p_hloc))
        probs = tuple(float(x) for x in p_hloc)
        if hloc == LocationClass.RH:
            k = _argmax(out.row_weights[i, :t.u].double().cpu().numpy())
            preds.append(Prediction(Location.ROW_HEADER, k + 1, t.row_headers[k], "LRow", probs))
        elif hloc == LocationClass.CH:
            l = _argmax(out.col_weights[i, :t.v].double().cpu().numpy())
            preds.append(Prediction(Location.COLUMN_HEADER, l + 1, t.column_headers[l], "LCol", probs))
        else:
            n_ext = base + len(batch.ext_tokens[i])
            dist = out.extended[i, :n_ext].double().cpu().numpy()
            w = _argmax(dist)
            token = metric_vocab.token(w) if w < base else batch.ext_tokens[i][w - base]
            p_copy = float(out.p_copy[i])
            copy_mass = p_copy * float(out.caption_attention[i][batch.caption_ext_ids[i] == w].sum())
            gen_mass = (1 - p_copy) * float(out.p_vocab[i, w]) if w < base else 0.0
            cls = "CCapt" if copy_mass > gen_mass else "Gen"
            preds.append(Prediction(Location.OUT_OF_HEADER, None, (token,) * max(t.n_cols, 1), cls, probs))
    return preds
