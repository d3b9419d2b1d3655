"""Per-segment [CLS] encoder model over caption and header levels."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional, Protocol, Sequence

import numpy as np
import torch
from torch import nn

from .dataset_io import Vocabulary, tokenize
from .evaluation import Prediction
from .table_model import Location, LocationClass, TableInstance, check


@dataclass
class SegConfig:
    layers: int = 2
    heads: int = 4
    width: int = 128
    max_len: int = 512
    dropout: float = 0.1
    alpha: float = 0.5
    use_segment_embeddings: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


class SegmentVocab(Protocol):
    cls_id: int
    sep_id: int
    pad_id: int

    def encode(self, text: str) -> List[int]: ...

    def __len__(self) -> int: ...


class WordSegmentVocab:
    """Word-level vocabulary with [CLS]/[SEP] appended after the general ids."""

    pad_id = 0

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.cls_id = len(vocab)
        self.sep_id = len(vocab) + 1

    def encode(self, text: str) -> List[int]:
        return [self.vocab.lookup(t) for t in tokenize(text)]

    def __len__(self) -> int:
        return len(self.vocab) + 2


@dataclass
class SegmentedInput:
    token_ids: List[int]
    segment_index: List[int]   # 1 = caption, 2..1+u row levels, 2+u..1+u+v column levels
    ab_flags: List[int]        # 0 = segment A (odd segments), 1 = segment B
    positions: List[int]
    cls_positions: List[int]   # one per segment
    u: int
    v: int

    @property
    def n_segments(self) -> int:
        return len(self.cls_positions)


def segment_texts(table: TableInstance) -> List[str]:
    texts = [" ".join(table.caption)]
    texts += [" ".join(level) for level in table.row_headers]
    texts += [" ".join(level) for level in table.column_headers]
    return texts


def build_segmented_input(table: TableInstance, vocab: SegmentVocab, max_len: int = 512) -> SegmentedInput:
    table = check(table)
    pieces = [vocab.encode(text) for text in segment_texts(table)]
    n_seg = len(pieces)
    if 2 * n_seg > max_len:
        raise ValueError(f"{n_seg} segments cannot fit in {max_len} positions")
    # trim one token at a time from the currently longest segment (latest wins ties)
    while sum(len(p) for p in pieces) + 2 * n_seg > max_len:
        longest = max(range(n_seg), key=lambda i: (len(pieces[i]), i))
        pieces[longest] = pieces[longest][:-1]

    ids, seg, ab, cls_pos = [], [], [], []
    for s, body in enumerate(pieces, 1):
        cls_pos.append(len(ids))
        chunk = [vocab.cls_id, *body, vocab.sep_id]
        ids += chunk
        seg += [s] * len(chunk)
        ab += [0 if s % 2 == 1 else 1] * len(chunk)
    return SegmentedInput(ids, seg, ab, list(range(len(ids))), cls_pos, table.u, table.v)


class EncoderBackend(nn.Module):
    """(token ids, A/B flags, positions, padding mask) -> top-layer vectors (B, T, width)."""

    width: int

    def forward(self, token_ids, ab_flags, positions, pad_mask):  # pragma: no cover - interface
        raise NotImplementedError


class ToyTransformerBackend(EncoderBackend):
    def __init__(self, vocab_size: int, config: SegConfig):
        super().__init__()
        self.width = config.width
        self.use_segment_embeddings = config.use_segment_embeddings
        self.tokens = nn.Embedding(vocab_size, config.width, padding_idx=0)
        self.positions = nn.Embedding(config.max_len, config.width)
        self.segments = nn.Embedding(2, config.width)
        self.norm = nn.LayerNorm(config.width)
        self.dropout = nn.Dropout(config.dropout)
        layer = nn.TransformerEncoderLayer(config.width, config.heads, 4 * config.width,
                                           dropout=config.dropout, activation="gelu", batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)

    def forward(self, token_ids, ab_flags, positions, pad_mask):
        x = self.tokens(token_ids) + self.positions(positions)
        if self.use_segment_embeddings:
            x = x + self.segments(ab_flags)
        x = self.dropout(self.norm(x))
        return self.encoder(x, src_key_padding_mask=pad_mask)


class PretrainedBertBackend(EncoderBackend):
    """Adapter for externally supplied BERT-style weights (HuggingFace layout).

    ``segment_vocab()`` returns the matching WordPiece vocabulary so inputs
    are built with the checkpoint's own tokenizer.
    """

    def __init__(self, model_dir: str, use_segment_embeddings: bool = True):
        super().__init__()
        from transformers import AutoModel, AutoTokenizer

        self.model = AutoModel.from_pretrained(model_dir)
        self.tokenizer = AutoTokenizer.from_pretrained(model_dir)
        self.width = self.model.config.hidden_size
        self.use_segment_embeddings = use_segment_embeddings

    def segment_vocab(self) -> "WordPieceSegmentVocab":
        return WordPieceSegmentVocab(self.tokenizer)

    def forward(self, token_ids, ab_flags, positions, pad_mask):
        token_type = ab_flags if self.use_segment_embeddings else torch.zeros_like(ab_flags)
        out = self.model(input_ids=token_ids, token_type_ids=token_type, position_ids=positions,
                         attention_mask=(~pad_mask).long())
        return out.last_hidden_state


class WordPieceSegmentVocab:
    def __init__(self, tokenizer):
        self.tokenizer = tokenizer
        self.cls_id = tokenizer.cls_token_id
        self.sep_id = tokenizer.sep_token_id
        self.pad_id = tokenizer.pad_token_id

    def encode(self, text: str) -> List[int]:
        return self.tokenizer.encode(text, add_special_tokens=False)

    def __len__(self) -> int:
        return len(self.tokenizer)


@dataclass
class SegBatch:
    tables: List[TableInstance]
    inputs: List[SegmentedInput]
    token_ids: torch.Tensor     # (B, T)
    ab_flags: torch.Tensor
    positions: torch.Tensor
    pad_mask: torch.Tensor      # True on padding
    cls_positions: torch.Tensor  # (B, S), 0 on absent segments
    segment_mask: torch.Tensor  # (B, S)
    axis_present: torch.Tensor  # (B, 3) over (capt, rh, ch)
    gold_class: torch.Tensor
    gold_segment: torch.Tensor  # 0-based
    gold_vocab: torch.Tensor    # metric-vocab id of the gold token, -1 if unknown

    def __len__(self) -> int:
        return len(self.tables)


@dataclass
class SegModelOutput:
    p_hloc: torch.Tensor      # (B, 3)
    p_hlevel: torch.Tensor    # (B, S) sigmoid scores
    w_hlevel: torch.Tensor    # (B, S) normalised over live segments
    p_vocab: torch.Tensor     # (B, |W_m|)
    contexts: torch.Tensor    # (B, S, width)
    log_p_hloc: Optional[torch.Tensor] = None


def make_seg_batch(tables: Sequence[TableInstance], seg_vocab: SegmentVocab, metric_vocab: Vocabulary,
                   max_len: int = 512) -> SegBatch:
    inputs = [build_segmented_input(t, seg_vocab, max_len) for t in tables]
    b = len(inputs)
    t_max = max(len(x.token_ids) for x in inputs)
    s_max = max(x.n_segments for x in inputs)
    token_ids = torch.full((b, t_max), seg_vocab.pad_id, dtype=torch.long)
    ab = torch.zeros(b, t_max, dtype=torch.long)
    pos = torch.zeros(b, t_max, dtype=torch.long)
    pad = torch.ones(b, t_max, dtype=torch.bool)
    cls = torch.zeros(b, s_max, dtype=torch.long)
    seg_mask = torch.zeros(b, s_max, dtype=torch.bool)
    axis = torch.ones(b, 3, dtype=torch.bool)
    gold_class = torch.zeros(b, dtype=torch.long)
    gold_segment = torch.zeros(b, dtype=torch.long)
    gold_vocab = torch.full((b,), -1, dtype=torch.long)
    for i, (t, x) in enumerate(zip(tables, inputs)):
        n = len(x.token_ids)
        token_ids[i, :n] = torch.tensor(x.token_ids)
        ab[i, :n] = torch.tensor(x.ab_flags)
        pos[i, :n] = torch.tensor(x.positions)
        pad[i, :n] = False
        cls[i, :x.n_segments] = torch.tensor(x.cls_positions)
        seg_mask[i, :x.n_segments] = True
        axis[i, LocationClass.RH] = t.u > 0
        axis[i, LocationClass.CH] = t.v > 0
        gold_class[i] = LocationClass.from_location(t.target.location)
        flat = t.flat_gold_level
        gold_segment[i] = 0 if flat is None else flat  # caption is segment 0
        tok = t.target.tokens[0].strip().lower()
        if tok in metric_vocab:
            gold_vocab[i] = metric_vocab.lookup(tok)
    return SegBatch(list(tables), inputs, token_ids, ab, pos, pad, cls, seg_mask, axis,
                    gold_class, gold_segment, gold_vocab)


class SegmentEncoderModel(nn.Module):
    def __init__(self, config: SegConfig, vocab: Vocabulary, metric_vocab: Vocabulary,
                 backend: Optional[EncoderBackend] = None, seg_vocab: Optional[SegmentVocab] = None):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.metric_vocab = metric_vocab
        self.seg_vocab = seg_vocab or WordSegmentVocab(vocab)
        if backend is None:
            backend = ToyTransformerBackend(len(self.seg_vocab), config)
        self.backend = backend
        w = backend.width
        self.location_head = nn.Linear(w, 3)
        self.level_head = nn.Linear(w, 1)
        self.vocab_head = nn.Linear(w, len(metric_vocab))

    def batch(self, tables: Sequence[TableInstance]) -> SegBatch:
        return make_seg_batch(tables, self.seg_vocab, self.metric_vocab, self.config.max_len)

    def forward(self, batch: SegBatch) -> SegModelOutput:
        if self.backend is None:
            raise RuntimeError("segment encoder has no backend attached")
        hidden = self.backend(batch.token_ids, batch.ab_flags, batch.positions, batch.pad_mask)
        idx = batch.cls_positions.unsqueeze(-1).expand(-1, -1, hidden.shape[-1])
        contexts = hidden.gather(1, idx)                       # (B, S, W)
        first = contexts[:, 0]

        logits = self.location_head(first).masked_fill(~batch.axis_present, float("-inf"))
        log_p_hloc = torch.log_softmax(logits, -1)

        p_hlevel = torch.sigmoid(self.level_head(contexts).squeeze(-1)) * batch.segment_mask
        w_hlevel = p_hlevel / p_hlevel.sum(-1, keepdim=True)

        special = torch.zeros(len(self.metric_vocab), dtype=torch.bool)
        special[:2] = True
        p_vocab = torch.softmax(self.vocab_head(first).masked_fill(special, float("-inf")), -1)
        return SegModelOutput(log_p_hloc.exp(), p_hlevel, w_hlevel, p_vocab, contexts, log_p_hloc)

    def loss(self, output: SegModelOutput, batch: SegBatch, alpha: Optional[float] = None) -> torch.Tensor:
        return seg_loss(output, batch, self.config.alpha if alpha is None else alpha)

    @torch.no_grad()
    def predict(self, tables: Sequence[TableInstance]) -> List[Prediction]:
        was_training = self.training
        self.eval()
        batch = self.batch(tables)
        out = self(batch)
        self.train(was_training)
        return resolve_seg_predictions(out, batch, self.metric_vocab)


def _log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp_min(1e-30))


def seg_loss(output: SegModelOutput, batch: SegBatch, alpha: float) -> torch.Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    log_p = output.log_p_hloc if output.log_p_hloc is not None else _log(output.p_hloc)
    rows = torch.arange(len(batch))
    location = -log_p[rows, batch.gold_class] - _log(output.w_hlevel[rows, batch.gold_segment])
    out_of_header = (batch.gold_class == LocationClass.CAPT) & (batch.gold_vocab >= 0)
    gen = -_log(output.p_vocab[rows, batch.gold_vocab.clamp_min(0)]) * out_of_header
    return ((1 - alpha) * location + alpha * gen).mean()


def resolve_seg_predictions(out: SegModelOutput, batch: SegBatch, metric_vocab: Vocabulary) -> List[Prediction]:
    preds = []
    for i, t in enumerate(batch.tables):
        p_hloc = out.p_hloc[i].double().cpu().numpy()
        probs = tuple(float(x) for x in p_hloc)
        hloc = LocationClass(int(np.argmax(p_hloc)))
        w = out.w_hlevel[i].double().cpu().numpy()
        if hloc == LocationClass.RH:
            k = int(np.argmax(w[1:1 + t.u]))
            preds.append(Prediction(Location.ROW_HEADER, k + 1, t.row_headers[k], "LRow", probs))
        elif hloc == LocationClass.CH:
            l = int(np.argmax(w[1 + t.u:1 + t.u + t.v]))
            preds.append(Prediction(Location.COLUMN_HEADER, l + 1, t.column_headers[l], "LCol", probs))
        else:
            tok = metric_vocab.token(int(np.argmax(out.p_vocab[i].double().cpu().numpy())))
            preds.append(Prediction(Location.OUT_OF_HEADER, None, (tok,) * max(t.n_cols, 1), "Gen", probs))
    return preds
