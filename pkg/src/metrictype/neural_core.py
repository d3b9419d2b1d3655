"""Shared differentiable building blocks."""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .dataset_io import Vocabulary, tokenize


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


class EmbeddingTable(nn.Embedding):
    """Token embedding whose PAD row stays zero and receives no gradient."""

    def __init__(self, vocab_size: int, dim: int):
        super().__init__(vocab_size, dim, padding_idx=0)

    @classmethod
    def from_pretrained_vectors(cls, vocab: Vocabulary, vectors: Dict[str, np.ndarray],
                                generator: Optional[torch.Generator] = None) -> "EmbeddingTable":
        dim = len(next(iter(vectors.values())))
        table = cls(len(vocab), dim)
        with torch.no_grad():
            # tokens without a pretrained vector start small so they don't dominate level averages
            table.weight.normal_(0.0, 0.01, generator=generator)
            hits = 0
            for tok, idx in vocab.stoi.items():
                if tok in vectors:
                    table.weight[idx] = torch.as_tensor(vectors[tok], dtype=table.weight.dtype)
                    hits += 1
            table.weight[0].zero_()
        return table


@dataclass
class SequenceEncoding:
    states: torch.Tensor      # (B, T, 2H)
    final: torch.Tensor       # (B, 2H) state at the last live position
    attention: torch.Tensor   # (B, T), zero on masked positions
    context: torch.Tensor     # (B, 2H) attention-weighted sum of states
    mask: torch.Tensor        # (B, T) bool


def dot_attention(query: torch.Tensor, states: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """softmax_t(query . states_t) restricted to live positions."""
    scores = torch.einsum("bd,btd->bt", query, states)
    scores = scores.masked_fill(~mask, float("-inf"))
    return torch.softmax(scores, dim=-1)


class SequenceEncoder(nn.Module):
    """Bidirectional LSTM followed by dot attention with the last live state as query."""

    def __init__(self, input_size: int, hidden_size: int = 256, num_layers: int = 2, dropout: float = 0.1):
        super().__init__()
        self.hidden_size = hidden_size
        self.rnn = nn.LSTM(input_size, hidden_size, num_layers=num_layers, bidirectional=True,
                           batch_first=True, dropout=dropout if num_layers > 1 else 0.0)
        self.dropout = nn.Dropout(dropout)

    @property
    def output_size(self) -> int:
        return 2 * self.hidden_size

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> SequenceEncoding:
        return encode_sequence(self, x, mask)


def encode_sequence(encoder: SequenceEncoder, x: torch.Tensor, mask: torch.Tensor) -> SequenceEncoding:
    mask = mask.bool()
    lengths = mask.sum(dim=1)
    if (lengths == 0).any():
        raise ValueError("encode_sequence: every sequence needs at least one unmasked position")
    if not torch.equal(mask, _prefix_mask(lengths, mask.shape[1])):
        raise ValueError("encode_sequence: mask must be a left-aligned prefix")
    packed = pack_padded_sequence(encoder.dropout(x), lengths.cpu(), batch_first=True, enforce_sorted=False)
    out, _ = encoder.rnn(packed)
    states, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
    states = states * mask.unsqueeze(-1).to(states.dtype)
    last = (lengths - 1).view(-1, 1, 1).expand(-1, 1, states.shape[-1])
    final = states.gather(1, last).squeeze(1)
    attn = dot_attention(final, states, mask)
    context = torch.einsum("bt,btd->bd", attn, states)
    return SequenceEncoding(states, final, attn, context, mask)


def _prefix_mask(lengths: torch.Tensor, width: int) -> torch.Tensor:
    return torch.arange(width, device=lengths.device).unsqueeze(0) < lengths.unsqueeze(1)


def level_token_ids(names: Sequence[str], vocab: Vocabulary) -> List[int]:
    """Flattened token ids of every header name at one level (OOV -> UNK)."""
    return [vocab.lookup(tok) for name in names for tok in tokenize(name)]


def average_level_embedding(names: Sequence[str], embedding: nn.Embedding, vocab: Vocabulary) -> torch.Tensor:
    if not names:
        raise ValueError("cannot average an empty header level")
    ids = level_token_ids(names, vocab)
    if not ids:
        raise ValueError("header level has no tokens")
    return embedding(torch.tensor(ids, dtype=torch.long)).mean(dim=0)


def gradient_check(loss_fn: Callable[[], torch.Tensor], parameters: Sequence[torch.Tensor],
                   epsilon: float = 1e-4, samples_per_param: int = 8, seed: int = 0) -> float:
    """Max relative error between autograd and central finite differences.

    ``loss_fn`` must be deterministic (dropout off). A random subset of
    ``samples_per_param`` coordinates is probed in every parameter tensor.
    """
    params = [p for p in parameters if p.requires_grad]
    for p in params:
        p.grad = None
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0

    def loss_at(flat, idx, value):
        # evaluated with grad enabled so modules pick the same kernels as the analytic pass
        with torch.no_grad():
            flat[idx] = value
        return loss_fn().item()

    for p, g in zip(params, analytic):
        g = torch.zeros_like(p) if g is None else g
        flat, gflat = p.data.view(-1), g.reshape(-1)
        k = min(samples_per_param, flat.numel())
        for idx in rng.choice(flat.numel(), size=k, replace=False):
            orig = flat[idx].item()
            up = loss_at(flat, idx, orig + epsilon)
            down = loss_at(flat, idx, orig - epsilon)
            with torch.no_grad():
                flat[idx] = orig
            g_fd = (up - down) / (2 * epsilon)
            g_an = gflat[idx].item()
            err = abs(g_fd - g_an) / max(abs(g_fd), abs(g_an), 1e-8)
            worst = max(worst, err)
    return worst
