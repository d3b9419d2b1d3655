import dataclasses
import math

import numpy as np
import pytest
import torch

from metrictype.dataset_io import build_vocabularies, generate_synthetic
from metrictype.neural_core import gradient_check, seed_everything
from metrictype.segment_encoder import (SegConfig, SegModelOutput, SegmentEncoderModel, WordSegmentVocab,
                                        build_segmented_input, resolve_seg_predictions, seg_loss)
from metrictype.table_model import Location, MetricTarget, TableInstance


def small_model(tables, **overrides):
    vocab, metric = build_vocabularies(tables)
    seed_everything(0)
    cfg = SegConfig(layers=1, heads=2, width=8, max_len=64, dropout=0.0, **overrides)
    return SegmentEncoderModel(cfg, vocab, metric).double().eval()


@pytest.fixture(scope="module")
def tables():
    return generate_synthetic(5, 30)


def test_two_level_segments(two_level):
    vocab, _ = build_vocabularies([two_level])
    sv = WordSegmentVocab(vocab)
    x = build_segmented_input(two_level, sv)
    assert x.n_segments == 5
    assert [x.ab_flags[p] for p in x.cls_positions] == [0, 1, 0, 1, 0]
    for p in x.cls_positions:
        assert x.token_ids[p] == sv.cls_id and x.token_ids[p - 1 if p else 0] in (sv.sep_id, sv.cls_id)
    assert x.token_ids[-1] == sv.sep_id
    # caption has 7 words: [CLS] + 7 + [SEP]
    assert x.cls_positions[1] == 9
    assert x.positions == list(range(len(x.token_ids)))


def test_caption_and_single_level():
    t = TableInstance("t", ["results"], [], [["f1", "acc"]], [["1", "2"]],
                      MetricTarget(Location.COLUMN_HEADER, 1, ("f1", "acc")))
    vocab, _ = build_vocabularies([t])
    x = build_segmented_input(t, WordSegmentVocab(vocab))
    assert x.n_segments == 2 and [x.ab_flags[p] for p in x.cls_positions] == [0, 1]


def test_truncation_keeps_markers(two_level):
    vocab, _ = build_vocabularies([two_level])
    sv = WordSegmentVocab(vocab)
    x = build_segmented_input(two_level, sv, max_len=16)
    assert len(x.token_ids) == 16 and x.n_segments == 5
    assert x.token_ids.count(sv.cls_id) == 5 and x.token_ids.count(sv.sep_id) == 5
    with pytest.raises(ValueError):
        build_segmented_input(two_level, sv, max_len=9)


def _output(p_hloc, p_hlevel, p_vocab):
    p_hloc = torch.tensor([p_hloc], dtype=torch.float64)
    p_hlevel = torch.tensor([p_hlevel], dtype=torch.float64)
    return SegModelOutput(p_hloc, p_hlevel, p_hlevel / p_hlevel.sum(), torch.tensor([p_vocab], dtype=torch.float64),
                          torch.zeros(1, p_hlevel.shape[1], 2))


def test_equal_level_scores_give_uniform_weights(two_level):
    m = small_model([two_level])
    out = _output([1 / 3] * 3, [0.7] * 5, [0.25] * 4)
    assert out.w_hlevel[0].tolist() == pytest.approx([0.2] * 5)
    batch = m.batch([two_level])
    # location ln 3 plus level ln 5, generation unused for in-header gold
    assert seg_loss(out, batch, 0.0).item() == pytest.approx(math.log(3) + math.log(5))


def test_single_segment_weight_is_one(tables):
    m = small_model(tables)
    out = m(m.batch(tables))
    np.testing.assert_allclose(out.p_hloc.sum(1).detach(), 1.0, atol=1e-6)
    np.testing.assert_allclose(out.w_hlevel.sum(1).detach(), 1.0, atol=1e-6)
    np.testing.assert_allclose(out.p_vocab.sum(1).detach(), 1.0, atol=1e-6)
    out = _output([0.0, 0.0, 1.0], [0.3], [0.5, 0.5])
    assert out.w_hlevel.tolist() == [[1.0]]


def test_perfect_output_zero_loss(two_level):
    m = small_model([two_level])
    batch = m.batch([two_level])
    gold = int(batch.gold_segment[0])
    assert gold == 4
    levels = [0.0] * 5
    levels[gold] = 0.9
    out = _output([0.0, 0.0, 1.0], levels, [0.25] * 4)
    assert seg_loss(out, batch, 0.5).item() == 0.0
    with pytest.raises(ValueError):
        seg_loss(out, batch, -0.1)


def test_resolution_restricted_to_axis(two_level):
    m = small_model([two_level])
    batch = m.batch([two_level])
    # strongest segment is a row level but location says column
    out = _output([0.1, 0.2, 0.7], [0.1, 0.9, 0.8, 0.3, 0.4], [0.25] * 4)
    (p,) = resolve_seg_predictions(out, batch, m.metric_vocab)
    assert p.output_class == "LCol" and p.level == 2 and p.tokens == ("prec", "rec", "prec", "rec")


def test_out_of_header_resolution(two_level):
    vocab, metric = build_vocabularies([two_level])
    metric.add("accuracy")
    m = SegmentEncoderModel(SegConfig(layers=1, heads=2, width=8), vocab, metric).eval()
    batch = m.batch([two_level])
    p_vocab = [0.0] * len(metric)
    p_vocab[metric.lookup("accuracy")] = 1.0
    out = _output([0.6, 0.2, 0.2], [0.5] * 5, p_vocab)
    (p,) = resolve_seg_predictions(out, batch, metric)
    assert p.output_class == "Gen" and p.tokens == ("accuracy",) * 4 and p.level is None


def test_segment_embeddings_matter(two_level):
    a = small_model([two_level])
    b = small_model([two_level], use_segment_embeddings=False)
    b.load_state_dict(a.state_dict())
    with torch.no_grad():
        a.backend.segments.weight.normal_()
        oa, ob = a(a.batch([two_level])), b(b.batch([two_level]))
    assert not torch.allclose(oa.p_hloc, ob.p_hloc)


def test_cells_are_never_read(tables):
    m = small_model(tables)
    relabelled = [dataclasses.replace(t, cells=[["?"] * len(r) for r in t.cells]) for t in tables]
    assert m.predict(tables) == m.predict(relabelled)


def test_padding_does_not_leak(tables):
    m = small_model(tables)
    alone = m.predict(tables[:1])
    together = m.predict(tables)
    assert alone[0] == together[0]


def test_gradient_check(tables):
    m = small_model(tables)
    capt = next(t for t in tables if t.target.location is Location.OUT_OF_HEADER)
    batch = m.batch([tables[0], capt])
    assert gradient_check(lambda: m.loss(m(batch), batch), list(m.parameters())) <= 1e-3


def test_pretrained_adapter(tmp_path, two_level):
    transformers = pytest.importorskip("transformers")
    from metrictype.segment_encoder import PretrainedBertBackend

    words = sorted({w for lvl in two_level.row_headers + two_level.column_headers for c in lvl for w in c.split()}
                   | set(two_level.caption))
    (tmp_path / "vocab.txt").write_text("\n".join(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", *words]) + "\n")
    transformers.BertTokenizer(str(tmp_path / "vocab.txt")).save_pretrained(tmp_path)
    cfg = transformers.BertConfig(vocab_size=5 + len(words), hidden_size=16, num_hidden_layers=1,
                                  num_attention_heads=2, intermediate_size=32, max_position_embeddings=64)
    torch.manual_seed(0)
    transformers.BertModel(cfg).save_pretrained(tmp_path)

    backend = PretrainedBertBackend(str(tmp_path))
    vocab, metric = build_vocabularies([two_level])
    m = SegmentEncoderModel(SegConfig(max_len=64), vocab, metric, backend=backend,
                            seg_vocab=backend.segment_vocab()).eval()
    batch = m.batch([two_level])
    assert batch.inputs[0].n_segments == 5
    out = m(batch)
    assert out.p_hloc.sum().item() == pytest.approx(1.0, abs=1e-6)
    (p,) = m.predict([two_level])
    assert p.output_class in ("LRow", "LCol", "Gen")
