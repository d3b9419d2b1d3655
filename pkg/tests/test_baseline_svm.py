import math

import pytest

from metrictype.baseline_svm import (LinearClassifier, NotFittedError, SVMBaseline, SVMConfig, TfidfFeaturizer,
                                     feasible_labels, location_label)
from metrictype.dataset_io import generate_synthetic
from metrictype.table_model import Location, MetricTarget, TableInstance


def test_shared_token_has_unit_idf():
    f = TfidfFeaturizer().fit([["a", "b"], ["a", "c"]])
    assert f.idf[f.columns["a"]] == pytest.approx(1.0)
    assert f.idf[f.columns["b"]] == pytest.approx(math.log(3 / 2) + 1)


def test_single_document_unit_norm():
    f = TfidfFeaturizer().fit([["x", "y", "y", "z"]])
    vec = f.transform_one(["x", "y", "y", "z"])
    assert math.sqrt(sum(w * w for w in vec.values())) == pytest.approx(1.0)
    assert vec[f.columns["y"]] == pytest.approx(2 * vec[f.columns["x"]])


def test_unseen_tokens_dropped():
    f = TfidfFeaturizer().fit([["a"], ["b"]])
    assert f.transform_one(["zzz"]) == {}
    assert set(f.transform_one(["a", "zzz"])) == {f.columns["a"]}
    assert f.transform([["a"], ["zzz"]]).shape == (2, 2)


def test_transform_before_fit():
    with pytest.raises(NotFittedError):
        TfidfFeaturizer().transform_one(["a"])


def test_single_class_is_constant():
    clf = LinearClassifier.fit([["a"], ["b"]], ["x", "x"], SVMConfig())
    assert clf.predict(["a"]) == "x" and clf.predict(["nothing"]) == "x"


def test_binary_and_multiclass_fit_training_data():
    docs = [["a", "a"], ["b"], ["c", "c", "c"], ["a"], ["b", "b"], ["c"]]
    labels = ["p", "q", "r", "p", "q", "r"]
    clf = LinearClassifier.fit(docs, labels, SVMConfig())
    assert [clf.predict(d) for d in docs] == labels
    clf = LinearClassifier.fit(docs[:2], labels[:2], SVMConfig())
    assert clf.predict(["a"]) == "p" and clf.predict(["b"]) == "q"
    assert clf.predict(["a"], allowed={"q"}) == "q"


def test_empty_training_set():
    with pytest.raises(ValueError):
        LinearClassifier.fit([], [], SVMConfig())


def _capt(caption, metric, id="c"):
    return TableInstance(id, caption.split(), [["sys a", "sys b"]], [["dev", "test"]], [["1", "2"], ["3", "4"]],
                         MetricTarget(Location.OUT_OF_HEADER, None, (metric, metric)))


def test_labels(two_level):
    assert location_label(two_level) == "ch:2"
    assert location_label(_capt("bleu on dev", "bleu")) == "none"
    assert feasible_labels(two_level) == {"none", "rh:1", "rh:2", "ch:1", "ch:2"}


@pytest.fixture(scope="module")
def tables():
    return generate_synthetic(3, 60)


@pytest.fixture(scope="module")
def fitted(tables):
    return SVMBaseline.fit(tables)


def test_training_captions_recovered():
    train = [_capt("bleu scores on dev", "bleu", "a"), _capt("rouge scores on dev", "rouge", "b"),
             _capt("meteor scores on dev", "meteor", "c")]
    model = SVMBaseline.fit(train)
    assert [p.tokens[0] for p in model.predict(train)] == ["bleu", "rouge", "meteor"]
    assert all(p.output_class == "Gen" and len(p.tokens) == 2 for p in model.predict(train))


def test_predictions_are_well_formed(fitted, tables):
    train_tokens = {t.target.tokens[0].lower() for t in tables}
    for t, p in zip(tables, fitted.predict(tables)):
        if p.location is Location.OUT_OF_HEADER:
            assert p.tokens[0] in train_tokens
        elif p.location is Location.ROW_HEADER:
            assert 1 <= p.level <= t.u and p.tokens == t.row_headers[p.level - 1]
        else:
            assert 1 <= p.level <= t.v and p.tokens == t.column_headers[p.level - 1]


def test_duplicate_table_does_not_change_predictions(tables):
    a = SVMBaseline.fit(tables).predict(tables)
    b = SVMBaseline.fit(tables + tables[:1]).predict(tables)
    assert [(p.location, p.level) for p in a] == [(p.location, p.level) for p in b]


def test_json_round_trip(tmp_path, fitted, tables):
    fitted.save(tmp_path / "svm.json")
    loaded = SVMBaseline.load(tmp_path / "svm.json")
    assert loaded.predict(tables) == fitted.predict(tables)
