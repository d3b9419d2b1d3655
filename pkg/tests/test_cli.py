import json
import subprocess
import sys

import pytest

from metrictype.cli import main
from metrictype.dataset_io import save_corpus, table_to_record
from metrictype.training import write_oracle_checkpoint


@pytest.fixture
def corpora(tmp_path):
    assert main(["synth", "--seed", "7", "--size", "30", "--out", str(tmp_path / "train.json")]) == 0
    assert main(["synth", "--seed", "8", "--size", "12", "--out", str(tmp_path / "val.json")]) == 0
    return tmp_path


def test_synth_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--seed", "3", "--size", "20", "--out", str(tmp_path / f"{name}.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_synth_lexicon_and_proportions(tmp_path):
    out = tmp_path / "s.json"
    assert main(["synth", "--seed", "1", "--size", "10", "--out", str(out),
                 "--proportions", "0,0,1", "--lexicon", "wer,ter"]) == 0
    records = json.loads(out.read_text())
    assert {r["metric"]["location"] for r in records} == {"none"}
    assert {r["metric"]["tokens"][0] for r in records} <= {"wer", "ter"}


def test_stats(corpora, capsys):
    assert main(["stats", str(corpora / "train.json")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["table_count"] == 30
    assert main(["stats", str(corpora / "train.json"), "--out", str(corpora / "s.json")]) == 0
    assert json.loads((corpora / "s.json").read_text()) == stats


def test_validate_exit_codes(tmp_path, two_level, capsys):
    save_corpus([two_level], tmp_path / "ok.json")
    assert main(["validate", str(tmp_path / "ok.json")]) == 0
    bad = table_to_record(two_level)
    bad["metric"]["level"] = 9
    (tmp_path / "bad.json").write_text(json.dumps([table_to_record(two_level), bad]))
    capsys.readouterr()
    assert main(["validate", str(tmp_path / "bad.json")]) == 3
    out = json.loads(capsys.readouterr().out)
    assert out["valid"] == 1 and len(out["rejected"]) == 1


def test_data_and_usage_errors(tmp_path):
    assert main(["stats", str(tmp_path / "missing.json")]) == 3
    (tmp_path / "broken.json").write_text("[{")
    assert main(["stats", str(tmp_path / "broken.json")]) == 3
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    (tmp_path / "cfg.json").write_text(json.dumps({"alpha": 3}))
    save_corpus([], tmp_path / "empty.json")
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--train", str(tmp_path / "empty.json"),
                 "--val", str(tmp_path / "empty.json"), "--out", str(tmp_path / "ck")]) == 2


def test_oracle_checkpoint_scores_perfectly(corpora, capsys):
    write_oracle_checkpoint(corpora / "oracle")
    report = corpora / "r.json"
    assert main(["evaluate", "--checkpoint", str(corpora / "oracle"), "--test", str(corpora / "val.json"),
                 "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    for key in ("acc_hloc", "acc_hlevel", "acc_m_sm", "acc_m_token_sm", "acc_m_token_ocm"):
        assert data[key] == 1.0
    assert (corpora / "r.csv").exists()


def test_train_evaluate_predict(corpora, capsys):
    cfg = corpora / "cfg.json"
    cfg.write_text(json.dumps({"model": "pg", "max_epochs": 2, "patience": 1,
                               "pg": {"embedding_dim": 16, "hidden_size": 16, "num_layers": 1}}))
    ck = corpora / "ck"
    assert main(["train", "--config", str(cfg), "--train", str(corpora / "train.json"),
                 "--val", str(corpora / "val.json"), "--out", str(ck)]) == 0
    assert json.loads(capsys.readouterr().out)["best_epoch"] in (1, 2)
    assert main(["evaluate", "--checkpoint", str(ck), "--test", str(corpora / "val.json"),
                 "--report", str(corpora / "rep.json"), "--confusion", str(corpora / "conf.csv")]) == 0
    assert (corpora / "conf.csv").read_text().startswith("actual")
    capsys.readouterr()
    assert main(["predict", "--checkpoint", str(ck), "--in", str(corpora / "val.json")]) == 0
    preds = json.loads(capsys.readouterr().out)
    assert len(preds) == 12
    assert set(preds[0]) >= {"id", "class", "tokens", "p_hloc"}
    assert preds[0]["class"] in ("LRow", "LCol", "CCapt", "Gen")


def test_ablate_command(corpora, capsys):
    cfg = corpora / "cfg.json"
    cfg.write_text(json.dumps({"max_epochs": 1, "patience": 0,
                               "pg": {"embedding_dim": 8, "hidden_size": 8, "num_layers": 1}}))
    assert main(["ablate", "--flag", "no_copy", "--config", str(cfg), "--train", str(corpora / "train.json"),
                 "--val", str(corpora / "val.json"), "--test", str(corpora / "val.json"),
                 "--out", str(corpora / "ab"), "--report", str(corpora / "ab.json")]) == 0
    assert json.loads(capsys.readouterr().out)["flag"] == "no_copy"
    assert json.loads((corpora / "ab.json").read_text())["ablation"] == "no_copy"
    assert main(["ablate", "--flag", "no_segment_embeddings", "--config", str(cfg), "--train",
                 str(corpora / "train.json"), "--val", str(corpora / "val.json"), "--test",
                 str(corpora / "val.json"), "--out", str(corpora / "ab2"), "--report", str(corpora / "ab2.json")]) == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "s.json"
    proc = subprocess.run([sys.executable, "-m", "metrictype", "synth", "--seed", "1", "--size", "5",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0 and len(json.loads(out.read_text())) == 5
