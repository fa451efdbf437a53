import json

import numpy as np
import pytest

from cli import main
from embedding import write_matrix
from graphstore import load_snapshot


@pytest.fixture
def snapshot(tmp_path, write_corpus, capsys):
    corpus = write_corpus(["Glioblastoma shows palisading necrosis.",
                           "Lung adenocarcinoma shows lepidic growth pattern.",
                           "Nuclear grooves indicates papillary thyroid carcinoma.",
                           "Comedo necrosis is associated with ductal carcinoma in situ."])
    path = str(tmp_path / "ltm.json")
    assert main(["build", "--corpus", corpus, "--out", path, "--dim", "32"]) == 0
    capsys.readouterr()
    return path


def run(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_build_reports_counts(tmp_path, write_corpus, capsys):
    corpus = write_corpus(["a shows b.", "a shows b.", "c indicates d."])
    code, out, _ = run(capsys, ["build", "--corpus", corpus, "--out", str(tmp_path / "s.json")])
    assert code == 0
    report = json.loads(out)
    assert (report["docs_seen"], report["deduped"], report["edges"]) == (3, 1, 2)


def test_build_is_deterministic(tmp_path, write_corpus, capsys):
    corpus = write_corpus(["Glioblastoma shows palisading necrosis.", "Necrosis indicates high grade."])
    paths = [tmp_path / "one.json", tmp_path / "two.json"]
    for p in paths:
        assert run(capsys, ["build", "--corpus", corpus, "--out", str(p)])[0] == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_activate_reports_provenance(snapshot, capsys):
    argv = ["activate", "--snapshot", snapshot, "--dim", "32", "--query", "palisading necrosis",
            "--cap-dynamic", "1", "--cap-static", "1"]
    code, out, _ = run(capsys, argv)
    assert code == 0
    report = json.loads(out)
    assert report["mode"] == "fused"
    assert report["entries"][0]["edge"] == ["glioblastoma", "EXHIBITS_FEATURE", "palisading necrosis"]
    assert report["entries"][0]["triple"] == "glioblastoma EXHIBITS_FEATURE palisading necrosis"
    assert report["bank"] == load_snapshot(snapshot).fingerprint()
    assert run(capsys, argv)[1] == out


def test_activate_disjoint_top1_gives_two_entries(snapshot, tmp_path, capsys):
    flip = str(tmp_path / "flip.bin")
    write_matrix(flip, -np.eye(32), {})
    code, out, _ = run(capsys, ["activate", "--snapshot", snapshot, "--dim", "32", "--query", "palisading necrosis",
                                "--cap-dynamic", "1", "--cap-static", "1", "--projection-query", flip])
    assert code == 0
    entries = json.loads(out)["entries"]
    assert len(entries) == 2
    assert [e["source"] for e in entries] == ["dynamic", "static"]


def test_activate_with_tokens_and_masks(snapshot, tmp_path, capsys):
    tokens = tmp_path / "tokens.json"
    tokens.write_text(json.dumps({"tokens": np.ones((2, 32)).tolist()}), encoding="utf-8")
    code, out, _ = run(capsys, ["activate", "--snapshot", snapshot, "--dim", "32", "--tokens", str(tokens),
                                "--mode", "static", "--restrict-feature", "glioblastoma"])
    assert code == 0
    assert [e["edge"][0] for e in json.loads(out)["entries"]] == ["glioblastoma"]

    code, _, err = run(capsys, ["activate", "--snapshot", snapshot, "--dim", "32", "--tokens", str(tokens),
                                "--restrict-feature", "no such thing"])
    assert code == 3
    assert json.loads(err)["error"] == "unknown_entity"


def test_activate_dimension_mismatch(snapshot, tmp_path, capsys):
    tokens = tmp_path / "tokens.json"
    tokens.write_text(json.dumps({"tokens": [[1.0] * 16]}), encoding="utf-8")
    code, _, err = run(capsys, ["activate", "--snapshot", snapshot, "--dim", "32", "--tokens", str(tokens)])
    assert code == 3
    assert json.loads(err)["error"] == "dimension_mismatch"


def test_missing_snapshot(tmp_path, capsys):
    code, out, err = run(capsys, ["stats", "--snapshot", str(tmp_path / "nope.json")])
    assert code == 3
    assert out == ""
    assert json.loads(err)["error"] == "file_not_found"


def test_bad_config_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, ["print-config", "--tau", "1.5"])
    assert code == 2
    assert json.loads(err)["error"] == "config_error"


def test_stats_is_deterministic(snapshot, capsys):
    code, out, _ = run(capsys, ["stats", "--snapshot", snapshot])
    assert code == 0
    stats = json.loads(out)
    assert (stats["entities"], stats["edges"], stats["evidence"]) == (8, 4, 4)
    assert sum(stats["weight_histogram"].values()) == 4
    assert run(capsys, ["stats", "--snapshot", snapshot])[1] == out


def test_stats_feature_subgraph(snapshot, capsys):
    code, out, _ = run(capsys, ["stats", "--snapshot", snapshot, "--feature", "palisading necrosis"])
    assert code == 0
    assert [e["object_id"] for e in json.loads(out)["edges"]] == ["palisading necrosis"]


def test_print_config_round_trip(tmp_path, capsys):
    code, out, _ = run(capsys, ["print-config", "--tau", "0.7", "--cap-static", "3"])
    assert code == 0
    assert json.loads(out)["tau"] == 0.7
    path = tmp_path / "config.json"
    path.write_text(out, encoding="utf-8")
    assert run(capsys, ["print-config", "--config", str(path)])[1] == out


def test_export_bank(snapshot, tmp_path, capsys):
    out_path = str(tmp_path / "bank.bin")
    code, out, _ = run(capsys, ["export-bank", "--snapshot", snapshot, "--dim", "32", "--out", out_path])
    assert code == 0
    assert json.loads(out)["rows"] == 4
    first = open(out_path, "rb").read()
    run(capsys, ["export-bank", "--snapshot", snapshot, "--dim", "32", "--out", out_path])
    assert open(out_path, "rb").read() == first


def test_eval_writes_csv(capsys):
    code, out, _ = run(capsys, ["eval", "--caps", "1,5", "--docs", "20"])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "cap_D,cap_S,recall,mean_score"
    assert lines[2].startswith("5,5,1.000000,")
