import json
import subprocess
import sys

import numpy as np
import pytest

from npcov.cli import EXIT_CODES, main
from npcov.fixtures import DATA_DIR
from npcov.io import save_dataset

MODEL = str(DATA_DIR / "mlp.manifest")


@pytest.fixture(scope="module")
def files(tmp_path_factory, train_set, test_set):
    d = tmp_path_factory.mktemp("cli")
    save_dataset(train_set.subset(np.arange(600)), d / "train-img.idx", d / "train-lbl.idx")
    save_dataset(test_set.subset(np.arange(300)), d / "test-img.idx", d / "test-lbl.idx")
    save_dataset(test_set.subset([]), d / "empty-img.idx", d / "empty-lbl.idx")
    rc = main(["build-graph", "--model", MODEL, "--images", str(d / "train-img.idx"),
               "--labels", str(d / "train-lbl.idx"), "--alpha", "0.9", "--beta", "0.6", "--clusters", "4",
               "--graph-out", str(d / "g.json"), "-o", str(d / "build.json")])
    assert rc == 0
    return d


def _args(files, split="test"):
    return ["--model", MODEL, "--images", str(files / f"{split}-img.idx"), "--labels", str(files / f"{split}-lbl.idx")]


def _run(argv, capsys):
    rc = main(argv)
    out, err = capsys.readouterr()
    return rc, out, err


def test_build_report(files):
    doc = json.loads((files / "build.json").read_text())
    assert doc["command"] == "build-graph"
    assert doc["config"]["clusters"] == 4 and doc["config"]["alpha"] == 0.9
    assert doc["build"]["inputs"] == 600
    assert "threads" not in doc["config"]


@pytest.mark.parametrize("criterion", ["snpc", "anpc", "nc", "kmnc", "nbc", "impartiality"])
def test_coverage_each_criterion(files, capsys, criterion):
    rc, out, _ = _run(["coverage", *_args(files), "--criterion", criterion, "--graph", str(files / "g.json")], capsys)
    assert rc == 0
    doc = json.loads(out)
    assert 0 <= doc["coverage"] <= 1
    assert doc["config"]["criterion"] == criterion


def test_empty_suite_coverage_zero(files, capsys):
    rc, out, _ = _run(["coverage", *_args(files, "empty"), "--graph", str(files / "g.json")], capsys)
    assert rc == 0
    assert json.loads(out)["coverage"] == 0.0


def test_missing_graph_is_io_error(files, capsys):
    rc, out, err = _run(["coverage", *_args(files), "--graph", str(files / "nope.json")], capsys)
    assert rc == EXIT_CODES["io"] == 3
    assert out == ""
    assert err.count("\n") == 1 and err.startswith("npcov: error[io]:")


def test_config_errors(files, capsys):
    rc, _, err = _run(["coverage", *_args(files), "--criterion", "snpc"], capsys)
    assert rc == 2 and "needs --graph" in err
    rc, _, err = _run(["coverage", *_args(files), "--criterion", "idc"], capsys)
    assert rc == 2 and err.startswith("npcov: error[config]")
    rc, _, _ = _run(["tune", *_args(files), "--alphas", "a,b"], capsys)
    assert rc == 2
    rc, _, _ = _run(["extract", *_args(files), "--threads", "0"], capsys)
    assert rc == 2


def test_format_error(files, capsys, tmp_path):
    (tmp_path / "bad.manifest").write_text("{not json")
    (tmp_path / "bad.bin").write_bytes(b"")
    rc, _, err = _run(["extract", "--model", str(tmp_path / "bad.manifest"), "--images", str(files / "test-img.idx"),
                       "--labels", str(files / "test-lbl.idx")], capsys)
    assert rc == EXIT_CODES["format"] == 4
    rc, _, err = _run(["extract", "--model", MODEL, "--images", str(files / "test-lbl.idx"),
                       "--labels", str(files / "test-lbl.idx")], capsys)
    assert rc == 4 and "magic" in err


def test_invariant_error(files, capsys, tmp_path):
    doc = json.loads((files / "g.json").read_text())
    merged = doc["classes"][0]["clusters"][0]["merged"][0]
    merged["weights"][0] = 1.2
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    rc, _, err = _run(["coverage", *_args(files), "--graph", str(tmp_path / "bad.json")], capsys)
    assert rc == EXIT_CODES["invariant"] == 5
    assert "error[invariant]" in err


def test_same_config_twice_byte_identical(files, capsys):
    argv = ["coverage", *_args(files), "--criterion", "anpc", "--graph", str(files / "g.json")]
    _, a, _ = _run(argv, capsys)
    _, b, _ = _run(argv, capsys)
    _, c, _ = _run(argv + ["--threads", "3"], capsys)
    assert a == b == c


def test_build_graph_threads_identical(files, capsys, tmp_path):
    base = ["build-graph", *_args(files, "train"), "--clusters", "3"]
    main(base + ["--graph-out", str(tmp_path / "a.json"), "--threads", "1"])
    main(base + ["--graph-out", str(tmp_path / "b.json"), "--threads", "4"])
    capsys.readouterr()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_inputs_not_mutated(files, capsys):
    paths = [files / "g.json", files / "test-img.idx", files / "test-lbl.idx", DATA_DIR / "mlp.manifest",
             DATA_DIR / "mlp.bin"]
    before = [p.read_bytes() for p in paths]
    _run(["coverage", *_args(files), "--graph", str(files / "g.json")], capsys)
    _run(["mask-eval", *_args(files, "train"), "--graph", str(files / "g.json"), "--scopes", "abstract_cdp"], capsys)
    assert before == [p.read_bytes() for p in paths]


def test_graph_flag_mismatch_warns(files, capsys):
    rc, out, err = _run(["coverage", *_args(files), "--graph", str(files / "g.json"), "--buckets", "10"], capsys)
    assert rc == 0
    assert "m=200 in file overrides requested 10" in err
    assert json.loads(out)["details"]["config"]["m"] == 200


def test_extract(files, capsys, tmp_path):
    rc, out, _ = _run(["extract", *_args(files), "--alpha", "0.8", "--relevance-out", str(tmp_path / "r.json")],
                      capsys)
    assert rc == 0
    doc = json.loads(out)
    assert len(doc["inputs"]) == 300
    assert doc["inputs"][0]["id"] == 0
    assert json.loads((tmp_path / "r.json").read_text())["format"] == "npcov-relevance"


def test_mask_eval(files, capsys):
    rc, out, _ = _run(["mask-eval", *_args(files), "--quintiles", "--only-correct"], capsys)
    assert rc == 0
    rows = {r["scope"]: r for r in json.loads(out)["reports"]}
    assert rows["cdp"]["rate"] >= 0.8 and rows["ncdp"]["rate"] <= 0.2
    assert rows["quintile1"]["rate"] >= rows["quintile5"]["rate"]
    rc, out, _ = _run(["mask-eval", *_args(files, "train"), "--graph", str(files / "g.json"),
                       "--scopes", "abstract_cdp,abstract_ncdp"], capsys)
    rows = {r["scope"]: r for r in json.loads(out)["reports"]}
    assert rows["abstract_cdp"]["total"] == 600


def test_tune(files, capsys):
    rc, out, _ = _run(["tune", *_args(files, "train"), "--alphas", "0.9", "--betas", "0.6,0.8", "--ks", "1"], capsys)
    assert rc == 0
    doc = json.loads(out)
    assert len(doc["ranked"]) == 2
    assert doc["config"]["alphas"] == "0.9"


def test_reports(files, capsys):
    rc, out, _ = _run(["report", "impartiality", *_args(files)], capsys)
    assert rc == 0 and 0 < json.loads(out)["impartiality"] <= 1
    rc, out, _ = _run(["report", "similarity", *_args(files), "--per-class", "10"], capsys)
    sim = json.loads(out)["similarity"]
    assert sim["intra_class"] > sim["inter_class"]
    rc, out, _ = _run(["report", "timing", *_args(files), "--graph", str(files / "g.json"), "--criteria", "snpc,nc"],
                      capsys)
    t = json.loads(out)["timing"]
    assert t["snpc"]["extraction"] < t["snpc"]["total"]
    rc, out, _ = _run(["report", "ncov", *_args(files), "--graph", str(files / "g.json"), "--suite-size", "100",
                       "--percents", "0,5", "--repeats", "2"], capsys)
    assert rc == 0 and json.loads(out)["ncov"]["ncov"][0] == 0.0


def test_text_format(files, capsys):
    rc, out, _ = _run(["report", "impartiality", *_args(files), "--format", "text"], capsys)
    assert rc == 0
    assert any(line.startswith("impartiality\t") for line in out.splitlines())


def test_module_entry_point(files):
    res = subprocess.run([sys.executable, "-m", "npcov", "coverage", *_args(files), "--criterion", "nc"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["criterion"] == "nc"
