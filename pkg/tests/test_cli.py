import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dualfilter.cli import OUT_ENV, load_tokens, main


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "model.json"
    assert main(["gen-model", "--d", "5", "--m", "2", "--alpha", "0.5", "--seed", "3",
                 "-o", str(path)]) == 0
    return path


@pytest.fixture
def token_file(tmp_path, model_file):
    path = tmp_path / "tokens.txt"
    assert main(["sample", "--model", str(model_file), "--T", "12", "--seed", "1",
                 "-o", str(path)]) == 0
    return path


def _csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_gen_model_format(model_file):
    data = json.loads(model_file.read_text())
    assert set(data) == {"d", "m", "prior", "transition", "emission", "meta"}
    assert data["meta"] == {"seed": 3, "alpha": 0.5, "temperature": 1.0}
    assert (data["d"], data["m"]) == (5, 2)


def test_sample_and_tokens(tmp_path, model_file, token_file):
    toks = load_tokens(token_file)
    assert len(toks) == 12 and toks.max() <= 2
    states = tmp_path / "states.txt"
    assert main(["sample", "--model", str(model_file), "--T", "12", "--seed", "1",
                 "-o", str(tmp_path / "again.txt"), "--states", str(states)]) == 0
    assert (tmp_path / "again.txt").read_text() == token_file.read_text()
    assert len(states.read_text().split()) == 13


def test_load_tokens_json(tmp_path):
    p = tmp_path / "t.json"
    p.write_text("[0, 2, 1]")
    assert list(load_tokens(p)) == [0, 2, 1]


def test_filter(tmp_path, model_file, token_file):
    out = tmp_path / "f"
    assert main(["filter", "--model", str(model_file), "--tokens", str(token_file),
                 "--out", str(out)]) == 0
    post = _csv(out / "posterior.csv")
    assert post[0] == ["t"] + [f"x_{i}" for i in range(5)] and len(post) == 14
    preds = np.array(_csv(out / "predictions.csv")[1:], dtype=float)
    assert preds.shape == (12, 4) and np.allclose(preds[:, 1:].sum(axis=1), 1.0)


@pytest.mark.parametrize("mode", ["single-shot", "iterative"])
def test_dual_filter(tmp_path, model_file, token_file, mode):
    out = tmp_path / mode
    assert main(["dual-filter", "--model", str(model_file), "--tokens", str(token_file),
                 "--mode", mode, "--layers", "3", "--times", "2", "12", "--topk", "2",
                 "--out", str(out)]) == 0
    for name in ("predictions.csv", "errors.csv", "controls.csv", "topk.csv"):
        assert (out / name).exists()
    errs = _csv(out / "errors.csv")
    assert len(errs) == (5 if mode == "iterative" else 3)
    assert len(_csv(out / "topk.csv")) == 5
    if mode == "single-shot":
        assert max(float(v) for v in errs[-1][1:]) <= 1e-8


def test_verify(capsys):
    assert main(["verify", "--scale", "0.1", "--seed", "2"]) == 0
    text = capsys.readouterr().out
    assert "FAIL" not in text and text.count("pass") == 11


def test_spectrum(tmp_path, model_file):
    out = tmp_path / "s"
    assert main(["spectrum", "--d", "16", "--alphas", "0", "1", "--out", str(out)]) == 0
    rows = _csv(out / "spectrum.csv")
    assert rows[0] == ["alpha", "lambda2"] and abs(float(rows[2][1]) - 1.0) <= 1e-9
    assert main(["spectrum", "--model", str(model_file), "--out", str(out)]) == 0
    assert len(_csv(out / "eigenvalues.csv")) == 6


def test_experiment(tmp_path):
    out = tmp_path / "e"
    assert main(["experiment", "--preset", "small", "--seeds", "0", "1", "--T", "8",
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    for name in manifest["files"]:
        assert (out / name).exists()
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 4, "m": 1, "T": 5, "alpha": [0.0, 1.0], "seeds": [2]}))
    assert main(["experiment", "--config", str(cfg), "--seed", "7", "--out", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["model_seed"] == 7


def test_env_var_sets_output(tmp_path, monkeypatch, model_file, token_file):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envout"))
    assert main(["filter", "--model", str(model_file), "--tokens", str(token_file)]) == 0
    assert (tmp_path / "envout" / "posterior.csv").exists()


def test_validation_errors_exit_1(tmp_path, model_file):
    bad = tmp_path / "bad.txt"
    bad.write_text("0\nx\n")
    assert main(["filter", "--model", str(model_file), "--tokens", str(bad)]) == 1
    oob = tmp_path / "oob.txt"
    oob.write_text("7\n")
    assert main(["filter", "--model", str(model_file), "--tokens", str(oob),
                 "--out", str(tmp_path)]) == 1
    assert main(["filter", "--model", str(tmp_path / "missing.json"), "--tokens", str(oob)]) == 1
    broken = tmp_path / "broken.json"
    broken.write_text('{"d": 2, "m": 1, "prior": [0.5, 0.5], "transition": [[1, 0], [0.5]], '
                      '"emission": [[1, 0], [0, 1]], "meta": {}}')
    assert main(["filter", "--model", str(broken), "--tokens", str(oob)]) == 1
    assert main(["gen-model", "--alpha", "2", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as info:
        main(["dual-filter", "--mode", "bogus"])
    assert info.value.code == 1


def test_numerical_failure_exits_2(tmp_path):
    model = tmp_path / "det.json"
    model.write_text(json.dumps({"d": 2, "m": 1, "prior": [1.0, 0.0],
                                 "transition": [[1.0, 0.0], [0.0, 1.0]],
                                 "emission": [[1.0, 0.0], [0.0, 1.0]], "meta": {}}))
    toks = tmp_path / "t.txt"
    toks.write_text("1\n")
    assert main(["filter", "--model", str(model), "--tokens", str(toks),
                 "--out", str(tmp_path)]) == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "dualfilter.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
