import json

import numpy as np
import pytest

from asyncsam.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_RUNTIME, SUMMARY_COLUMNS, main, read_summary_csv
from asyncsam.pipeline import TraceSchemaError, read_trace_csv

SMALL = """
[objective]
kind = {kind}
hidden = 8
[data]
n = 300
n_test = 100
[optimizer]
rule = {rule}
r = {r}
b = 16
[run]
T = {T}
seed = 5
[instrument]
cossim_window = 40
landscape_grid = 5
"""


def write_cfg(tmp_path, name="c.ini", kind="mlp", rule="async_sam", r=0.1, T=60, extra=""):
    p = tmp_path / name
    p.write_text(SMALL.format(kind=kind, rule=rule, r=r, T=T) + extra)
    return str(p)


def test_run_radius_zero_async_matches_sgd(tmp_path):
    a = write_cfg(tmp_path, "a.ini", rule="async_sam", r=0.0)
    s = write_cfg(tmp_path, "s.ini", rule="sgd")
    assert main(["run", "--config", a, "--out", str(tmp_path / "ra")]) == EXIT_OK
    assert main(["run", "--config", s, "--out", str(tmp_path / "rs")]) == EXIT_OK
    la = read_trace_csv(tmp_path / "ra" / "trace.csv")["loss"]
    ls = read_trace_csv(tmp_path / "rs" / "trace.csv")["loss"]
    np.testing.assert_array_equal(la, ls)


def test_run_writes_replayable_manifest(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert main(["run", "--config", cfg, "--out", str(out), "--mode", "concurrent"]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"]["optimizer"]["rule"] == "async_sam"
    assert manifest["mode"] == "concurrent" and manifest["seed"] == 5
    assert main(["replay", "--out", str(out)]) == EXIT_OK
    assert "identical" in capsys.readouterr().out


def test_replay_detects_tampering(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    m["config"]["lr"] = 0.3
    (out / "manifest.json").write_text(json.dumps(m))
    assert main(["replay", "--out", str(out)]) == EXIT_RUNTIME


def test_run_multiple_seeds(tmp_path):
    cfg = write_cfg(tmp_path, T=10)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--seeds", "3"]) == EXIT_OK
    for s in (5, 6, 7):
        assert json.loads((tmp_path / "o" / f"seed_{s}" / "manifest.json").read_text())["seed"] == s


def test_compare_summary_schema(tmp_path):
    cfg = write_cfg(tmp_path, T=30)
    out = tmp_path / "cmp"
    assert main(["compare", "--config", cfg, "--out", str(out)]) == EXIT_OK
    text = (out / "summary.csv").read_text().splitlines()
    assert text[0] == "# asyncsam-summary v1"
    assert text[1] == ",".join(SUMMARY_COLUMNS) == "rule,seed,final_loss,test_acc,mean_iter_s,grad_norm"
    rows = read_summary_csv(out / "summary.csv")
    assert [(r["rule"], r["seed"]) for r in rows] == [(rule, s) for rule in ("sgd", "sam", "async_sam")
                                                      for s in (5, 6, 7)]
    assert all(0 <= r["test_acc"] <= 1 and r["mean_iter_s"] > 0 for r in rows)
    (out / "bad.csv").write_text("# asyncsam-summary v2\n")
    with pytest.raises(TraceSchemaError):
        read_summary_csv(out / "bad.csv")


def test_calibrate_b128_throttle5(tmp_path, capsys):
    cfg = write_cfg(tmp_path, extra="")
    p = tmp_path / "cal.ini"
    p.write_text(open(cfg).read().replace("hidden = 8", "hidden = 64").replace("n = 300", "n = 2000")
                 .replace("b = 16", "b = 128"))
    assert main(["calibrate", "--config", str(p), "--throttle", "5", "--out", str(tmp_path / "cal")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "b' = 26" in out
    assert "t_fast,t_slow,ratio,b_prime" in out
    assert (tmp_path / "cal" / "calibration.csv").read_text().splitlines()[1].endswith(",26")


def test_cossim_and_landscape_artifacts(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["cossim", "--config", cfg, "--out", str(tmp_path / "cs")]) == EXIT_OK
    lines = (tmp_path / "cs" / "cossim.csv").read_text().splitlines()
    assert lines[:2] == ["# asyncsam-cossim v1", "t,cossim"] and len(lines) == 2 + 39
    assert main(["landscape", "--config", cfg, "--out", str(tmp_path / "ls")]) == EXIT_OK
    assert (tmp_path / "ls" / "landscape.svg").read_text().startswith("<svg")
    assert (tmp_path / "ls" / "landscape.csv").read_text().startswith("# asyncsam-landscape v1")


def test_theorem_check_output(tmp_path):
    cfg = write_cfg(tmp_path, kind="quadratic", T=200,
                    extra="[instrument]\n".replace("[instrument]\n", ""))
    text = open(cfg).read().replace("cossim_window = 40", "cossim_window = 40\ntheorem_check = true")
    text = text.replace("b = 16", "b = 16\nmomentum = 0\nlr = 0.1")
    open(cfg, "w").write(text)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "q")]) == EXIT_OK
    assert "holds=True" in (tmp_path / "q" / "theorem.txt").read_text()


def test_exit_codes_and_cleanup(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == EXIT_IO
    bad = tmp_path / "bad.ini"
    bad.write_text("[optimizer]\nb = 8\nb_prime = 9\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert not (tmp_path / "x").exists()
    cfg = write_cfg(tmp_path, rule="sgd")
    with pytest.raises(SystemExit) as info:
        main(["run", "--config", cfg, "--mode", "sideways"])
    assert info.value.code == EXIT_CONFIG
    assert main(["run", "--config", cfg, "--mode", "concurrent", "--out", str(tmp_path / "y")]) == EXIT_CONFIG
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", cfg, "--out", str(blocker)]) == EXIT_IO


def test_runtime_failure_removes_partial_outputs(tmp_path):
    cfg = write_cfg(tmp_path, kind="quadratic", rule="sgd", T=300)
    text = open(cfg).read().replace("b = 16", "b = 16\nlr = 5\nmomentum = 0")
    open(cfg, "w").write(text)
    out = tmp_path / "o"
    with pytest.warns(RuntimeWarning):
        code = main(["run", "--config", cfg, "--out", str(out), "--seeds", "2"])
    assert code == EXIT_RUNTIME
    assert not out.exists()
