import json
import os
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ovkern import Grid, exp_kernel_eigs
from ovkern.cli import COMMANDS, build_parser, run
from ovkern.datagen import load_dataset
from ovkern.learn import load_model

GOLDEN = Path(__file__).parent / "golden"
FIXTURES = Path(__file__).parent / "fixtures"
ERROR_LINE = re.compile(r"^error: E_[A-Z_]+: .+$")


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def kv(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


@pytest.fixture
def reg(tmp_path, capsys):
    tr, te = tmp_path / "train.json", tmp_path / "test.json"
    code, _, _ = call(capsys, "gen", "--seed", 3, "--n", 10, "--m-in", 15, "--m-out", 15,
                      "-o", tr, "--test-n", 4, "--test-output", te)
    assert code == 0
    return tr, te


@pytest.fixture
def cls(tmp_path, capsys):
    tr, te = tmp_path / "ctrain.json", tmp_path / "ctest.json"
    code, _, _ = call(capsys, "gen", "--task", "classification", "--seed", 1, "--n", 15,
                      "-o", tr, "--test-n", 15, "--test-output", te)
    assert code == 0
    return tr, te


# -- help text ------------------------------------------------------------------

@pytest.fixture
def fixed_width(monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")


@pytest.mark.parametrize("command", [None, *COMMANDS])
def test_help_matches_golden(command, capsys, fixed_width):
    argv = ["--help"] if command is None else [command, "--help"]
    assert run(argv) == 0
    text = capsys.readouterr().out
    path = GOLDEN / f"help_{command or 'main'}.txt"
    if os.environ.get("OVKERN_UPDATE_GOLDEN"):
        path.write_text(text)
    assert text == path.read_text()


@pytest.mark.parametrize("command", list(COMMANDS))
def test_help_documents_every_flag(command, fixed_width):
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    text = sub.format_help()
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text
        if action.option_strings and action.help is None:
            pytest.fail(f"{command} {action.option_strings} has no help")


# -- usage errors ------------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["fit", "--bogus"],
    [],
    ["frobnicate"],
    ["fit", "--data", "x.json", "--lambda", "-1", "-o", "m.json"],
    ["gen", "--seed", "abc", "-o", "d.json"],
    ["stability", "--data", "d.json", "--lambda", "1", "--confidence", "1.5"],
])
def test_usage_errors(argv, capsys):
    code, out, err = call(capsys, *argv)
    assert code == 2
    lines = err.strip().splitlines()
    assert lines[0].startswith("usage:")
    assert ERROR_LINE.match(lines[-1]) and "E_USAGE" in lines[-1]


def test_validation_error_single_line(tmp_path, capsys):
    code, _, err = call(capsys, "fit", "--data", tmp_path / "missing.json", "--lambda", 1,
                        "-o", tmp_path / "m.json")
    assert code == 3
    assert len(err.strip().splitlines()) == 1 and ERROR_LINE.match(err.strip())


def test_truncated_dataset_exit_code(tmp_path, capsys):
    p = tmp_path / "t.json"
    p.write_text((FIXTURES / "minimal.json").read_text()[:100])
    code, _, err = call(capsys, "fit", "--data", p, "--lambda", 1, "-o", tmp_path / "m.json")
    assert code == 3 and "E_DATA_FORMAT" in err and "line" in err
    assert not (tmp_path / "m.json").exists()


def test_wrong_dataset_kind(cls, tmp_path, capsys):
    code, _, err = call(capsys, "fit", "--data", cls[0], "--lambda", 1, "-o", tmp_path / "m.json")
    assert code == 3 and ERROR_LINE.match(err.strip())


def test_operator_flags_required(reg, tmp_path, capsys):
    code, _, err = call(capsys, "fit", "--data", reg[0], "--lambda", 1, "--operator", "mult",
                        "-o", tmp_path / "m.json")
    assert code == 3 and "--h-file" in err


def test_gen_test_flags_together(tmp_path, capsys):
    code, _, err = call(capsys, "gen", "-o", tmp_path / "d.json", "--test-n", 3)
    assert code == 3 and "--test-output" in err


def test_numerical_failure_exit_code(tmp_path, capsys):
    # a non-symmetric output operator cannot be diagonalized
    np.savetxt(tmp_path / "A.csv", np.triu(np.ones((5, 5))), delimiter=",")
    code, _, err = call(capsys, "eigs", "--method", "discrete", "--m", 5, "--operator", "disc",
                        "--op-matrix-file", tmp_path / "A.csv")
    assert code in (3, 4) and ERROR_LINE.match(err.strip())


# -- pipeline -------------------------------------------------------------------------

def test_gen_fit_evaluate_tiny_lambda(reg, tmp_path, capsys):
    model = tmp_path / "m.json"
    assert call(capsys, "fit", "--data", reg[0], "--lambda", 1e-9, "-o", model)[0] == 0
    code, out, _ = call(capsys, "evaluate", "--model", model, "--data", reg[0],
                        "--per-curve", tmp_path / "per.csv")
    assert code == 0
    rsse = float(kv(out)["rsse"])
    energy = float(np.sum(load_dataset(reg[0]).output_matrix() ** 2)) / 15
    assert rsse <= 1e-8 * energy
    lines = (tmp_path / "per.csv").read_text().splitlines()
    assert lines[0] == "sample,rsse" and len(lines) == 11
    assert sum(float(l.split(",")[1]) for l in lines[1:]) == pytest.approx(rsse, rel=1e-12)


def test_fit_variants_agree(reg, tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert call(capsys, "fit", "--data", reg[0], "--lambda", 0.1, "-o", a)[0] == 0
    assert call(capsys, "fit", "--data", reg[0], "--lambda", 0.1, "--dense", "-o", b)[0] == 0
    ca, cb = load_model(a).coeffs, load_model(b).coeffs
    assert np.linalg.norm(ca - cb) <= 1e-8 * np.linalg.norm(cb)


def test_predict_csv(reg, tmp_path, capsys):
    model = tmp_path / "m.json"
    call(capsys, "fit", "--data", reg[0], "--lambda", 0.1, "--bandwidth", "median", "-o", model)
    code, out, _ = call(capsys, "predict", "--model", model, "--inputs", reg[1])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "sample,t,value" and len(lines) == 1 + 4 * 15
    assert {l.split(",")[0] for l in lines[1:]} == {"0", "1", "2", "3"}
    call(capsys, "predict", "--model", model, "--inputs", reg[1], "-o", tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text() == out


def test_predict_accepts_inputs_without_outputs(tmp_path, capsys):
    model = tmp_path / "m.json"
    call(capsys, "fit", "--data", FIXTURES / "minimal.json", "--lambda", 0.1, "-o", model)
    text = (FIXTURES / "minimal.json").read_text()
    doc = json.loads(text)
    for s in doc["samples"]:
        s.pop("y")
    (tmp_path / "x.json").write_text(json.dumps(doc))
    assert call(capsys, "predict", "--model", model, "--inputs", tmp_path / "x.json")[0] == 0


def test_cv_output(reg, tmp_path, capsys):
    code, out, _ = call(capsys, "cv", "--data", reg[0], "--lambdas", "0.01,0.1,1",
                        "--kappas", "3,15", "-o", tmp_path / "cv.csv")
    assert code == 0
    rows = (tmp_path / "cv.csv").read_text().splitlines()
    assert rows[0] == "lambda,kappa,cv_score" and len(rows) == 7
    chosen = kv(out)
    best = min((float(r.split(",")[2]), r) for r in rows[1:])[1].split(",")
    assert float(chosen["cv_score"]) == float(best[2])
    assert chosen["kappa"] == best[1]


def test_classify_output(cls, tmp_path, capsys):
    code, out, _ = call(capsys, "classify", "--train", cls[0], "--test", cls[1], "--lambda", 0.01,
                        "--bandwidth", "median", "-o", tmp_path / "cm.csv")
    assert code == 0
    assert float(kv(out)["recognition_rate"]) >= 95.0
    rows = (tmp_path / "cm.csv").read_text().splitlines()
    assert rows[0] == "true,pred_1,pred_2,pred_3"
    assert sum(int(v) for r in rows[1:] for v in r.split(",")[1:]) == 15


def test_eigs_count(capsys):
    code, out, _ = call(capsys, "eigs", "--count", 5)
    assert code == 0
    rows = [r.split(",") for r in out.splitlines()[1:]]
    assert out.splitlines()[0] == "mode,mu,delta,t,value"
    modes = sorted({int(r[0]) for r in rows})
    assert modes == [1, 2, 3, 4, 5] and len(rows) == 5 * 101
    deltas = [float(next(r[2] for r in rows if int(r[0]) == k)) for k in modes]
    assert all(a > b for a, b in zip(deltas, deltas[1:]))
    ref = exp_kernel_eigs(5, Grid.uniform(101))
    assert np.allclose(deltas, ref.deltas, rtol=1e-14)


def test_eigs_discrete_and_mult(tmp_path, capsys):
    code, out, _ = call(capsys, "eigs", "--method", "discrete", "--count", 3, "--m", 21)
    assert code == 0 and all(r.split(",")[1] == "" for r in out.splitlines()[1:])
    t = np.linspace(0, 1, 7)
    (tmp_path / "h.csv").write_text("t,value\n" + "".join(f"{a},{1 + a}\n" for a in t))
    code, out, _ = call(capsys, "eigs", "--method", "discrete", "--count", 2, "--m", 11,
                        "--operator", "mult", "--h-file", tmp_path / "h.csv")
    assert code == 0
    assert float(out.splitlines()[1].split(",")[2]) == pytest.approx(2.0)
    code, _, err = call(capsys, "eigs", "--count", 2, "--operator", "identity")
    assert code == 3 and ERROR_LINE.match(err.strip())


def test_positivity_report(reg, capsys):
    code, out, _ = call(capsys, "positivity", "--data", reg[0])
    rep = kv(out)
    assert code == 0 and rep["passed"] == "true"
    assert float(rep["min_eig"]) >= -1e-8 * float(rep["max_eig"])


def test_stability_report(reg, capsys):
    code, out, _ = call(capsys, "stability", "--data", reg[0], "--lambda", 0.5)
    rep = kv(out)
    assert code == 0
    assert {"beta", "sigma", "kappa_sq"} <= set(rep)


def test_outputs_byte_identical(tmp_path, capsys):
    paths = []
    for rep in range(2):
        d = tmp_path / f"run{rep}"
        d.mkdir()
        call(capsys, "gen", "--seed", 0xDEADBEEF, "--n", 6, "--noise-sd", 0.05, "-o", d / "d.json")
        call(capsys, "fit", "--data", d / "d.json", "--lambda", 0.05, "--kappa", 10, "-o", d / "m.json")
        call(capsys, "predict", "--model", d / "m.json", "--inputs", d / "d.json", "-o", d / "p.csv")
        paths.append(d)
    for name in ("d.json", "m.json", "p.csv"):
        assert (paths[0] / name).read_bytes() == (paths[1] / name).read_bytes()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ovkern", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("ovkern ")
