import csv
import io
import math
import subprocess
import sys

import pytest

from mzfidelity.cli import main

V1 = 0.36457049315308626


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_fidelity_quantum_vacuum_and_golden(capsys):
    code, out, _ = run(capsys, "fidelity", "quantum", "--eta", "0")
    assert code == 0 and abs(float(rows(out)[0]["h_coh_bits"])) <= 1e-6
    code, out, _ = run(capsys, "fidelity", "quantum", "--eta", "1")
    assert code == 0 and abs(float(rows(out)[0]["h_coh_bits"]) - V1) < 1e-4


def test_fidelity_classical(capsys):
    code, out, _ = run(capsys, "fidelity", "classical", "--e", "1", "--delta", "100")
    assert code == 0 and float(rows(out)[0]["h_class_bits"]) < 0.01
    code, out, _ = run(capsys, "fidelity", "classical", "--e", "1", "--delta", "1")
    assert code == 0 and abs(float(rows(out)[0]["h_class_bits"]) - 0.16093415940600336) < 3 * 0.000446


@pytest.mark.parametrize("argv", [
    ["fidelity", "quantum", "--eta", "-1"],
    ["fidelity", "quantum", "--eta", "nan"],
    ["fidelity", "quantum"],
    ["fidelity", "classical", "--e", "1", "--delta", "0"],
    ["fidelity", "quantum", "--eta", "1", "--rel-tol", "-1"],
    ["sweep", "--steps", "1"],
    ["sweep", "--eta-min", "3", "--eta-max", "1"],
    ["posterior", "--e-c", "1", "--e-d", "1", "--e", "1", "--delta", "-2"],
    ["fisher", "--model", "gaussian", "--x0", "1"],
    ["fisher", "--model", "bernoulli", "--x0", "1.5"],
    ["mc-check", "--target", "quantum", "--n", "100"],
    ["mc-check", "--target", "photonic"],
    ["no-such-command"],
])
def test_usage_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and err


def test_numeric_failure_exit_3(capsys):
    code, _, err = run(capsys, "fidelity", "quantum", "--eta", "1", "--rel-tol", "1e-300", "--abs-tol", "0")
    assert code == 3 and "numeric failure" in err


def test_impossible_observation_exit_3(capsys):
    code, _, err = run(capsys, "posterior", "--e-c", "1e200", "--e-d", "0", "--e", "1", "--delta", "1")
    assert code == 3 and "impossible" in err


def test_unwritable_output_exit_4(capsys, tmp_path):
    target = tmp_path / "missing-dir" / "out.csv"
    code, _, _ = run(capsys, "fidelity", "quantum", "--eta", "1", "--out", str(target))
    assert code == 4


def test_sweep_file_format(capsys, tmp_path):
    path = tmp_path / "sweep.csv"
    code, _, _ = run(capsys, "sweep", "--eta-min", "0", "--eta-max", "2", "--steps", "5", "--out", str(path))
    raw = path.read_bytes()
    assert code == 0 and b"\r" not in raw
    text = raw.decode("utf-8")
    assert text.splitlines()[0] == "eta,h_coh_bits,h_class_bits,h_coh_err,h_class_err"
    table = rows(text)
    assert len(table) == 5
    for r in table:
        if float(r["eta"]) >= 0.5:
            assert float(r["h_coh_bits"]) > float(r["h_class_bits"])
        # round-trip decimal: reparsing and reformatting reproduces the text
        for v in r.values():
            assert repr(float(v)) == v


def test_sweep_byte_identical(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert run(capsys, "sweep", "--eta-max", "1", "--steps", "3", "--out", str(p))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_posterior_two_modes(capsys):
    code, out, err = run(capsys, "posterior", "--e-c", "0.5", "--e-d", "0.5", "--e", "1", "--delta", "0.01")
    assert code == 0
    table = rows(out)
    assert len(table) == 2048
    dens = [float(r["density"]) for r in table]
    assert abs(sum(dens) * 2 * math.pi / 2048 - 1) < 1e-6
    modes = [float(m) for m in err.split("modes=")[1].split()]
    step = 2 * math.pi / 2048
    assert len(modes) == 2 and abs(modes[0] + math.pi / 2) <= step and abs(modes[1] - math.pi / 2) <= step


def test_posterior_single_mode(capsys):
    code, _, err = run(capsys, "posterior", "--e-c", "0", "--e-d", "1", "--e", "1", "--delta", "0.01")
    modes = [float(m) for m in err.split("modes=")[1].split()]
    assert code == 0 and len(modes) == 1 and abs(modes[0]) <= 2 * math.pi / 2048


@pytest.mark.parametrize("argv,fisher,bound", [
    (["--model", "bernoulli", "--x0", "0.5"], 4.0, 0.25),
    (["--model", "pure-qubit", "--x0", "0.3"], 1.0, 1.0),
    (["--model", "poisson", "--x0", "2"], 0.5, 2.0),
    (["--model", "quantum-mz", "--eta", "1", "--x0", "1.5708"], 1.0, 1.0),
])
def test_fisher_command(capsys, argv, fisher, bound):
    code, out, _ = run(capsys, "fisher", *argv)
    r = rows(out)[0]
    assert code == 0
    assert float(r["fisher"]) == pytest.approx(fisher, abs=1e-6)
    assert float(r["cramer_rao_bound"]) == pytest.approx(bound, rel=1e-5)


def test_mc_check_small_run(capsys):
    code, out, _ = run(capsys, "mc-check", "--target", "quantum", "--n", "100000", "--seed", "3")
    r = rows(out)[0]
    assert code == 0 and r["verdict"] == "PASS"


def test_config_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\neta = 0\nrel-tol = 1e-6\n", encoding="utf-8")
    _, from_file, _ = run(capsys, "--config", str(cfg), "fidelity", "quantum")
    assert float(rows(from_file)[0]["eta"]) == 0.0
    _, overridden, _ = run(capsys, "--config", str(cfg), "fidelity", "quantum", "--eta", "1")
    assert float(rows(overridden)[0]["eta"]) == 1.0


def test_config_errors(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("eta 1\n", encoding="utf-8")
    assert run(capsys, "--config", str(bad), "fidelity", "quantum")[0] == 2
    assert run(capsys, "--config", str(tmp_path / "none.cfg"), "fidelity", "quantum")[0] == 2
    bad.write_text("eta = lots\n", encoding="utf-8")
    assert run(capsys, "--config", str(bad), "fidelity", "quantum")[0] == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "mzfidelity", "fisher", "--model", "bernoulli", "--x0", "0.5"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("model,x0,kind,fisher,cramer_rao_bound\n")
