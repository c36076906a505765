"""CLI surface: config layering, artifacts, fits, and the check matrix.

Heavy physics is exercised at small scale here; the engines themselves
are covered by their own test modules.  What matters in this file is
the contract of the front-end: precedence rules, byte-identical
artifacts, exit codes, and the least-squares helpers.
"""

import json
import math

import numpy as np
import pytest

from shallow_shadows import cli
from shallow_shadows.cli import (
    CheckResult,
    bootstrap_b_error,
    build_parser,
    content_hash,
    depth_derivative_diagnostic,
    fit_depth_pure_log,
    fit_depth_three_param,
    main,
    resolve_config,
)


def _resolve(argv):
    return resolve_config(build_parser().parse_args(argv))


# ----------------------------------------------------------------------
# configuration layering
# ----------------------------------------------------------------------

def test_default_velocity_grid_is_30_points():
    config = _resolve(["velocities"])
    assert len(config.q) * len(config.epsilon) == 30
    assert config.q == (2, 3, 4)
    assert config.epsilon[0] == pytest.approx(0.1)
    assert config.epsilon[-1] == pytest.approx(1.0)


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("q = 3\nepsilon = 0.5,1.0  # trailing comment\n\nt_max = 6\n")
    config = _resolve(
        ["shadow-norm", "--config", str(path), "--q", "2", "--k", "4"]
    )
    assert config.q == (2,)  # flag wins
    assert config.epsilon == (0.5, 1.0)  # file beats default
    assert config.t_max == 6
    assert config.k == (4,)
    assert config.engine == "imps"  # untouched default


def test_config_echo_is_sorted_and_complete():
    config = _resolve(["crosscheck", "--trials", "500", "--seed", "9"])
    echo = config.echo()
    assert echo == "format=csv out=- seed=9 trials=500"


def test_config_file_errors(tmp_path):
    assert main(["velocities", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("no equals sign here\n")
    assert main(["velocities", "--config", str(bad)]) == 2
    unknown = tmp_path / "unknown.cfg"
    unknown.write_text("chi = 64\n")  # chi means nothing to velocities
    assert main(["velocities", "--config", str(unknown)]) == 2


def test_validation_exit_codes():
    assert main(["shadow-norm", "--q", "2,3"]) == 2  # needs one q
    assert main(["shadow-norm", "--engine", "exact", "--k", "10", "--t-max", "10"]) == 2
    assert main(["shadow-norm", "--epsilon", "0.0"]) == 2
    assert main(["optimal-depth", "--k", "0,20"]) == 2
    assert main(["velocities", "--chi", "128"]) == 2  # inapplicable flag
    assert main(["crosscheck", "--trials", "ten"]) == 2
    with pytest.raises(SystemExit):  # argparse handles unknown choices
        main(["shadow-norm", "--engine", "tea-leaves"])


def test_bad_thread_env_is_a_validation_error(monkeypatch):
    monkeypatch.setenv("SHADOWS_NUM_THREADS", "many")
    assert main(["velocities", "--q", "2", "--epsilon", "1.0"]) == 2
    monkeypatch.setenv("SHADOWS_NUM_THREADS", "0")
    assert main(["velocities", "--q", "2", "--epsilon", "1.0"]) == 2


# ----------------------------------------------------------------------
# artifacts
# ----------------------------------------------------------------------

def _data_rows(path):
    rows = []
    for line in open(path):
        if line.startswith("#"):
            continue
        rows.append(line.rstrip("\n"))
    return rows[0], rows[1:]


def test_velocities_small_grid(tmp_path):
    out = tmp_path / "vel.csv"
    rc = main(["velocities", "--q", "2", "--epsilon", "0.5,1.0", "--out", str(out)])
    assert rc == 0
    text = out.read_text()
    assert text.startswith("# shadows velocities\n# config: ")
    assert text.count("PASS") == 3 and "FAIL" not in text
    header, rows = _data_rows(out)
    assert header == "q,epsilon,gamma,v_B,v_E,v_B_sp"
    assert len(rows) == 2
    # the clean-circuit row carries the closed-form values
    q, eps, gamma, v_b, v_e, v_sp = rows[1].split(",")
    assert float(eps) == 1.0
    assert abs(float(gamma) - 2 * math.log(5.0 / 4.0)) < 1e-3
    assert abs(float(v_b) - 0.6) < 1e-3


def test_rerun_is_byte_identical_and_hash_checks_out(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["velocities", "--q", "2", "--epsilon", "1.0"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    text_a, text_b = a.read_text(), b.read_text()
    # --out is part of the config echo; everything else must agree
    strip = lambda s: [l for l in s.splitlines() if not l.startswith("# config")]
    assert strip(text_a) == strip(text_b)
    assert main(argv + ["--out", str(b)]) == 0
    assert b.read_text() == text_b
    # the recorded hash re-derives from the body below the hash line
    lines = text_a.splitlines(keepends=True)
    assert lines[2].startswith("# content-hash: ")
    recorded = lines[2].split(": ", 1)[1].strip()
    assert content_hash("".join(lines[3:]).encode()) == recorded


def test_stdout_when_no_out_flag(capsys):
    assert main(["velocities", "--q", "2", "--epsilon", "1.0"]) == 0
    captured = capsys.readouterr().out
    assert captured.startswith("# shadows velocities")
    assert "q,epsilon,gamma" in captured


def test_exact_and_imps_engines_agree_through_cli(tmp_path):
    out = {}
    for engine in ("exact", "imps"):
        path = tmp_path / f"{engine}.csv"
        rc = main(
            ["shadow-norm", "--engine", engine, "--q", "2", "--epsilon", "0.8",
             "--k", "2,3,4", "--t-max", "3", "--out", str(path)]
        )
        assert rc == 0
        _, rows = _data_rows(path)
        out[engine] = {
            tuple(map(int, r.split(",")[3:5])): float(r.split(",")[5]) for r in rows
        }
    assert out["exact"].keys() == out["imps"].keys()
    for key, value in out["exact"].items():
        assert abs(value - out["imps"][key]) < 1e-6


def test_brownian_dilute_curve_is_monotone(tmp_path):
    out = tmp_path / "br.csv"
    rc = main(
        ["shadow-norm", "--engine", "brownian", "--q", "2", "--k", "10",
         "--t-max", "3", "--out", str(out)]
    )
    assert rc == 0
    _, rows = _data_rows(out)
    values = [float(r.split(",")[5]) for r in rows]
    assert values == sorted(values)  # k/n = 0.1: norm only grows


def test_meanfield_engine_emits_saddle_regime_only(tmp_path):
    out = tmp_path / "mf.json"
    rc = main(
        ["shadow-norm", "--engine", "meanfield", "--q", "2", "--epsilon", "1.0",
         "--k", "40", "--t-max", "12", "--format", "json", "--out", str(out)]
    )
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["engine"] == "meanfield"
    ts = [row["t"] for row in doc["rows"]]
    assert min(ts) >= 1 and max(ts) < 10  # k > 4t guard
    assert doc["content_hash"]


def test_json_format_carries_config_and_rows(tmp_path):
    out = tmp_path / "curve.json"
    rc = main(
        ["shadow-norm", "--engine", "exact", "--q", "2", "--k", "2",
         "--t-max", "2", "--format", "json", "--out", str(out)]
    )
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["command"] == "shadow-norm"
    assert doc["config"]["engine"] == "exact"
    assert doc["rows"][0] == {"k": 2, "t": 0, "log_shadow_norm_sq": 2 * math.log(3)}


# ----------------------------------------------------------------------
# depth fits
# ----------------------------------------------------------------------

def test_three_param_fit_recovers_planted_curve():
    a, b, c = 97.5, 1.47, 88.0
    k = np.array([20, 35, 60, 100, 180, 320, 560, 1000], dtype=float)
    t = a * (np.log(k) - b * np.log(np.log(k))) - c
    fit = fit_depth_three_param(k, t)
    assert abs(fit.a - a) < 1e-8
    assert abs(fit.b - b) < 1e-8
    assert abs(fit.c - c) < 1e-8
    assert fit.residual_rms < 1e-10
    assert bootstrap_b_error(k, t, n_boot=100, seed=1) < 1e-8


def test_pure_log_fit_and_nesting():
    k = np.array([20, 40, 80, 160, 320], dtype=float)
    t = 2.2 * np.log(k) - 3.0
    fit = fit_depth_pure_log(k, t)
    assert abs(fit.a - 2.2) < 1e-10 and abs(fit.c - 3.0) < 1e-10
    # on ln ln data the 3-parameter form must fit at least as well
    t_curved = 2.2 * (np.log(k) - 1.4 * np.log(np.log(k))) - 3.0
    assert (
        fit_depth_three_param(k, t_curved).residual_rms
        <= fit_depth_pure_log(k, t_curved).residual_rms + 1e-12
    )


def test_depth_fit_input_guards():
    with pytest.raises(ValueError):
        fit_depth_three_param([2, 3, 4, 5], [1, 2, 3, 4])  # ln ln k needs k > e
    with pytest.raises(ValueError):
        fit_depth_three_param([10, 20, 30], [1, 2, 3])  # too few points
    with pytest.raises(ValueError):
        fit_depth_pure_log([10, 20], [1, 2])


def test_derivative_diagnostic_shows_lnln_correction():
    a, b = 10.0, 1.5
    k = np.array([20, 40, 80, 160, 320, 640], dtype=float)
    t = a * (np.log(k) - b * np.log(np.log(k)))
    rows = depth_derivative_diagnostic(k, t)
    assert len(rows) == k.size - 1
    slopes = [s for _, _, s in rows]
    # slope climbs toward a from below as the correction dies off
    assert all(s2 > s1 for s1, s2 in zip(slopes, slopes[1:]))
    assert all(s < a for s in slopes)


def test_optimal_depth_command_end_to_end(tmp_path):
    out = tmp_path / "depth.json"
    rc = main(
        ["optimal-depth", "--q", "2", "--epsilon", "1.0",
         "--k", "20,30,45,67,100,150", "--t-max", "8", "--seed", "3",
         "--format", "json", "--out", str(out)]
    )
    assert rc == 0
    doc = json.loads(out.read_text())
    t_star = [row["t_star"] for row in doc["t_star"]]
    assert t_star == sorted(t_star) and t_star[0] >= 1
    # refined minima stay within half a layer of the integer argmin
    for row in doc["t_star"]:
        assert abs(row["t_star_refined"] - row["t_star"]) <= 0.5 + 1e-12
    three = doc["fit_three_param"]
    assert three["b_bootstrap_err"] > 0
    # leading coefficient lands near 1/gamma even on this short k range
    assert abs(three["a"]) < 3 * (1.0 / 0.4462871026284193)
    assert len(doc["derivative_diagnostic"]) == 5
    assert len(doc["curve_rows"]) == 6 * 9


def test_optimal_depth_checkpoints_resume(tmp_path):
    ckpt = tmp_path / "ckpt"
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"checkpoint_dir = {ckpt}\n")
    argv = ["optimal-depth", "--q", "2", "--epsilon", "1.0", "--k", "20,30,45,70",
            "--t-max", "5", "--config", str(cfg), "--out"]
    assert main(argv + [str(tmp_path / "first.csv")]) == 0
    saved = sorted(p.name for p in ckpt.iterdir())
    assert any(name.endswith(".json") for name in saved)
    assert len(saved) > 2
    # rerun resumes from the saved state and reproduces the artifact
    assert main(argv + [str(tmp_path / "second.csv")]) == 0
    first = (tmp_path / "first.csv").read_text()
    second = (tmp_path / "second.csv").read_text()
    strip = lambda s: [l for l in s.splitlines() if not l.startswith("# config")]
    assert strip(first) == strip(second)


# ----------------------------------------------------------------------
# crosscheck
# ----------------------------------------------------------------------

def test_crosscheck_suite_passes(tmp_path, monkeypatch):
    monkeypatch.setenv("SHADOWS_NUM_THREADS", "2")
    out = tmp_path / "cc.csv"
    rc = main(["crosscheck", "--trials", "30000", "--out", str(out)])
    assert rc == 0
    header, rows = _data_rows(out)
    assert header == "pair,point,delta,tol,status"
    assert len(rows) == 56
    assert all(row.endswith("PASS") for row in rows)
    pairs = {row.split('","')[0].lstrip('"') for row in rows}
    assert pairs == {
        "imps vs exact",
        "clifford vs exact",
        "walkers vs exact",
        "brownian vs closed form",
        "lattice2d strip vs walkers",
    }


def test_crosscheck_failure_exits_3(tmp_path, monkeypatch):
    def rigged(config):
        return [CheckResult("rigged pair", "the point", delta=1.0, tol=0.5)]

    monkeypatch.setattr(cli, "_CHECK_FAMILIES", (rigged,))
    out = tmp_path / "cc.csv"
    assert main(["crosscheck", "--out", str(out)]) == 3
    assert "FAIL" in out.read_text()
