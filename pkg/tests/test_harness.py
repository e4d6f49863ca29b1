import json
import math
import subprocess
import sys
import warnings

import numpy as np
import pytest

from multical_lab import config, experiments, harness
from multical_lab.cli import main
from multical_lab.core import ValidationError

SMALL = {
    "e1": dict(m=[8], properties=["mean"], trials=20, decode_trials=20),
    "e2": dict(m=[8], trials=20, n_max=2**18, repeats=1),
    "e3": dict(m=[8], T=[256, 1024], trials=20, bootstrap=50),
}


# ------------------------------------------------------------------ config


def test_defaults_and_validation():
    cfg = config.default_config("e3")
    assert cfg.T[0] == 1024 and cfg.T[-1] == 65536 and cfg.trials >= 30
    with pytest.raises(ValidationError):
        config.default_config("e4")
    with pytest.raises(ValidationError):
        config.default_config("e1", trials=5)


def test_seed_precedence(monkeypatch, tmp_path):
    monkeypatch.delenv("MCLAB_SEED", raising=False)
    assert config.resolve_seed(None, None) == 0
    monkeypatch.setenv("MCLAB_SEED", "7")
    assert config.resolve_seed(None, None) == 7
    assert config.resolve_seed(None, 3) == 3
    assert config.resolve_seed(5, 3) == 5
    path = tmp_path / "c.yaml"
    path.write_text("e1:\n  seed: 3\n  trials: 25\n")
    assert config.load_config(str(path), "e1").seed == 3
    assert config.load_config(str(path), "e1", seed_flag=9).seed == 9
    assert config.load_config(str(path), "e1").trials == 25


def test_flat_config_and_unknown_keys(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("m: [8]\ntrials: 21\n")
    cfg = config.load_config(str(path), "e2", output_dir="x")
    assert cfg.m == [8] and cfg.trials == 21 and cfg.output_dir == "x"
    path.write_text("e3:\n  trials: 22\n")
    assert config.load_config(str(path), "e1").trials == config.default_config("e1").trials
    assert config.load_config(str(path), "e3").trials == 22
    path.write_text("m: [8]\nbogus: 1\n")
    with pytest.raises(ValidationError, match="bogus"):
        config.load_config(str(path), "e2")


# ------------------------------------------------------------------ estimators


def test_wilson_lower():
    assert harness.wilson_lower(0, 0) == 0
    assert harness.wilson_lower(30, 30) > 0.9
    # the 80% two-sided interval's lower end is the one-sided 90% bound
    z = 1.2815515655446004
    n, k = 40, 30
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    assert harness.wilson_lower(k, n) == pytest.approx(centre - half, abs=1e-9)


def test_sample_complexity_trivial_targets():
    est = harness.estimate_sample_complexity(lambda n, j: True, [4, 8, 16], 20, target=0.0)
    assert est.n_hat == 4 and est.reached
    rng = np.random.default_rng(0)
    est = harness.estimate_sample_complexity(lambda n, j: bool(rng.random() < 0.5), [4, 8, 16], 20)
    assert est.n_hat == math.inf and not est.reached and len(est.curve) == 3
    with pytest.raises(ValidationError):
        harness.estimate_sample_complexity(lambda n, j: True, [8, 4], 20)


def test_sample_complexity_with_metric_targets():
    # success = metric <= eps; the metric is a noisy mean so it never exceeds 1
    def metric(n, j):
        return abs(np.random.default_rng(n * 1000 + j).binomial(n, 0.5) / n - 0.5)

    assert harness.estimate_sample_complexity(lambda n, j: metric(n, j) <= 1, [4, 8], 30).n_hat == 4
    assert not harness.estimate_sample_complexity(lambda n, j: metric(n, j) <= 0, [64, 256, 1024], 30).reached


def test_geometric_grid():
    g = harness.geometric_grid(256, 4096, 4)
    assert g[0] == 256 and g[-1] == 4096 and len(g) == 17
    assert all(b > a for a, b in zip(g, g[1:]))


def test_slope_exact_power_laws():
    Ts = [2**e for e in range(10, 18)]
    fit = harness.scaling_slope([(T, T ** (-1 / 3)) for T in Ts], bootstrap=0)
    assert fit.slope == pytest.approx(-1 / 3, abs=1e-12)
    fit = harness.scaling_slope([(T, 0.2) for T in Ts], bootstrap=0)
    assert fit.slope == pytest.approx(0, abs=1e-12)


def test_slope_bootstrap_interval_covers():
    rng = np.random.default_rng(1)
    Ts = [2**e for e in range(10, 18)]
    data = {T: list(T ** -0.5 * rng.lognormal(0, 0.1, 30)) for T in Ts}
    fit = harness.scaling_slope(data, bootstrap=300, seed=0)
    assert fit.ci_low <= -0.5 <= fit.ci_high
    assert fit.n_points == len(Ts)


def test_slope_warnings_and_errors():
    with pytest.warns(UserWarning, match="two decades"):
        harness.scaling_slope([(10, 1.0), (20, 0.5)], bootstrap=0)
    with pytest.raises(ValidationError):
        harness.scaling_slope([(10, 1.0)], bootstrap=0)
    with pytest.warns(UserWarning, match="nonpositive"):
        harness.scaling_slope({10: [0.0, 1.0], 10_000: [0.1], 100: [0.5], 1000: [0.3]}, bootstrap=0)


# ------------------------------------------------------------------ persistence


def test_csv_round_trip(tmp_path):
    text = harness.rows_to_csv([{"a": 1, "b": 0.1, "c": True}, {"a": 2, "d": "x"}])
    assert text.splitlines() == ["a,b,c,d", "1,0.1,1,", "2,,,x"]
    path = tmp_path / "t.csv"
    harness.atomic_write(str(path), text)
    assert harness.read_csv(str(path))[1]["d"] == "x"
    assert harness.rows_to_csv([], ("x", "y")) == "x,y\n"
    with pytest.raises(ValidationError):
        harness.rows_to_csv([])


def test_report():
    rows = [{"m": "8", "T": "1024", "mc": "0.1"}, {"m": "8", "T": "1024", "mc": "0.3"}, {"m": "16", "T": "1024", "mc": "0.5"}]
    out = harness.report(rows, {"m": "8"})
    lines = out.splitlines()
    assert len(lines) == 3 and "0.2" in lines[2]
    with pytest.raises(ValidationError):
        harness.report(rows, {"m": "99"})
    assert len(harness.report(rows[:1]).splitlines()) == 3


def test_run_result_validation():
    with pytest.raises(ValidationError):
        harness.RunResult("e3", 8, 10, 0, 0, mc=1.5)
    r = harness.RunResult("e3", 8, 10, 0, 0, mc=0.5, extra={"K": 3})
    assert r.row()["K"] == 3


def test_parallel_map_matches_serial():
    assert harness.parallel_map(abs, [-1, 2, -3], workers=2) == [1, 2, 3]


# ------------------------------------------------------------------ experiments


@pytest.mark.parametrize("name", ["e1", "e2", "e3"])
def test_reruns_are_byte_identical(name, tmp_path):
    outs = []
    for run in ("a", "b"):
        cfg = config.default_config(name, output_dir=str(tmp_path / run), **SMALL[name])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            outs.append(experiments.run_experiment(cfg))
    for fname, path in outs[0]["paths"].items():
        if fname.endswith(".csv"):
            with open(path, "rb") as a, open(outs[1]["paths"][fname], "rb") as b:
                assert a.read() == b.read(), fname


def test_e3_workers_do_not_change_results(tmp_path):
    rows = []
    for w in (1, 2):
        cfg = config.default_config("e3", output_dir=str(tmp_path / str(w)), workers=w, **SMALL["e3"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = experiments.run_experiment(cfg)
        with open(out["paths"]["trials.csv"], "rb") as fh:
            rows.append(fh.read())
    assert rows[0] == rows[1]


# ------------------------------------------------------------------ CLI


def test_cli_end_to_end(tmp_path, capsys):
    inst = tmp_path / "inst"
    assert main(["instance", "gen", "--m", "8", "--k-override", "16", "--theta", "3", "--seed", "1", "--out", str(inst)]) == 0
    for f in ("instance.json", "groups.json", "staircase.json", "signatures.json", "coefficients.json", "constants.json"):
        assert (inst / f).exists()
    learn = tmp_path / "learn"
    main(["learn", "run", "--instance", str(inst / "instance.json"), "--T", "2000",
          "--groups", str(inst / "groups.json"), "--seed", "0", "--out", str(learn)])
    capsys.readouterr()
    main(["metrics", "eval", "--instance", str(inst / "instance.json"), "--predictor", str(learn / "predictor.json"),
          "--groups", str(inst / "groups.json")])
    got = json.loads(capsys.readouterr().out)
    assert 0 <= got["mc"] <= 1 and "smc_lp_2" in got
    main(["decode", "run", "--staircase", str(inst / "staircase.json"), "--predictor", str(learn / "predictor.json")])
    got = json.loads(capsys.readouterr().out)
    assert got["true_index"] == 3
    main(["bounds", "report", "--K", "3", "--G", "4", "--T", "1000", "--p", "1"])
    got = json.loads(capsys.readouterr().out)
    assert got["azuma_term"] == pytest.approx(0.33302, abs=1e-5)
    main(["codes", "gen", "--kind", "lowcorr", "--n", "8", "--k", "40", "--rho", "0.75", "--seed", "0"])
    assert json.loads(capsys.readouterr().out)["realized_rho"] <= 0.75


def test_cli_experiment_and_report(tmp_path, capsys):
    cfg = tmp_path / "e3.yaml"
    cfg.write_text("e3:\n  T: [256, 1024]\n  trials: 20\n  bootstrap: 20\n")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        main(["experiment", "e3", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "res")])
    capsys.readouterr()
    assert json.loads((tmp_path / "res" / "e3" / "config.json").read_text())["seed"] == 4
    main(["report", str(tmp_path / "res" / "e3" / "trials.csv"), "--filter", "T=256"])
    out = capsys.readouterr().out
    assert "| 8 | 256 | 20 |" in out


def test_cli_entry_point():
    r = subprocess.run([sys.executable, "-m", "multical_lab.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "experiment" in r.stdout
