import json
import os

import numpy as np
import pytest

import mspde.models as models
from mspde.config import load_config, parse_config_text, parse_number
from mspde.errors import ConfigurationError, RunFailure
from mspde.experiments import (
    SimConfig,
    config_hash,
    emit_outputs,
    parse_rates_csv,
    recompute_fits,
    run_assumption_check,
    run_galerkin_convergence,
    run_strong_rate,
    run_weak_rate,
)
from mspde.integrators import SimOptions, simulate_bundle
from mspde.models import ReactionMap, linear_bench
from mspde.rngutil import substream


def tiny_config(**kw):
    base = dict(
        model="linear", model_params={"c": [1.0]}, n=4,
        epsilons=(2.0**-3, 2.0**-4, 2.0**-5), T=0.25, paths=16, seed=77,
        gammas=(0.0,), qs=(2,), n_outputs=9,
    )
    base.update(kw)
    return SimConfig(**base)


class TestConfigValidation:
    def test_single_epsilon_rejected_for_rate_runs(self):
        cfg = tiny_config(epsilons=(0.125,))
        with pytest.raises(ConfigurationError):
            run_strong_rate(cfg)

    def test_gamma_below_half_for_rate_runs(self):
        cfg = tiny_config(gammas=(0.6,))
        with pytest.raises(ConfigurationError):
            run_strong_rate(cfg)

    def test_epsilon_range(self):
        cfg = tiny_config(epsilons=(2.0, 1.0))
        with pytest.raises(ConfigurationError):
            cfg.validate()

    def test_hash_excludes_execution_fields(self):
        a = tiny_config(out_dir="x", threads=1)
        b = tiny_config(out_dir="y", threads=8)
        assert config_hash(a) == config_hash(b)
        c = tiny_config(seed=78)
        assert config_hash(a) != config_hash(c)


class TestStrongRate:
    def test_small_run_structure(self):
        rep = run_strong_rate(tiny_config())
        assert len(rep.rows) == 3
        fit = rep.fits["gamma=0,q=2"]
        assert np.isfinite(fit["slope"])
        for eps, q in rep.quarantined.items():
            assert q["quarantined"] + q["kept"] == q["total"]

    def test_determinism_byte_identical_csv(self, tmp_path):
        cfg = tiny_config()
        paths = []
        for sub in ("a", "b"):
            rep = run_strong_rate(cfg)
            out = emit_outputs(rep, str(tmp_path / sub), cfg)
            paths.append(out["rates"])
        assert open(paths[0], "rb").read() == open(paths[1], "rb").read()

    def test_quarantine_accounting_and_failure(self, monkeypatch):
        def leaky_bench(n, threshold=2.2, **kw):
            m = linear_bench(n, c=[1.0])
            inner = m.F.evaluate
            def evaluate(x, y):
                out = inner(x, y)
                bad = np.abs(y[..., :1]) > threshold
                return np.where(bad, np.nan, out)
            m.F = ReactionMap(evaluate=evaluate)
            return m
        monkeypatch.setitem(models._REGISTRY, "leaky", leaky_bench)
        # mild leak: a few paths quarantined, run still passes accounting
        cfg = tiny_config(model="leaky", model_params={"threshold": 3.2}, paths=64)
        rep = run_strong_rate(cfg)
        assert all(q["quarantined"] + q["kept"] == q["total"]
                   for q in rep.quarantined.values())
        # heavy leak: more than 5% of paths -> hard failure
        cfg_bad = tiny_config(model="leaky", model_params={"threshold": 1.2}, paths=64)
        with pytest.raises(RunFailure):
            run_strong_rate(cfg_bad)


class TestEmission:
    def test_round_trip_slope_recomputation(self, tmp_path):
        cfg = tiny_config()
        rep = run_strong_rate(cfg)
        out = emit_outputs(rep, str(tmp_path), cfg)
        meta, rows = parse_rates_csv(out["rates"])
        assert f"config={config_hash(cfg)}" in meta
        refits = recompute_fits(rows)
        slopes = json.load(open(out["slopes"]))
        got = slopes["experiments"]["strong"]["fits"]["gamma=0,q=2"]["slope"]
        assert refits["strong|gamma=0,q=2"]["slope"] == pytest.approx(got, abs=1e-12)

    def test_empty_reports_give_headers_only(self, tmp_path):
        cfg = tiny_config()
        out = emit_outputs([], str(tmp_path), cfg)
        lines = open(out["rates"]).read().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("experiment,epsilon,gamma")

    def test_trajectories_schema(self, tmp_path):
        cfg = tiny_config()
        m = cfg.build()
        bundle = simulate_bundle(m, 0.25, 0.25, 2.0**-6, substream(1, "t"),
                                 SimOptions(n_outputs=5))
        out = emit_outputs([], str(tmp_path), cfg, bundle=bundle)
        lines = open(out["trajectories"]).read().splitlines()
        assert lines[1] == "time,mode,value,series"
        assert any(l.endswith(",averaged") for l in lines[2:])
        # 3 series x 5 output times x 4 modes
        assert len(lines) == 2 + 3 * 5 * 4

    def test_synthetic_power_law_recovered_exactly(self):
        rows = [
            {"experiment": "synthetic", "epsilon": e, "gamma": 0.0, "q": 2.0,
             "error": 3.0 * e**0.5, "stderr": 0.0, "n": 4, "paths": 1, "seed": 0}
            for e in (0.5, 0.25, 0.125, 0.0625)
        ]
        fits = recompute_fits(rows)
        assert fits["synthetic|gamma=0,q=2"]["slope"] == pytest.approx(0.5, abs=1e-10)


class TestWeakRateHarness:
    def test_inconclusive_flagged_not_failed(self):
        # wide path noise, few paths: the signal sits below the noise floor
        cfg = tiny_config(model_params={"c": [2.0]}, paths=16,
                          epsilons=(2.0**-5, 2.0**-6), phis=("phi2",))
        rep = run_weak_rate(cfg)
        assert rep.status == "inconclusive"
        assert rep.fits["phi=phi2"]["status"] == "inconclusive"
        assert rep.rows

    def test_constant_functional_skipped(self):
        cfg = tiny_config(model_params={"c": []}, phis=("phi2",))
        rep = run_weak_rate(cfg)   # c = 0: Z and Zbar both identically zero
        fit = rep.fits["phi=phi2"]
        assert fit["status"] in ("skipped",)

    def test_se_shrinks_with_more_paths(self):
        cfg_small = tiny_config(model_params={"c": [2.0]}, paths=128, phis=("phi2",),
                                epsilons=(2.0**-3, 2.0**-4))
        cfg_big = tiny_config(model_params={"c": [2.0]}, paths=512, phis=("phi2",),
                              epsilons=(2.0**-3, 2.0**-4))
        se_small = np.mean([r["stderr"] for r in run_weak_rate(cfg_small).rows])
        se_big = np.mean([r["stderr"] for r in run_weak_rate(cfg_big).rows])
        # doubling M twice halves the standard error within 30%
        assert se_small / se_big == pytest.approx(2.0, rel=0.3)


class TestGalerkin:
    def test_finite_rank_linear_exact_zero(self):
        cfg = tiny_config(model_params={"c": [1.0]}, n_list=(2, 4), paths=8,
                          galerkin_epsilon=2.0**-3, gammas=(0.0, 0.25))
        rep = run_galerkin_convergence(cfg)
        for row in rep.rows:
            assert row["error"] <= 1e-12

    def test_nemytskii_monotone(self):
        cfg = SimConfig(model="nemytskii", model_params={}, n=4,
                        epsilons=(2.0**-3,), T=0.5, paths=24, seed=5,
                        gammas=(0.0,), qs=(2,), n_list=(4, 8),
                        galerkin_epsilon=2.0**-3)
        rep = run_galerkin_convergence(cfg)
        slow = [r for r in rep.rows if r["experiment"] == "galerkin-slow"
                and r["gamma"] == 0.0]
        errs = {r["n"]: r["error"] for r in slow}
        assert errs[4] > errs[8] > 0


class TestAssumptionCheck:
    def test_reference_setup_report(self):
        cfg = tiny_config(epsilons=(2.0**-2, 2.0**-4, 2.0**-6), paths=32)
        rep = run_assumption_check(cfg)
        assert all(rep["trace"]["converged"].values())
        assert rep["trace"]["upsilon_warn"]           # reported, never blocking
        assert rep["growth"]["F_ok"]
        assert rep["moments"]["within_20pct"]
        json.dumps(rep, default=str)                   # serializable

    def test_harmonic_noise_flagged(self):
        from mspde.spectral import check_trace_conditions, power_law_noise, reference_spectra
        opA, opB, _, q2 = reference_spectra(64)
        rep = check_trace_conditions(opA, opB, power_law_noise(64, -1.0), q2)
        assert not rep.converged["tr_Aq1"]


class TestConfigFile:
    GOOD = """
# benchmark run
[model]
name = linear
c = 2, 0.5
[run]
n = 8
epsilons = 2^-3, 2^-4, 2^-5
T = 1.0
dt = default
gammas = 0, 0.25
qs = 2
paths = 64
seed = 99
[output]
dir = results
"""

    def test_parse_and_load(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(self.GOOD)
        cfg = load_config(str(p))
        assert cfg.model == "linear"
        assert cfg.model_params["c"] == (2.0, 0.5)
        assert cfg.epsilons == (0.125, 0.0625, 0.03125)
        assert cfg.paths == 64 and cfg.seed == 99
        assert cfg.out_dir == "results"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown key"):
            parse_config_text("[run]\nnn = 8\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown section"):
            parse_config_text("[runs]\nn = 8\n")

    def test_key_before_section_rejected(self):
        with pytest.raises(ConfigurationError, match="before any"):
            parse_config_text("n = 8\n")

    def test_dyadic_shorthand(self):
        assert parse_number("2^-6") == 2.0**-6
        assert parse_number("0.5") == 0.5

    def test_cli_overrides_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(self.GOOD)
        cfg = load_config(str(p), {"seed": 123, "out_dir": "elsewhere"})
        assert cfg.seed == 123 and cfg.out_dir == "elsewhere"

    def test_profile_defaults(self):
        cfg = load_config(None, {"profile": "full"})
        assert cfg.paths == 1024


class TestCli:
    def test_rates_strong_exit_codes_and_files(self, tmp_path):
        from mspde.cli import main
        p = tmp_path / "run.cfg"
        p.write_text(
            "[model]\nname = linear\nc = 1\n"
            "[run]\nn = 4\nepsilons = 2^-3, 2^-4, 2^-5\nT = 0.25\npaths = 24\nseed = 7\n"
            "gammas = 0\nqs = 2\n"
            f"[output]\ndir = {tmp_path}/out\n"
        )
        code = main(["rates-strong", "--config", str(p)])
        assert code in (0, 1)  # slope window at this tiny budget may miss
        assert (tmp_path / "out" / "rates.csv").exists()
        assert (tmp_path / "out" / "slopes.json").exists()

    def test_bad_config_exit_one(self, tmp_path):
        from mspde.cli import main
        p = tmp_path / "bad.cfg"
        p.write_text("[run]\nbogus = 1\n")
        assert main(["check", "--config", str(p)]) == 1

    def test_simulate_writes_trajectories(self, tmp_path):
        from mspde.cli import main
        code = main(["simulate", "--out", str(tmp_path / "sim"), "--seed", "3"])
        assert code == 0
        assert (tmp_path / "sim" / "trajectories.csv").exists()

    def test_version_flag(self, capsys):
        from mspde.cli import build_parser
        with pytest.raises(SystemExit):
            build_parser().parse_args(["--version"])
        assert "mspde" in capsys.readouterr().out
