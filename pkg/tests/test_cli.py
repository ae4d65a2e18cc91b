"""Tests for the batch command-line interface."""

import json
import os

import numpy as np
import pytest

from gcreg import cli, sampler, simulate
from gcreg.errors import NumericError

SCEN_TOML = """\
[scenario]
name = "toy"
n = 30
p = 5
pi1 = 0.5
pi2 = 0.9
coef_mean = [1.0, 0.5]
coef_var = [1.0, 0.2]
replicates = 2
seed = 3

[[scenario.responses]]
kind = "gaussian"
variance = 2.0

[[scenario.responses]]
kind = "bernoulli-probit"
"""

FIT_TOML = """\
[data]
responses = "Y.csv"
predictors = "X.csv"

[model]
families = ["gaussian", "bernoulli-probit"]

[prior]
expected_size = 2.0
size_variance = 2.0

[chain]
iterations = 240
burnin = 80
thin = 4
seed = 1

[output]
dir = "fit_default_out"
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Simulated replicates plus config files, shared by the fast tests."""
    root = tmp_path_factory.mktemp("cli")
    (root / "scen.toml").write_text(SCEN_TOML)
    (root / "fit.toml").write_text(FIT_TOML)
    rc = cli.main(["simulate", "--config", str(root / "scen.toml"),
                   "--out", str(root / "sim")])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def fitdir(workdir):
    out = workdir / "fit0"
    rc = cli.main(["fit", "--config", str(workdir / "fit.toml"),
                   "--data-dir", str(workdir / "sim" / "rep000"),
                   "--out", str(out)])
    assert rc == 0
    return out


# ---------------------------------------------------------------------------
# simulate


def test_simulate_preset_writes_replicates(tmp_path):
    rc = cli.main(["simulate", "--scenario", "I", "--replicates", "2",
                   "--seed", "7", "--out", str(tmp_path / "sI")])
    assert rc == 0
    for rep in ("rep000", "rep001"):
        for name in ("Y.csv", "X.csv", "truth.json"):
            assert (tmp_path / "sI" / rep / name).exists()
    manifest = json.loads((tmp_path / "sI" / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["scenario"]["name"] == "I"
    assert "config_hash" in manifest and "git_describe" in manifest


def test_simulate_identical_bytes_on_repeat(tmp_path):
    args = ["simulate", "--scenario", "III", "--replicates", "1", "--seed", "5"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    for sub in ("manifest.json", "scenario.json", "rep000/Y.csv",
                "rep000/X.csv", "rep000/truth.json"):
        a = (tmp_path / "a" / sub).read_bytes()
        b = (tmp_path / "b" / sub).read_bytes()
        assert a == b, sub


def test_simulate_zero_replicates_is_config_error(tmp_path):
    rc = cli.main(["simulate", "--scenario", "I", "--replicates", "0",
                   "--out", str(tmp_path / "x")])
    assert rc == 2


def test_simulate_unknown_scenario(tmp_path):
    rc = cli.main(["simulate", "--scenario", "VII", "--out", str(tmp_path / "x")])
    assert rc == 2


def test_simulate_requires_exactly_one_source(tmp_path):
    assert cli.main(["simulate", "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["simulate", "--scenario", "I", "--config", "s.toml",
                     "--out", str(tmp_path / "x")]) == 2


def test_simulate_custom_config(workdir):
    scen = json.loads((workdir / "sim" / "scenario.json").read_text())
    assert scen["n"] == 30 and scen["p"] == 5
    assert [r["kind"] for r in scen["responses"]] == ["gaussian",
                                                      "bernoulli-probit"]


# ---------------------------------------------------------------------------
# fit


def test_fit_writes_trace_and_manifest(fitdir):
    assert (fitdir / "chain00" / "gamma.csv").exists()
    manifest = json.loads((fitdir / "manifest.json").read_text())
    assert manifest["chains"] == ["chain00"]
    assert manifest["seed"] == 1
    assert "config_hash" in manifest and "git_describe" in manifest
    assert manifest["confounders"][0] == [1, 0, 0, 0, 0, 0]

    chain_meta = json.loads((fitdir / "chain00" / "manifest.json").read_text())
    assert chain_meta["n_draws"] == 40


def test_fit_missing_response_file(workdir, tmp_path):
    rc = cli.main(["fit", "--config", str(workdir / "fit.toml"),
                   "--data-dir", str(tmp_path),      # empty dir
                   "--out", str(tmp_path / "out")])
    assert rc == 3


def test_fit_invalid_toml(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[data\nresponses=")
    rc = cli.main(["fit", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_fit_unknown_config_key(workdir, tmp_path):
    cfg = tmp_path / "typo.toml"
    cfg.write_text(FIT_TOML.replace("thin = 4", "thinning = 4"))
    rc = cli.main(["fit", "--config", str(cfg),
                   "--data-dir", str(workdir / "sim" / "rep000"),
                   "--out", str(tmp_path / "o")])
    assert rc == 2


def test_fit_unknown_family(workdir, tmp_path):
    cfg = tmp_path / "fam.toml"
    cfg.write_text(FIT_TOML.replace('"bernoulli-probit"', '"poisson"'))
    rc = cli.main(["fit", "--config", str(cfg),
                   "--data-dir", str(workdir / "sim" / "rep000"),
                   "--out", str(tmp_path / "o")])
    assert rc == 2


def test_fit_family_support_mismatch(workdir, tmp_path):
    ## Bernoulli family pointed at the continuous response column
    cfg = tmp_path / "swap.toml"
    cfg.write_text(FIT_TOML.replace(
        'families = ["gaussian", "bernoulli-probit"]',
        'families = ["bernoulli-probit", "gaussian"]'))
    rc = cli.main(["fit", "--config", str(cfg),
                   "--data-dir", str(workdir / "sim" / "rep000"),
                   "--out", str(tmp_path / "o")])
    assert rc == 3


def test_fit_numeric_abort_maps_to_exit_4(workdir, tmp_path, monkeypatch):
    def boom(*a, **kw):
        raise NumericError("synthetic abort")

    monkeypatch.setattr(cli, "run_chain", boom)
    rc = cli.main(["fit", "--config", str(workdir / "fit.toml"),
                   "--data-dir", str(workdir / "sim" / "rep000"),
                   "--out", str(tmp_path / "o")])
    assert rc == 4


def test_fit_multiple_chains(workdir, tmp_path):
    out = tmp_path / "multi"
    rc = cli.main(["fit", "--config", str(workdir / "fit.toml"),
                   "--data-dir", str(workdir / "sim" / "rep000"),
                   "--chains", "2", "--iters", "160", "--burnin", "60",
                   "--out", str(out)])
    assert rc == 0
    meta0 = json.loads((out / "chain00" / "manifest.json").read_text())
    meta1 = json.loads((out / "chain01" / "manifest.json").read_text())
    assert meta0["seed"] != meta1["seed"]
    g0 = np.loadtxt(out / "chain00" / "gamma.csv", delimiter=",", skiprows=1)
    g1 = np.loadtxt(out / "chain01" / "gamma.csv", delimiter=",", skiprows=1)
    assert g0.shape == g1.shape
    assert not np.array_equal(g0, g1)


def test_chain_defaults_without_section():
    config = cli._build_chain_config({}, {"iterations": None, "burnin": None,
                                          "thin": None, "seed": None})
    assert (config.iterations, config.burnin, config.thin) == (30000, 10000, 20)


# ---------------------------------------------------------------------------
# report


def test_report_without_truth(fitdir, tmp_path):
    out = tmp_path / "rep"
    rc = cli.main(["report", str(fitdir), "--out", str(out)])
    assert rc == 0
    for name in ("report.json", "mppi.csv", "eppi.csv", "summary.csv"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert "auc" not in report
    assert report["n_draws"] == 40

    mppi = np.loadtxt(out / "mppi.csv", delimiter=",", skiprows=1)
    assert mppi.shape == (6, 2)
    assert np.all((mppi >= 0.0) & (mppi <= 1.0))
    np.testing.assert_allclose(mppi[0], 1.0)     # intercept row


def test_report_with_truth(workdir, fitdir, tmp_path):
    out = tmp_path / "rep"
    rc = cli.main(["report", str(fitdir),
                   "--truth", str(workdir / "sim" / "rep000" / "truth.json"),
                   "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["auc"]) == 2
    for a in report["auc"]:
        assert a is None or 0.0 <= a <= 1.0
    assert len(report["mean_interval_score"]) == 2
    truth = simulate.load_truth(workdir / "sim" / "rep000")
    for k in range(2):
        tk = truth["gamma"][:, k]
        if tk.any() and not tk.all():
            assert (out / f"roc{k}.csv").exists()


def test_report_deterministic_across_identical_fits(workdir, tmp_path):
    reports = []
    for tag in ("a", "b"):
        fit_out = tmp_path / f"fit_{tag}"
        rc = cli.main(["fit", "--config", str(workdir / "fit.toml"),
                       "--data-dir", str(workdir / "sim" / "rep000"),
                       "--out", str(fit_out)])
        assert rc == 0
        rep_out = tmp_path / f"rep_{tag}"
        rc = cli.main(["report", str(fit_out),
                       "--truth", str(workdir / "sim" / "rep000" / "truth.json"),
                       "--out", str(rep_out)])
        assert rc == 0
        reports.append((rep_out / "report.json").read_bytes())
    assert reports[0] == reports[1]


def test_report_missing_trace(tmp_path):
    rc = cli.main(["report", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
    assert rc == 3


def test_report_pools_chains(workdir, tmp_path):
    out = tmp_path / "multi"
    assert cli.main(["fit", "--config", str(workdir / "fit.toml"),
                     "--data-dir", str(workdir / "sim" / "rep000"),
                     "--chains", "2", "--iters", "160", "--burnin", "60",
                     "--out", str(out)]) == 0
    rep_out = tmp_path / "rep"
    assert cli.main(["report", str(out), "--out", str(rep_out)]) == 0
    report = json.loads((rep_out / "report.json").read_text())
    assert report["n_draws"] == 2 * 25
    assert len(report["sources"]) == 2


def test_main_requires_subcommand():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# trace round trip


def test_load_trace_round_trip(fitdir):
    tr = sampler.load_trace(fitdir / "chain00")
    assert tr.n_draws == 40
    assert len(tr.gamma) == 2
    assert tr.gamma[0].shape == (40, 6)
    assert tr.pairs == [(0, 1)]
    assert tr.corr.shape == (40, 1)
    assert tr.loglik.shape == (40, 30)
    assert set(np.unique(tr.gamma[0])) <= {0.0, 1.0}
    assert tr.meta["seed"] == 1
