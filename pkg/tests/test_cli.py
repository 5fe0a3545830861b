import json
import shutil

import numpy as np
import pandas as pd
import pytest

from panelvar import cli
from panelvar.model import PanelVarModel
from panelvar.sampler import PosteriorDraws

SAMPLER = {"chains": 2, "warmup": 120, "iterations": 60}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="session")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    cfg = d / "sim.json"
    cfg.write_text(json.dumps({"simulate": {"countries": 4, "weeks": 20},
                               "model": {"npi_names": ["C1", "C2"]},
                               "sampler": SAMPLER}))
    assert run("simulate", "--config", cfg, "--out", d / "data", "--seed", 3) == 0
    return d / "data"


@pytest.fixture(scope="session")
def fit_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit") / "run"
    assert run("fit", "--config", sim_dir / "config.json", "--data", sim_dir, "--out", out,
               "--seed", 1, "--threads", 1) == 0
    return out


def test_simulate_writes_inputs_and_manifest(sim_dir):
    for name in ("responses.csv", "npi.csv", "vaccination.csv", "variants.csv",
                 "characteristics.csv", "truth.json", "config.json", "manifest.json"):
        assert (sim_dir / name).exists(), name
    man = json.loads((sim_dir / "manifest.json").read_text())
    assert man["subcommand"] == "simulate" and man["seed"] == 3


def test_fit_outputs(fit_dir):
    for name in ("draws.csv", "telemetry.json", "summary.csv", "coefficients.svg",
                 "diagnostics.json", "manifest.json", "panel.json", "fit_config.json"):
        assert (fit_dir / name).exists(), name
    summary = pd.read_csv(fit_dir / "summary.csv")
    run_ = cli.FittedRun(fit_dir)
    assert len(summary) == PanelVarModel(run_.data, run_.spec).dim
    assert list(summary.columns) == ["name", "mean", "sd", "cri_low", "cri_high", "rhat",
                                     "rel_ess"]
    man = json.loads((fit_dir / "manifest.json").read_text())
    assert man["seed"] == 1 and len(man["config_hash"]) == 64
    assert all(len(v) == 64 for v in man["inputs"].values())


def test_fit_rerun_is_byte_identical(fit_dir, sim_dir, tmp_path):
    out = tmp_path / "again"
    assert run("fit", "--config", sim_dir / "config.json", "--data", sim_dir, "--out", out,
               "--seed", 1, "--threads", 2) == 0
    assert (out / "summary.csv").read_bytes() == (fit_dir / "summary.csv").read_bytes()
    assert (out / "draws.csv").read_bytes() == (fit_dir / "draws.csv").read_bytes()


def test_broken_gradient_exits_sampling_error(sim_dir, tmp_path, monkeypatch):
    original = PanelVarModel.logp_and_grad

    def broken(self, u):
        lp, g = original(self, u)
        return lp, 2.0 * g + 1.0

    monkeypatch.setattr(PanelVarModel, "logp_and_grad", broken)
    assert run("fit", "--config", sim_dir / "config.json", "--data", sim_dir,
               "--out", tmp_path / "bad", "--seed", 1, "--threads", 1, "--strict") == 3


def test_missing_prerequisites_exit_2(tmp_path, capfd):
    assert run("irf", "--fit", tmp_path / "nowhere", "--out", tmp_path / "o") == 2
    assert str(tmp_path / "nowhere" / "draws.csv") in capfd.readouterr().err
    assert not (tmp_path / "o").exists()
    assert run("irf", "--out", tmp_path / "o") == 2
    assert run("fit", "--data", tmp_path / "nodata", "--out", tmp_path / "o", "--seed", 1) == 2


def test_seed_required_for_fit(tmp_path):
    with pytest.raises(SystemExit):
        run("fit", "--out", tmp_path / "o")


def test_bad_data_exit_2(sim_dir, tmp_path):
    bad = tmp_path / "bad"
    shutil.copytree(sim_dir, bad)
    (bad / "variants.csv").unlink()
    assert run("fit", "--config", sim_dir / "config.json", "--data", bad,
               "--out", tmp_path / "o", "--seed", 1) == 2


def test_unknown_config_section_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"smapler": {}}))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o", "--seed", 1) == 2


def test_irf_outputs(fit_dir, tmp_path):
    assert run("irf", "--fit", fit_dir, "--out", tmp_path) == 0
    tab = pd.read_csv(tmp_path / "irf.csv")
    assert set(tab["kind"]) == {"OIRF", "GIRF"}
    assert len(tab) == 2 * 21 * 16
    assert (tmp_path / "irf_oirf.svg").exists() and (tmp_path / "irf_girf.svg").exists()
    h0 = tab[(tab.kind == "OIRF") & (tab.horizon == 0)]
    order = ["log_r", "log_ed", "d_gdp", "d_transit"]
    upper = h0[h0.apply(lambda r: order.index(r.shock) > order.index(r.response), axis=1)]
    assert (upper["mean"] == 0).all()


def test_irf_single_draw_collapses_bands(fit_dir, tmp_path):
    one = tmp_path / "one"
    one.mkdir()
    d = PosteriorDraws.load(fit_dir)
    single = PosteriorDraws(draws=d.draws[:1, :1], names=d.names, divergences=d.divergences[:1],
                            treedepth=d.treedepth[:1, :1], step_sizes=d.step_sizes[:1],
                            inv_metric=d.inv_metric[:1], accept_stat=d.accept_stat[:1, :1],
                            n_leapfrog=d.n_leapfrog[:1, :1])
    single.save(one)
    for name in ("panel.json", "fit_config.json"):
        shutil.copy(fit_dir / name, one / name)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"irf": {"horizon": 6, "kinds": ["OIRF"]}}))
    assert run("irf", "--fit", one, "--config", cfg, "--out", tmp_path / "o") == 0
    tab = pd.read_csv(tmp_path / "o" / "irf.csv")
    assert len(tab) == 7 * 16
    np.testing.assert_array_equal(tab["cri_low"], tab["mean"])
    np.testing.assert_array_equal(tab["cri_high"], tab["mean"])
    assert (tmp_path / "o" / "irf_oirf.svg").read_text().lstrip().startswith("<?xml")


def test_loo_exclude_all(fit_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"loo": {"exclusions": "all"}}))
    assert run("loo", "--fit", fit_dir, "--config", cfg, "--out", tmp_path / "o",
               "--threads", 1) == 0
    tab = pd.read_csv(tmp_path / "o" / "elpd_diff.csv")
    assert list(tab["model"]) == ["full", "all"]
    assert list(tab.columns) == ["model", "diff", "se", "cri_low", "cri_high"]
    row = tab.iloc[1]
    assert row.cri_low == pytest.approx(row["diff"] - 2 * row.se)
    loo = json.loads((tmp_path / "o" / "loo.json").read_text())
    assert {"elpd", "se", "k_summary"} <= set(loo)


def test_forecast_outputs(fit_dir, tmp_path):
    assert run("forecast", "--fit", fit_dir, "--out", tmp_path) == 0
    rm = pd.read_csv(tmp_path / "forecast_rmse.csv", index_col=0)
    assert list(rm.index) == ["log_r", "log_ed", "d_gdp", "d_transit"]
    np.testing.assert_allclose(rm["reduction"], 1 - rm["rmse_model"] / rm["rmse_naive"])
    assert (tmp_path / "forecast_scatter.svg").exists()


def test_posthoc_outputs(fit_dir, sim_dir, tmp_path):
    assert run("posthoc", "--fit", fit_dir, "--data", sim_dir, "--out", tmp_path,
               "--seed", 0) == 0
    cor = pd.read_csv(tmp_path / "correlations.csv")
    assert (cor["kind"] == "intercepts").sum() == 6
    assert (cor["kind"] == "characteristic").sum() == 4 * 5
    assert cor["mean"].abs().max() <= 1.0
    clusters = pd.read_csv(tmp_path / "clusters.csv")
    assert len(clusters) == 4
    assert (tmp_path / "pca_loadings.csv").exists()


def test_posthoc_is_idempotent(fit_dir, sim_dir, tmp_path):
    for sub in ("a", "b"):
        assert run("posthoc", "--fit", fit_dir, "--data", sim_dir, "--out", tmp_path / sub,
                   "--seed", 0) == 0
    for name in ("correlations.csv", "clusters.csv", "pca_loadings.csv", "clusters.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sensitivity_writes_per_country(sim_dir, tmp_path):
    cfg = tmp_path / "c.json"
    c = json.loads((sim_dir / "config.json").read_text())
    c["sampler"] = {"chains": 1, "warmup": 40, "iterations": 20}
    cfg.write_text(json.dumps(c))
    assert run("sensitivity", "--config", cfg, "--data", sim_dir, "--out", tmp_path / "o",
               "--seed", 2, "--threads", 2) == 0
    dirs = sorted(p.name for p in (tmp_path / "o" / "loco").iterdir())
    assert dirs == ["S01", "S02", "S03", "S04"]
