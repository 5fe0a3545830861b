import math
import warnings

import numpy as np
import pandas as pd
import pytest

from conftest import small_panel
from panelvar.dataset import (
    DEFAULT_NPIS, DataConfig, DataError, DataWarning, PanelDataset, build_npi_features,
    build_variant_dummies, compute_trend_growth, downsample_weekly, impute_border_weighted,
    load_characteristics, load_panel, read_input_csv, transform_excess_deaths, transform_gdp,
    transform_transit,
)
from panelvar.synth import default_truth, simulate_panel, synthetic_characteristics, write_panel_csv

MONDAY = pd.Timestamp("2020-03-02")


def daily(values, start=MONDAY):
    return pd.Series(np.asarray(values, dtype=float),
                     index=pd.date_range(start, periods=len(values), freq="D"))


# -- GDP -------------------------------------------------------------------

def test_transform_gdp_examples():
    np.testing.assert_allclose(transform_gdp([100, 101], 0.1), [0.09])
    np.testing.assert_array_equal(transform_gdp([100, 100], 0.0), [0.0])
    with pytest.raises(DataError):
        transform_gdp([100], 0.0)
    with pytest.raises(DataError):
        transform_gdp([100, np.nan, 101], 0.0)


def test_gdp_series_alignment():
    s = pd.Series([100.0, 101.0, 103.0], index=pd.date_range(MONDAY, periods=3, freq="7D"))
    out = transform_gdp(s, 0.0)
    assert list(out.index) == list(s.index[1:])
    np.testing.assert_allclose(out.to_numpy(), [0.1, 0.2])


def test_trend_growth_and_detrending_round_trip():
    assert compute_trend_growth(0.3 * np.arange(60)) == pytest.approx(0.3)
    assert compute_trend_growth(np.full(60, 7.0)) == 0.0
    with pytest.raises(DataError):
        compute_trend_growth(np.arange(51.0))
    weeks = pd.date_range("2016-01-04", "2021-12-27", freq="7D")
    gdp = pd.Series(100 + 0.2 * np.arange(len(weeks)), index=weeks)
    g = compute_trend_growth(gdp, "2016-01-01", "2019-12-31")
    assert g == pytest.approx(0.2, abs=1e-12)
    np.testing.assert_allclose(transform_gdp(gdp.loc["2020":], g).to_numpy(), 0.0, atol=1e-12)


def test_trend_growth_noisy_slope():
    rng = np.random.default_rng(0)
    x = 0.25 * np.arange(208) + rng.normal(0, 0.5, 208)
    expected = sum(x[i + 1] - x[i] for i in range(207)) / 207
    assert compute_trend_growth(x) == pytest.approx(expected, rel=1e-12)
    assert abs(compute_trend_growth(x) - 0.25) < 3 * 0.5 * math.sqrt(2) / 207 * 3


# -- transit ---------------------------------------------------------------

def test_transit_constant_is_zero():
    out = transform_transit(daily(np.zeros(35)))
    assert len(out) == 4
    np.testing.assert_array_equal(out.to_numpy(), 0.0)


def test_transit_step_matches_hand_rolled_average():
    values = [0.0] * 10 + [-70.0] * 25
    out = transform_transit(daily(values))
    # oracle: trailing 7-day mean read on each Sunday, then weekly difference / 100
    sundays = [i for i in range(len(values)) if i % 7 == 6]
    level = [sum(values[i - 6:i + 1]) / 7 for i in sundays]
    expected = [(level[k] - level[k - 1]) / 100 for k in range(1, len(level))]
    np.testing.assert_allclose(out.to_numpy(), expected, atol=1e-15)
    assert out.sum() == pytest.approx(-0.70)
    # a mid-week step is split across the two Sunday readings that straddle it
    np.testing.assert_allclose(out.to_numpy(), [-0.4, -0.3, 0.0, 0.0], atol=1e-15)


def test_transit_single_missing_day_is_interpolated():
    s = daily(np.full(28, 12.5))
    s.iloc[9] = np.nan
    np.testing.assert_array_equal(transform_transit(s).to_numpy(), 0.0)


def test_transit_long_gap_raises():
    s = daily(np.arange(40.0))
    s.iloc[10:18] = np.nan
    with pytest.raises(DataError, match="gap of 8 days"):
        transform_transit(s)


# -- excess deaths ------------------------------------------------------------

def test_excess_death_examples():
    assert transform_excess_deaths([0.0], 0)[0] == 0.0
    assert transform_excess_deaths([math.e - 1], 0)[0] == pytest.approx(1.0, abs=1e-15)
    vals = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    np.testing.assert_allclose(transform_excess_deaths(vals, 3), np.log1p([0.4, 0.5]))
    with pytest.raises(DataError, match="week"):
        transform_excess_deaths(pd.Series([0.1, -1.0],
                                          index=pd.date_range(MONDAY, periods=2, freq="7D")), 0)


def test_excess_death_inverse_round_trip():
    x = np.random.default_rng(1).uniform(-0.9, 50, 200)
    back = np.expm1(transform_excess_deaths(x, 0))
    np.testing.assert_allclose(back, x, rtol=1e-12)


# -- NPIs ---------------------------------------------------------------------

def test_npi_constant_level():
    lv = pd.DataFrame({"C1": np.full(28, 2.0)}, index=pd.date_range(MONDAY, periods=28))
    x, dx = build_npi_features(lv, ["C1"])
    assert np.isnan(x["C1"].iloc[0])
    np.testing.assert_array_equal(x["C1"].iloc[1:], 2.0)
    np.testing.assert_array_equal(dx["C1"].iloc[2:], 0.0)


def test_npi_step_appears_once_at_lagged_position():
    vals = [0.0] * 14 + [3.0] * 21
    lv = pd.DataFrame({"C2": vals}, index=pd.date_range(MONDAY, periods=35))
    x, dx = build_npi_features(lv, ["C2"])
    chg = dx["C2"].to_numpy()
    assert np.nansum(chg) == 3.0 and np.count_nonzero(np.nan_to_num(chg)) == 1
    assert chg[3] == 3.0            # step in week 2, seen one week later
    lvl = x["C2"].to_numpy()
    np.testing.assert_array_equal(chg[2:], lvl[2:] - lvl[1:-1])


def test_npi_nine_default_columns_and_range_check():
    idx = pd.date_range(MONDAY, periods=21)
    lv = pd.DataFrame({k: np.ones(21) for k in DEFAULT_NPIS}, index=idx)
    x, dx = build_npi_features(lv, DEFAULT_NPIS)
    assert x.shape[1] == 9 and dx.shape[1] == 9
    lv.loc[idx[5], "E1"] = 3.0
    with pytest.raises(DataError, match="E1.*FR.*2020-W10"):
        build_npi_features(lv, DEFAULT_NPIS, country="FR")


# -- variants -----------------------------------------------------------------

def test_variant_dummy_examples():
    d = build_variant_dummies(["WT", "WT", "Alpha", "Delta"])
    np.testing.assert_array_equal(d.T, [[1, 1, 1, 1], [0, 0, 1, 1], [0, 0, 0, 1], [0, 0, 0, 0]])
    d = build_variant_dummies(["WT"] * 3)
    np.testing.assert_array_equal(d[:, 1:], 0.0)
    d = build_variant_dummies(["Delta", "Omicron", "Delta"])
    np.testing.assert_array_equal(d[:, 3], [0, 1, 0])
    np.testing.assert_array_equal(d[:, 2], [1, 1, 1])
    assert np.all(np.diff(d, axis=1) <= 0)
    with pytest.raises(DataError):
        build_variant_dummies(["Beta"])


# -- imputation ---------------------------------------------------------------

def test_border_weighted_imputation():
    weeks = pd.date_range(MONDAY, periods=2, freq="7D")
    src = {"A": pd.Series([10.0, 10.0], index=weeks), "B": pd.Series([20.0, 20.0], index=weeks),
           "C": pd.Series([3.0, 3.0], index=weeks)}
    np.testing.assert_allclose(impute_border_weighted(weeks, [("A", 2), ("B", 3)], src), 16.0)
    np.testing.assert_allclose(impute_border_weighted(weeks, [("B", 5)], src), 20.0)
    src.update({"A": src["A"] * 0 + 1, "B": src["B"] * 0 + 2})
    np.testing.assert_allclose(
        impute_border_weighted(weeks, [("A", 1), ("B", 1), ("C", 1)], src), 2.0)
    with pytest.raises(DataError, match="no neighbour coverage"):
        impute_border_weighted(weeks + pd.Timedelta(weeks=5), [("A", 1)], src)


# -- downsampling ---------------------------------------------------------------

def test_downsample_examples():
    assert downsample_weekly(daily(np.full(7, 4.2))).tolist() == [4.2]
    assert downsample_weekly(daily(np.arange(1, 8))).tolist() == [4.0]
    assert len(downsample_weekly(daily(np.arange(14)))) == 2
    # partial boundary weeks dropped
    assert len(downsample_weekly(daily(np.arange(20), start=MONDAY + pd.Timedelta(days=2)))) == 2


def test_downsample_weekly_constant_is_lossless():
    weekly = np.random.default_rng(3).normal(size=6)
    out = downsample_weekly(daily(np.repeat(weekly, 7)))
    np.testing.assert_array_equal(out.to_numpy(), weekly)


# -- CSV ingestion and panel assembly ----------------------------------------

def _write_synthetic(tmp_path, C=3, T=20, seed=0):
    truth = default_truth(C, DEFAULT_NPIS, seed=seed)
    panel = simulate_panel(truth, C=C, T=T, seed=seed)
    chars = synthetic_characteristics(truth, panel.countries, seed=seed)
    cfg = write_panel_csv(panel, tmp_path, characteristics=chars)
    return panel, cfg


def test_synthetic_csv_round_trip(tmp_path):
    panel, cfg = _write_synthetic(tmp_path)
    back = load_panel(tmp_path, config=cfg)
    assert back.countries == panel.countries
    for c in panel.countries:
        for attr in ("Y", "X_level", "X_change", "vacc", "variant"):
            np.testing.assert_allclose(getattr(back[c], attr), getattr(panel[c], attr),
                                       atol=1e-12, err_msg=f"{c} {attr}")
        assert list(back[c].weeks) == list(panel[c].weeks)


def test_duplicate_row_is_named(tmp_path):
    _write_synthetic(tmp_path)
    lines = (tmp_path / "npi.csv").read_text().splitlines()
    lines.insert(3, lines[2])
    (tmp_path / "npi.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="line 4: duplicate key"):
        read_input_csv(tmp_path / "npi.csv")


def test_malformed_value_reports_line(tmp_path):
    _write_synthetic(tmp_path)
    lines = (tmp_path / "vaccination.csv").read_text().splitlines()
    parts = lines[5].split(",")
    parts[2] = "lots"
    lines[5] = ",".join(parts)
    (tmp_path / "vaccination.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="line 6"):
        read_input_csv(tmp_path / "vaccination.csv")


def test_country_missing_gdp_is_dropped_with_warning(tmp_path):
    panel, cfg = _write_synthetic(tmp_path)
    victim = panel.countries[1]
    df = pd.read_csv(tmp_path / "responses.csv")
    df = df[~((df["country"] == victim) & (df["series"] == "gdp"))]
    df.to_csv(tmp_path / "responses.csv", index=False)
    with pytest.warns(DataWarning, match=f"{victim} \\(missing gdp\\)"):
        out = load_panel(tmp_path, config=cfg)
    assert victim not in out.countries and out.n_countries == 2


def test_missing_file_raises(tmp_path):
    _write_synthetic(tmp_path)
    (tmp_path / "variants.csv").unlink()
    with pytest.raises(DataError, match="variants.csv"):
        load_panel(tmp_path)


def test_characteristics_keep_missing_as_nan(tmp_path):
    (tmp_path / "characteristics.csv").write_text(
        "country,feature,value\nAA,beds,3\nAA,gdp_pc,40\nBB,beds,\nBB,gdp_pc,35\n")
    ch = load_characteristics(tmp_path / "characteristics.csv")
    assert ch.features == ["beds", "gdp_pc"]
    assert bool(ch.missing.loc["BB", "beds"]) and not ch.missing.values.sum() > 1
    assert np.isnan(ch.vector("beds", ["BB"])[0])


def test_panel_json_round_trip(tmp_path):
    data, _ = small_panel(C=2, T=8)
    data.save_json(tmp_path / "panel.json")
    back = PanelDataset.load_json(tmp_path / "panel.json")
    assert back.countries == data.countries
    for c in data.countries:
        np.testing.assert_array_equal(back[c].Y, data[c].Y)


def test_panel_validation_rejects_broken_invariants():
    data, _ = small_panel(C=1, T=6)
    p = data[data.countries[0]]
    p.X_change[3, 0] += 1.0
    with pytest.raises(DataError, match="X_change"):
        data.validate()
    p.X_change[3, 0] -= 1.0
    p.variant[2, 2] = 1.0
    p.variant[2, 1] = 0.0
    with pytest.raises(DataError, match="monotone"):
        data.validate()


def test_data_config_round_trip_and_unknown_key():
    cfg = DataConfig.from_dict({"start": "2020-02-03", "frequency": {"gdp": "daily"}})
    assert cfg.frequency["gdp"] == "daily" and cfg.frequency["transit"] == "daily"
    assert DataConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(DataError):
        DataConfig.from_dict({"strat": "2020"})


def test_large_values_warn(tmp_path):
    data, _ = small_panel(C=1, T=6)
    data[data.countries[0]].Y[2, 3] = 12.0
    panel = data
    cfg = write_panel_csv(panel, tmp_path)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        load_panel(tmp_path, config=cfg)
    assert any("ΔTransit" in str(w.message) for w in rec)
