"""Synthetic panels generated from known parameters.

``simulate_panel`` iterates the VAR forward with Gaussian innovations;
``write_panel_csv`` emits the raw input files that ``load_panel`` reads back
into the same panel, so simulated data can exercise the whole pipeline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .dataset import (DEFAULT_NPIS, NPI_CODEBOOK, RESPONSES, VARIANTS, CountryPanel,
                      DataConfig, PanelDataset)
from .model import ParameterVector, corr_chol_unconstrain

TrueParameters = ParameterVector

BURN_IN = 50

# Lag-one coefficients used as the default ground truth (row = equation,
# column = lagged predictor, ordered as RESPONSES).
REFERENCE_PHI = np.array([
    [0.757, -0.040, 0.003, 0.103],
    [0.271, 0.856, -0.008, 0.014],
    [-0.241, -0.054, 0.046, 0.067],
    [-0.055, -0.025, 0.135, -0.113],
])


class UnstableSystemError(ValueError):
    pass


def companion(Phi: np.ndarray) -> np.ndarray:
    """Companion matrix of a VAR with lag matrices ``Phi[k]`` (or one matrix)."""
    Phi = np.asarray(Phi, dtype=float)
    if Phi.ndim == 2:
        Phi = Phi[None]
    p, n, m = Phi.shape
    if n != m:
        raise ValueError("lag matrices must be square")
    top = np.hstack(list(Phi))
    if p == 1:
        return top
    bottom = np.hstack([np.eye(n * (p - 1)), np.zeros((n * (p - 1), n))])
    return np.vstack([top, bottom])


def stability_check(Phi) -> float:
    """Spectral radius of the companion matrix; stationary iff below one."""
    return float(np.max(np.abs(np.linalg.eigvals(companion(Phi)))))


@dataclass
class ExogenousScenario:
    """Covariate paths for every simulated country.

    ``npi_raw`` holds the unlagged weekly NPI levels for ``T + 2`` weeks
    starting two weeks before the first panel week, so that the panel's
    lagged level at week ``t`` is ``npi_raw[:, t + 1]``.
    """

    npi_names: list
    npi_raw: np.ndarray        # (C, T + 2, K)
    vacc: np.ndarray           # (C, T)
    variant_labels: np.ndarray  # (C, T) of VARIANTS entries

    @property
    def shape(self) -> tuple[int, int]:
        return self.vacc.shape

    def country_covariates(self, c: int):
        raw = self.npi_raw[c]
        x_level = raw[1:-1]
        x_change = raw[1:-1] - raw[:-2]
        variant = _dummies(self.variant_labels[c])
        return x_level, x_change, self.vacc[c], variant


def _dummies(labels) -> np.ndarray:
    out = np.zeros((len(labels), 4))
    for t, lab in enumerate(labels):
        out[t, :VARIANTS.index(lab) + 1] = 1.0
    return out


def default_scenario(C: int = 25, T: int = 104, npi_names: Sequence[str] = DEFAULT_NPIS,
                     seed: int = 0) -> ExogenousScenario:
    """NPI, vaccination and variant paths on the scale of the observed data.

    NPIs are integer, piecewise constant and start at zero; vaccination
    ramps up from about 48% of the horizon; the dominant variant moves
    through WT, Alpha, Delta and Omicron.
    """
    npi_names = list(npi_names)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE]))
    K = len(npi_names)
    npi = np.zeros((C, T + 2, K))
    for c in range(C):
        for k, name in enumerate(npi_names):
            top = NPI_CODEBOOK[name][1]
            t = int(rng.integers(2, 8))
            while t < T + 2:
                length = int(rng.integers(4, 13))
                npi[c, t:t + length, k] = rng.integers(0, top + 1)
                t += length
    scale = T / 104.0
    vacc = np.zeros((C, T))
    labels = np.empty((C, T), dtype=object)
    weeks = np.arange(T)
    for c in range(C):
        start = 50 * scale + rng.uniform(-3, 3)
        vacc[c] = np.clip(0.04 * (weeks - start), 0.0, 2.4)
        cuts = np.array([50, 75, 100]) * scale + rng.integers(-2, 3, size=3)
        idx = np.searchsorted(np.sort(cuts), weeks, side="right")
        labels[c] = [VARIANTS[i] for i in idx]
    return ExogenousScenario(npi_names, npi, vacc, labels)


def default_truth(C: int = 25, npi_names: Sequence[str] = DEFAULT_NPIS, seed: int = 0,
                  Phi: np.ndarray | None = None,
                  resid_scales: Sequence[float] = (0.12, 0.10, 0.08, 0.10),
                  sigma_mu: float = 0.1) -> TrueParameters:
    """Plausible ground truth around the reference lag-one coefficients."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A0]))
    K = len(npi_names)
    Phi = REFERENCE_PHI if Phi is None else np.asarray(Phi, dtype=float)
    if Phi.ndim == 2:
        Phi = Phi[None]
    variant = np.zeros((4, 4))
    variant[:, 1:] = rng.normal(0.0, 0.05, size=(4, 3))
    omega = np.array([
        [1.0, 0.2, -0.1, -0.15],
        [0.2, 1.0, -0.05, 0.0],
        [-0.1, -0.05, 1.0, 0.25],
        [-0.15, 0.0, 0.25, 1.0],
    ])
    return ParameterVector(
        Phi=Phi.copy(),
        lam=rng.normal(0.0, 0.02, size=(4, K)),
        delta=rng.normal(0.0, 0.02, size=(4, K)),
        variant=variant,
        vacc=np.array([-0.05, -0.05, 0.01, 0.01]),
        mu=rng.normal(0.0, sigma_mu, size=(4, C)),
        sigma_mu=float(sigma_mu),
        resid_scales=np.asarray(resid_scales, dtype=float),
        corr_chol=np.linalg.cholesky(omega),
    )


def _country_codes(C: int) -> list[str]:
    return [f"S{c + 1:02d}" for c in range(C)]


def simulate_panel(truth: TrueParameters, C: int = 25, T: int = 104,
                   scenario: ExogenousScenario | None = None, seed: int = 0,
                   start: str = "2020-01-06",
                   countries: Sequence[str] | None = None) -> PanelDataset:
    """Run the VAR forward for ``C`` countries and ``T`` weeks.

    Each country starts from zero and discards a burn-in of 50 steps during
    which the covariates are frozen at their first-week values.
    """
    Phi = np.asarray(truth.Phi, dtype=float)
    if Phi.ndim == 2:
        Phi = Phi[None]
    radius = stability_check(Phi)
    if radius >= 1.0:
        raise UnstableSystemError(f"spectral radius {radius:.4f} >= 1; system is not stationary")
    if T < 1 or C < 1:
        raise ValueError("C and T must be positive")
    mu = np.asarray(truth.mu, dtype=float)
    if mu.shape != (4, C):
        raise ValueError(f"truth.mu has shape {mu.shape}, expected (4, {C})")
    if scenario is None:
        scenario = default_scenario(C, T, DEFAULT_NPIS[:np.shape(truth.lam)[1]], seed=seed)
    if scenario.shape != (C, T):
        raise ValueError(f"scenario covers {scenario.shape}, expected ({C}, {T})")
    K = len(scenario.npi_names)
    for name, arr in (("lam", truth.lam), ("delta", truth.delta)):
        if np.shape(arr) != (4, K):
            raise ValueError(f"truth.{name} has shape {np.shape(arr)}, expected (4, {K})")

    p = Phi.shape[0]
    chol = truth.chol_sigma
    codes = list(countries) if countries is not None else _country_codes(C)
    weeks = pd.date_range(pd.Timestamp(start), periods=T, freq="7D")
    streams = np.random.SeedSequence([seed, 0x51A]).spawn(C)
    panels = {}
    for c in range(C):
        rng = np.random.default_rng(streams[c])
        x_level, x_change, vacc, variant = scenario.country_covariates(c)
        exo = (truth.lam @ x_level.T + truth.delta @ x_change.T
               + truth.variant @ variant.T + np.outer(truth.vacc, vacc)).T
        shocks = rng.standard_normal((BURN_IN + T, 4)) @ chol.T
        hist = [np.zeros(4) for _ in range(p)]
        Y = np.empty((T, 4))
        for s in range(BURN_IN + T):
            t = max(s - BURN_IN, 0)
            y = mu[:, c] + exo[t] + shocks[s]
            for k in range(p):
                y = y + Phi[k] @ hist[-1 - k]
            hist.append(y)
            if s >= BURN_IN:
                Y[s - BURN_IN] = y
        panels[codes[c]] = CountryPanel(weeks=weeks, Y=Y, X_level=x_level.copy(),
                                        X_change=x_change.copy(), vacc=vacc.copy(),
                                        variant=variant)
    return PanelDataset(codes, list(scenario.npi_names), panels)


# ---------------------------------------------------------------------------
# Raw CSV emission
# ---------------------------------------------------------------------------

_TREND_WEEKS = 208


def _daily(weeks: pd.DatetimeIndex, values: np.ndarray) -> tuple[pd.DatetimeIndex, np.ndarray]:
    days = pd.DatetimeIndex(np.repeat(weeks.values, 7)) + pd.to_timedelta(
        np.tile(np.arange(7), len(weeks)), unit="D")
    return days, np.repeat(values, 7, axis=0)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_panel_csv(panel: PanelDataset, out_dir, characteristics: pd.DataFrame | None = None,
                    trend_growth: float = 0.2, population: float = 1e7) -> DataConfig:
    """Write raw input CSVs whose transforms reproduce ``panel``.

    Every transform is inverted: weekly values are held constant over the
    days of each week, GDP gets a linear pre-sample history with slope
    ``trend_growth``, transit levels are cumulated from a zero baseline and
    excess deaths are lagged back by the lead.  Returns the data config that
    reads the files back.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = DataConfig()
    lead = cfg.excess_death_lead
    first = min(panel[c].weeks[0] for c in panel.countries)
    last = max(panel[c].weeks[-1] for c in panel.countries)
    hist_start = first - pd.Timedelta(weeks=_TREND_WEEKS + 2)
    cfg.start = first.strftime("%Y-%m-%d")
    cfg.end = (last + pd.Timedelta(days=6)).strftime("%Y-%m-%d")
    cfg.trend_start = hist_start.strftime("%Y-%m-%d")
    cfg.trend_end = (first - pd.Timedelta(weeks=2)).strftime("%Y-%m-%d")

    resp_rows, npi_rows, vac_rows, var_rows = [], [], [], []
    wk = pd.Timedelta(weeks=1)
    for c in panel.countries:
        p = panel[c]
        weeks, Y, T = p.weeks, p.Y, len(p)

        # log R: held constant over each week's days
        days, vals = _daily(weeks, Y[:, 0])
        resp_rows += [(c, d, "log_r", v) for d, v in zip(days, vals)]

        # GDP: linear history up to the week before the panel, then cumulated changes
        pre = pd.date_range(hist_start, weeks[0] - wk, freq="7D")
        gdp_pre = 100.0 + trend_growth * np.arange(len(pre))
        steps = cfg.gdp_scale * Y[:, 2] + trend_growth
        gdp_in = gdp_pre[-1] + np.cumsum(steps)
        gdp = np.concatenate([gdp_pre, gdp_in])
        resp_rows += [(c, d, "gdp", v) for d, v in zip(pre.append(weeks), gdp)]

        # transit: weekly levels from a zero baseline one week before the panel
        level = np.concatenate([[0.0], np.cumsum(cfg.transit_scale * Y[:, 3])])
        days, vals = _daily(pd.DatetimeIndex([weeks[0] - wk]).append(weeks), level)
        resp_rows += [(c, d, "transit", v) for d, v in zip(days, vals)]

        # excess deaths: the value for week t sits lead weeks later
        ed_weeks = pd.date_range(weeks[0], periods=T + lead, freq="7D")
        ed = np.concatenate([np.zeros(lead), np.expm1(Y[:, 1])])
        days, vals = _daily(ed_weeks, ed)
        resp_rows += [(c, d, "excess_deaths_per_100k", v) for d, v in zip(days, vals)]

        # NPIs: raw weekly levels from two weeks before the panel; the final
        # week only feeds a lag beyond the panel and repeats the last level
        raw = np.vstack([p.X_level[:1] - p.X_change[:1], p.X_level, p.X_level[-1:]])
        npi_weeks = pd.date_range(weeks[0] - 2 * wk, periods=T + 2, freq="7D")
        days, vals = _daily(npi_weeks, raw)
        for k, name in enumerate(panel.npi_names):
            npi_rows += [(c, d, name, v) for d, v in zip(days, vals[:, k])]

        days, vals = _daily(weeks, p.vacc)
        vac_rows += [(c, d, v * population, population) for d, v in zip(days, vals)]

        for w, row in zip(weeks, p.variant):
            n = int(round(row.sum()))
            if not np.array_equal(row, _dummies([VARIANTS[n - 1]])[0]):
                raise ValueError(f"{c}: fractional variant dummies cannot be written as labels")
            iso = w.isocalendar()
            var_rows.append((c, f"{iso[0]}-W{iso[1]:02d}", VARIANTS[n - 1]))

    def dump(name, header, rows, date_col=1):
        lines = [",".join(header)]
        for r in rows:
            cells = list(r)
            if date_col is not None:
                cells[date_col] = pd.Timestamp(cells[date_col]).strftime("%Y-%m-%d")
            lines.append(",".join(_fmt(x) if isinstance(x, (float, np.floating)) else str(x)
                                  for x in cells))
        (out / name).write_text("\n".join(lines) + "\n", encoding="utf-8")

    dump("responses.csv", ["country", "date", "series", "value"], resp_rows)
    dump("npi.csv", ["country", "date", "npi_id", "score"], npi_rows)
    dump("vaccination.csv", ["country", "date", "total_doses", "population"], vac_rows)
    dump("variants.csv", ["country", "iso_week", "who_label"], var_rows, date_col=None)
    if characteristics is not None:
        rows = [(c, f, float(v)) for c, r in characteristics.iterrows() for f, v in r.items()
                if np.isfinite(v)]
        dump("characteristics.csv", ["country", "feature", "value"], rows, date_col=None)
    return cfg


def synthetic_characteristics(truth: TrueParameters, countries: Sequence[str],
                              seed: int = 0) -> pd.DataFrame:
    """Country features, two of them linked to the true intercepts."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC4A]))
    C = len(countries)
    mu = np.asarray(truth.mu)
    table = pd.DataFrame({
        "health_expenditure": -mu[1] / mu[1].std() + 0.5 * rng.standard_normal(C),
        "services_share": mu[0] / mu[0].std() + 0.5 * rng.standard_normal(C),
        "hospital_beds": rng.normal(5.0, 1.5, C),
        "internet_use": rng.uniform(60.0, 98.0, C),
        "median_age": rng.normal(42.0, 3.0, C),
    }, index=list(countries))
    table.index.name = "country"
    return table


def truth_to_json(truth: TrueParameters, npi_names: Sequence[str]) -> dict:
    return {
        "npi_names": list(npi_names),
        "Phi": np.asarray(truth.Phi).tolist(), "lam": np.asarray(truth.lam).tolist(),
        "delta": np.asarray(truth.delta).tolist(), "variant": np.asarray(truth.variant).tolist(),
        "vacc": np.asarray(truth.vacc).tolist(), "mu": np.asarray(truth.mu).tolist(),
        "sigma_mu": truth.sigma_mu, "resid_scales": np.asarray(truth.resid_scales).tolist(),
        "corr_chol": np.asarray(truth.corr_chol).tolist(),
        "responses": list(RESPONSES),
    }


def truth_from_json(d: dict) -> TrueParameters:
    arr = {k: np.asarray(d[k], dtype=float) for k in
           ("Phi", "lam", "delta", "variant", "vacc", "mu", "resid_scales", "corr_chol")}
    corr_chol_unconstrain(arr["corr_chol"])
    return ParameterVector(sigma_mu=float(d["sigma_mu"]), **arr)


def save_truth(truth: TrueParameters, npi_names: Sequence[str], path) -> None:
    Path(path).write_text(json.dumps(truth_to_json(truth, npi_names), indent=1))
