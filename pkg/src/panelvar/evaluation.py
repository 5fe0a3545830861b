"""PSIS-LOO model comparison, exclusion experiments and forecast benchmarks.

The unit of leave-one-out is one (country, week) row: the joint 4-vector of
responses, matching one multivariate likelihood term.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .dataset import RESPONSES
from .model import ModelSpec, PanelVarModel, response_name

logger = logging.getLogger(__name__)

PARETO_K_WARN = 0.7
TAIL_FRACTION = 0.2


class EvaluationError(ValueError):
    pass


class PsisWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Pointwise likelihood
# ---------------------------------------------------------------------------


def _thetas(draws, model: PanelVarModel):
    flat = np.asarray(draws, dtype=float) if isinstance(draws, np.ndarray) or not hasattr(
        draws, "names") else draws.flat()
    if flat.ndim != 2 or flat.shape[1] != model.dim:
        raise EvaluationError(
            f"draws have {flat.shape[-1]} columns but the model has {model.dim} parameters")
    return [model.unflatten(v) for v in flat]


def pointwise_loglik(draws, data, spec: ModelSpec | None = None,
                     model: PanelVarModel | None = None) -> np.ndarray:
    """Matrix of log densities, draws by (country, week) rows."""
    model = model or PanelVarModel(data, spec)
    return np.stack([model.pointwise_loglik(th) for th in _thetas(draws, model)])


# ---------------------------------------------------------------------------
# Pareto smoothed importance sampling
# ---------------------------------------------------------------------------


def gpd_fit(x: np.ndarray, prior_k: float = 10.0, prior_b: float = 3.0) -> tuple[float, float]:
    """Generalized Pareto shape and scale by the Zhang-Stephens posterior mean.

    ``x`` must be sorted ascending and positive.  A weakly informative
    prior pulls the shape toward 0.5.
    """
    n = x.size
    m = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b /= prior_b * x[int(n / 4 + 0.5) - 1]
    b += 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    prof = n * (np.log(-b / k) - k - 1.0)
    with np.errstate(over="ignore"):
        # overflow only drives negligible weights to zero
        w = 1.0 / np.exp(prof - prof[:, None]).sum(axis=1)
    keep = w >= 10 * np.finfo(float).eps
    w, b = w[keep], b[keep]
    w /= w.sum()
    b_post = float(np.sum(b * w))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return k_post, sigma


def gpd_quantile(p: np.ndarray, k: float, sigma: float) -> np.ndarray:
    if abs(k) < np.finfo(float).eps:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis_smooth(log_ratios: np.ndarray, tail_fraction: float = TAIL_FRACTION
                ) -> tuple[np.ndarray, float, bool]:
    """Smooth one vector of log importance ratios.

    Returns normalized log weights, the Pareto shape estimate and whether
    the tail was degenerate (all equal), in which case weights are left raw
    and the shape is reported as 0.
    """
    lw = np.asarray(log_ratios, dtype=float)
    lw = lw - lw.max()
    S = lw.size
    M = int(math.ceil(tail_fraction * S))
    M = min(M, S - 1)
    order = np.argsort(lw, kind="stable")
    cutoff = lw[order[-M - 1]]
    tail_idx = order[-M:]
    tail = lw[tail_idx]
    k = math.inf
    degenerate = False
    if np.all(tail == cutoff):
        k, degenerate = 0.0, True
    elif M >= 5:
        exp_cut = math.exp(cutoff)
        x = np.exp(tail) - exp_cut
        k, sigma = gpd_fit(x)
        if math.isfinite(k) and sigma > 0:
            probs = (np.arange(M) + 0.5) / M
            smoothed = np.log(gpd_quantile(probs, k, sigma) + exp_cut)
            lw = lw.copy()
            lw[tail_idx] = np.minimum(smoothed, 0.0)
    return lw - logsumexp(lw), float(k), degenerate


@dataclass
class LooResult:
    elpd: float
    elpd_se: float
    pointwise: np.ndarray
    pareto_k: np.ndarray
    p_loo: float
    n_draws: int

    @property
    def n_obs(self) -> int:
        return self.pointwise.size

    def k_summary(self) -> dict:
        k = self.pareto_k
        return {"good (k<=0.5)": int(np.sum(k <= 0.5)),
                "ok (0.5<k<=0.7)": int(np.sum((k > 0.5) & (k <= 0.7))),
                "bad (0.7<k<=1)": int(np.sum((k > 0.7) & (k <= 1))),
                "very bad (k>1)": int(np.sum(k > 1)),
                "max": float(np.max(k)) if k.size else math.nan}

    def to_json(self) -> dict:
        return {"elpd": self.elpd, "se": self.elpd_se, "p_loo": self.p_loo,
                "n_obs": self.n_obs, "n_draws": self.n_draws, "k_summary": self.k_summary(),
                "pointwise": self.pointwise.tolist(), "pareto_k": self.pareto_k.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "LooResult":
        return cls(d["elpd"], d["se"], np.asarray(d["pointwise"]), np.asarray(d["pareto_k"]),
                   d["p_loo"], d["n_draws"])


def psis_loo(loglik: np.ndarray, tail_fraction: float = TAIL_FRACTION) -> LooResult:
    """Leave-one-out expected log predictive density by Pareto smoothed IS."""
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2:
        raise EvaluationError("log-likelihood must be a draws x observations matrix")
    S, N = ll.shape
    if S < 400:
        warnings.warn(f"only {S} draws; PSIS-LOO estimates may be unreliable below 400",
                      PsisWarning, stacklevel=2)
    if not np.all(np.isfinite(ll)):
        raise EvaluationError("log-likelihood matrix contains non-finite entries")
    pw = np.empty(N)
    ks = np.empty(N)
    n_degenerate = 0
    for i in range(N):
        lw, k, degenerate = psis_smooth(-ll[:, i], tail_fraction)
        pw[i] = logsumexp(lw + ll[:, i])
        ks[i] = k
        n_degenerate += degenerate
    if n_degenerate:
        warnings.warn(f"{n_degenerate} observations have constant importance ratios; "
                      "Pareto shape undefined (reported as 0) and weights left unsmoothed",
                      PsisWarning, stacklevel=2)
    n_high = int(np.sum(ks > PARETO_K_WARN))
    if n_high:
        warnings.warn(f"{n_high} observations have Pareto k > {PARETO_K_WARN}",
                      PsisWarning, stacklevel=2)
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(S)))
    elpd = float(pw.sum())
    se = float(math.sqrt(N * np.var(pw))) if N > 1 else 0.0
    return LooResult(elpd, se, pw, ks, lppd - elpd, S)


@dataclass
class ElpdDiff:
    diff: float
    se_diff: float
    cri_low: float
    cri_high: float


def elpd_interval(diff: float, se: float) -> tuple[float, float]:
    return diff - 2.0 * se, diff + 2.0 * se


def elpd_diff(a: LooResult, b: LooResult) -> ElpdDiff:
    """``elpd_b - elpd_a`` with ``a`` as the reference model."""
    if a.n_obs != b.n_obs:
        raise EvaluationError(f"models cover {a.n_obs} and {b.n_obs} observations")
    d = b.pointwise - a.pointwise
    diff = float(d.sum())
    se = float(math.sqrt(d.size * np.var(d)))
    lo, hi = elpd_interval(diff, se)
    return ElpdDiff(diff, se, lo, hi)


def write_elpd_table(rows: Sequence[tuple[str, ElpdDiff]], path) -> None:
    lines = ["model,diff,se,cri_low,cri_high"]
    for name, d in rows:
        lines.append(",".join([name] + ["%.17g" % x for x in
                                        (d.diff, d.se_diff, d.cri_low, d.cri_high)]))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Exclusion experiments
# ---------------------------------------------------------------------------


def exclusion_experiment(spec: ModelSpec, exclude: Sequence[str]) -> ModelSpec:
    """Spec with lagged ``exclude`` responses removed from every other equation."""
    names = [response_name(n) for n in exclude]
    merged = set(spec.excluded_predictors) | set(names)
    return dataclasses.replace(spec, excluded_predictors=tuple(merged),
                               npi_names=list(spec.npi_names))


def exclusion_label(exclude: Sequence[str]) -> str:
    names = sorted({response_name(n) for n in exclude}, key=RESPONSES.index)
    if not names:
        return "full"
    if len(names) == len(RESPONSES):
        return "all"
    return "+".join(names)


def standard_exclusion_sets() -> list[tuple[str, ...]]:
    """Each response singly, every pair, and all four."""
    out: list[tuple[str, ...]] = [(r,) for r in RESPONSES]
    out += [(a, b) for i, a in enumerate(RESPONSES) for b in RESPONSES[i + 1:]]
    out.append(tuple(RESPONSES))
    return out


# ---------------------------------------------------------------------------
# Forecasts
# ---------------------------------------------------------------------------


@dataclass
class ForecastResult:
    table: pd.DataFrame        # country, week, variable, observed, model, naive
    rmse_model: dict
    rmse_naive: dict
    reduction: dict

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"rmse_model": self.rmse_model, "rmse_naive": self.rmse_naive,
                             "reduction": self.reduction}).loc[list(RESPONSES)]


def rmse(pred, obs) -> float:
    e = np.asarray(pred, dtype=float) - np.asarray(obs, dtype=float)
    return float(np.sqrt(np.mean(e * e)))


def rmse_reduction(pred, naive, obs) -> float:
    return 1.0 - rmse(pred, obs) / rmse(naive, obs)


def naive_forecast(series) -> np.ndarray:
    """Carry the last observation forward.

    Element ``i`` is the forecast for position ``i + 1``, so the final
    element forecasts the step after the series ends.
    """
    return np.asarray(series, dtype=float).copy()


def one_step_forecast(draws, data, spec: ModelSpec | None = None,
                      model: PanelVarModel | None = None) -> ForecastResult:
    """Posterior-mean one-step-ahead forecasts against the no-change benchmark.

    The conditional mean is linear in the coefficients, so its posterior
    mean is the linear predictor at the posterior-mean coefficient matrix.
    RMSE pools every (country, week) row.
    """
    model = model or PanelVarModel(data, spec)
    thetas = _thetas(draws, model)
    G = np.mean([model.coef_matrix(th) for th in thetas], axis=0)
    pred = model.V @ G.T
    naive = np.empty_like(model.Y)
    for r, (ci, t) in enumerate(zip(model.row_country, model.row_week)):
        naive[r] = data[data.countries[ci]].Y[t - 1]
    obs = model.Y
    recs = []
    for r, (ci, t) in enumerate(zip(model.row_country, model.row_week)):
        c = data.countries[ci]
        week = data[c].weeks[t].strftime("%Y-%m-%d")
        for j, v in enumerate(RESPONSES):
            recs.append((c, week, v, obs[r, j], pred[r, j], naive[r, j]))
    table = pd.DataFrame(recs, columns=["country", "week", "variable", "observed",
                                        "model", "naive"])
    rm = {v: rmse(pred[:, j], obs[:, j]) for j, v in enumerate(RESPONSES)}
    rn = {v: rmse(naive[:, j], obs[:, j]) for j, v in enumerate(RESPONSES)}
    red = {v: 1.0 - rm[v] / rn[v] for v in RESPONSES}
    return ForecastResult(table, rm, rn, red)


def write_forecast(res: ForecastResult, out_dir) -> None:
    out = Path(out_dir)
    res.table.to_csv(out / "forecast.csv", index=False, float_format="%.17g")
    res.summary_frame().rename_axis("variable").to_csv(out / "forecast_rmse.csv",
                                                       float_format="%.17g")


def write_loo(res: LooResult, path) -> None:
    Path(path).write_text(json.dumps(res.to_json(), indent=1))
