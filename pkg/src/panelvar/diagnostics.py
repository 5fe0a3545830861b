"""Rank-normalized split R-hat, effective sample size and parameter summaries."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


class DiagnosticsError(ValueError):
    pass


def _as_chains(chains) -> np.ndarray:
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DiagnosticsError("expected draws shaped (chains, iterations)")
    if x.size == 0:
        raise DiagnosticsError("no draws")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1]
    half = n // 2
    if half < 4:
        raise DiagnosticsError(f"need at least 4 draws per half-chain, got {half}")
    # an odd middle draw is dropped
    return np.vstack([x[:, :half], x[:, n - half:]])


def rank_normalize(x: np.ndarray) -> np.ndarray:
    """Pooled ranks mapped to normal scores with the (r - 3/8)/(n + 1/4) offset."""
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x: np.ndarray) -> float:
    m, n = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else math.inf
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x.flat[0]))


def split_rhat(chains) -> float:
    """Maximum of the bulk and folded rank-normalized split R-hat.

    Draws that are identical across every chain return 1 by convention.
    """
    x = _as_chains(chains)
    if not np.all(np.isfinite(x)):
        return math.nan
    if _is_constant(x):
        return 1.0
    s = _split(x)
    bulk = _rhat_basic(rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = 1.0 if _is_constant(folded) else _rhat_basic(rank_normalize(folded))
    return max(bulk, tail)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), m)
    return np.fft.irfft(f * np.conj(f), m)[:n] / n


def _ess(x: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    m, n = x.shape
    acov = np.stack([_autocovariance(c) for c in x])
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if var_plus <= 0:
        return 0.0
    rho = np.zeros(n)
    rho[0] = rho_even = 1.0
    rho[1] = rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    # initial positive sequence
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # initial monotone sequence over paired sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    S = m * n
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1:max_t + 2].sum()
    tau = max(tau, 1.0 / math.log10(S))
    return S / tau


def ess_bulk(chains) -> float:
    x = _as_chains(chains)
    if x.size < 8:
        raise DiagnosticsError(f"need at least 8 draws for ESS, got {x.size}")
    if _is_constant(x):
        return 0.0
    return _ess(rank_normalize(_split(x)))


def relative_ess(chains) -> float:
    """Bulk effective sample size divided by the total number of draws.

    The autocorrelation sum is capped so the estimate never exceeds
    ``S * log10(S)``; constant draws give 0.
    """
    x = _as_chains(chains)
    return ess_bulk(x) / x.size


@dataclass
class ParamSummary:
    name: str
    mean: float
    sd: float
    cri_low: float
    cri_high: float
    rhat: float
    rel_ess: float


SUMMARY_COLUMNS = ("name", "mean", "sd", "cri_low", "cri_high", "rhat", "rel_ess")


def summarize_array(chains, name: str = "x", level: float = 0.95) -> ParamSummary:
    x = _as_chains(chains)
    flat = x.ravel()
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(flat, [a, 1.0 - a], method="linear")
    mean = float(flat.mean())
    sd = float(flat.std(ddof=1)) if flat.size > 1 else 0.0
    try:
        rhat = split_rhat(x)
        ress = relative_ess(x)
    except DiagnosticsError:
        rhat = ress = math.nan
    if not lo - 1e-12 * abs(lo) <= mean <= hi + 1e-12 * abs(hi):
        warnings.warn(f"{name}: posterior mean lies outside its credible interval", stacklevel=2)
    return ParamSummary(name, mean, sd, float(lo), float(hi), rhat, ress)


def summarize(draws, names: Sequence[str] | None = None) -> list[ParamSummary]:
    """Per-parameter summaries of a :class:`PosteriorDraws` or a (chains, iter, dim) array."""
    arr = np.asarray(getattr(draws, "draws", draws), dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.size == 0:
        raise DiagnosticsError("no draws to summarize")
    names = list(names if names is not None else getattr(draws, "names",
                                                            [f"x[{i}]" for i in range(arr.shape[2])]))
    return [summarize_array(arr[:, :, j], names[j]) for j in range(arr.shape[2])]


def write_summary(summaries: Sequence[ParamSummary], path) -> None:
    lines = [",".join(SUMMARY_COLUMNS)]
    for s in summaries:
        d = asdict(s)
        lines.append(",".join([d["name"]] + ["%.17g" % d[k] for k in SUMMARY_COLUMNS[1:]]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_summary(path) -> list[ParamSummary]:
    rows = Path(path).read_text().strip().splitlines()[1:]
    out = []
    for r in rows:
        name, *vals = r.split(",")
        out.append(ParamSummary(name, *map(float, vals)))
    return out


def convergence_report(summaries: Sequence[ParamSummary], rhat_max: float = 1.01) -> dict:
    rh = np.array([s.rhat for s in summaries])
    ress = np.array([s.rel_ess for s in summaries])
    bad = [s.name for s in summaries if not s.rhat <= rhat_max]
    return {"max_rhat": float(np.nanmax(rh)) if rh.size else math.nan,
            "n_rhat_fail": len(bad), "rhat_fail": bad[:20],
            "frac_rel_ess_above_half": float(np.mean(ress > 0.5)) if ress.size else math.nan}
