"""Country-intercept analyses: correlations, PCA, k-means and leave-one-country-out refits."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .dataset import RESPONSES, PanelDataset
from .diagnostics import ParamSummary, summarize, write_summary
from .model import ModelSpec, PanelVarModel, response_name

logger = logging.getLogger(__name__)


class PosthocError(ValueError):
    pass


@dataclass
class CorrelationPosterior:
    label: str
    values: np.ndarray
    mean: float
    lower: float
    upper: float
    lower80: float
    upper80: float

    @property
    def significant95(self) -> bool:
        return self.lower > 0 or self.upper < 0

    @property
    def significant80(self) -> bool:
        return self.lower80 > 0 or self.upper80 < 0


def _summarize_corr(label: str, values: np.ndarray) -> CorrelationPosterior:
    lo, hi, lo80, hi80 = np.quantile(values, [0.025, 0.975, 0.1, 0.9], method="linear")
    return CorrelationPosterior(label, values, float(values.mean()), float(lo), float(hi),
                                float(lo80), float(hi80))


def _rowwise_pearson(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    num = np.sum(a * b, axis=1)
    den = np.sqrt(np.sum(a * a, axis=1) * np.sum(b * b, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / den
    return np.clip(r, -1.0, 1.0)


def intercept_draws(draws, var: str, countries: Sequence[str] | None = None) -> tuple[np.ndarray, list]:
    """Country intercepts of one response, shape ``(draws, countries)``."""
    var = response_name(var)
    prefix = f"mu.{var}."
    names = list(draws.names)
    cols = [(i, n[len(prefix):]) for i, n in enumerate(names) if n.startswith(prefix)]
    if countries is not None:
        wanted = set(countries)
        cols = [(i, c) for i, c in cols if c in wanted]
    if not cols:
        raise PosthocError(f"draws hold no intercepts for {var}")
    idx = [i for i, _ in cols]
    return draws.flat()[:, idx], [c for _, c in cols]


def intercept_correlation(draws, var_a: str, var_b: str) -> CorrelationPosterior:
    """Per-draw Pearson correlation across countries of two responses' intercepts."""
    a, ca = intercept_draws(draws, var_a)
    b, cb = intercept_draws(draws, var_b, ca)
    if ca != cb:
        raise PosthocError("intercept blocks list different countries")
    if len(ca) < 3:
        raise PosthocError(f"need at least 3 countries, got {len(ca)}")
    return _summarize_corr(f"{response_name(var_a)}~{response_name(var_b)}",
                           _rowwise_pearson(a, b))


def characteristic_correlation(draws, var: str, feature: pd.Series,
                               name: str | None = None) -> CorrelationPosterior:
    """Per-draw correlation of one response's intercepts with a country feature.

    ``feature`` is indexed by country; countries with a missing value are
    dropped for this pair only.
    """
    name = name or str(feature.name)
    mu, countries = intercept_draws(draws, var)
    vals = pd.Series(feature).reindex(countries).to_numpy(dtype=float)
    keep = np.isfinite(vals)
    if keep.sum() < 3:
        raise PosthocError(f"feature {name!r}: fewer than 3 countries with data")
    x = vals[keep]
    if np.all(x == x[0]):
        raise PosthocError(f"feature {name!r} is constant across countries")
    r = _rowwise_pearson(mu[:, keep], np.broadcast_to(x, (mu.shape[0], x.size)))
    return _summarize_corr(f"{response_name(var)}~{name}", r)


# ---------------------------------------------------------------------------
# PCA and k-means
# ---------------------------------------------------------------------------


@dataclass
class PcaResult:
    features: list
    eigenvalues: np.ndarray
    loadings: np.ndarray       # (features, components), orthonormal columns
    scores: np.ndarray         # (rows, components)
    coordinates: np.ndarray    # loadings scaled by sqrt(eigenvalue)
    index: list = field(default_factory=list)

    @property
    def explained(self) -> np.ndarray:
        return self.eigenvalues / self.eigenvalues.sum()


def pca(features, names: Sequence[str] | None = None) -> PcaResult:
    """Principal components of the column-standardized matrix (correlation PCA)."""
    if isinstance(features, pd.DataFrame):
        names = list(features.columns) if names is None else list(names)
        index = list(features.index)
        X = features.to_numpy(dtype=float)
    else:
        X = np.asarray(features, dtype=float)
        names = list(names) if names is not None else [f"f{j}" for j in range(X.shape[1])]
        index = list(range(X.shape[0]))
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise PosthocError("PCA needs at least 2 rows and 2 columns")
    if not np.all(np.isfinite(X)):
        raise PosthocError("PCA input contains missing values")
    sd = X.std(axis=0, ddof=1)
    for j, s in enumerate(sd):
        if s == 0:
            raise PosthocError(f"column {names[j]!r} is constant")
    Z = (X - X.mean(axis=0)) / sd
    R = Z.T @ Z / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(R)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # sign convention: the largest-magnitude loading of each component is positive
    flip = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(evecs.shape[1])])
    evecs = evecs * np.where(flip == 0, 1.0, flip)
    return PcaResult(names, evals, evecs, Z @ evecs, evecs * np.sqrt(evals), index)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    wcss: float
    history: list              # WCSS after each assignment step of the best restart
    n_iter: int


def _wcss(X, centers, labels) -> float:
    d = X - centers[labels]
    return float(np.sum(d * d))


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int) -> KMeansResult:
    k = centers.shape[0]
    labels = None
    history = []
    for it in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        history.append(_wcss(X, centers, new))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = X[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # reseed an empty cluster on the point worst served by its centre
                far = int(np.argmax(((X - centers[labels]) ** 2).sum(axis=1)))
                centers[j] = X[far]
                labels[far] = j
    return KMeansResult(labels, centers, _wcss(X, centers, labels), history, len(history))


def kmeans(points, k: int, seed: int = 0, restarts: int = 10,
           max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from ``restarts`` random starts; keeps the lowest WCSS."""
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise PosthocError(f"k must lie in 1..{n}, got {k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        start = X[rng.choice(n, size=k, replace=False)].copy()
        res = _lloyd(X, start, max_iter)
        if best is None or res.wcss < best.wcss:
            best = res
    return best


# ---------------------------------------------------------------------------
# Leave-one-country-out
# ---------------------------------------------------------------------------


def phi_names(spec: ModelSpec) -> list[str]:
    return [f"Phi.l{k + 1}.{a}.{b}" for k in range(spec.p) for a in RESPONSES for b in RESPONSES]


def _loco_job(args):
    from .sampler import run_sampling

    data, spec, config = args
    return run_sampling(PanelVarModel(data, spec), config)


class LocoError(RuntimeError):
    def __init__(self, country: str, cause: BaseException):
        super().__init__(f"refit without {country} failed: {cause}")
        self.country = country


def _phi_summary(draws) -> list[ParamSummary]:
    wanted = [n for n in draws.names if n.startswith("Phi.")]
    idx = [draws.names.index(n) for n in wanted]
    return summarize(draws.draws[:, :, idx], wanted)


def loco_sensitivity(data: PanelDataset, spec: ModelSpec, sampler_config,
                     fit: Callable | None = None, workers: int = 1) -> dict[str, list[ParamSummary]]:
    """Refit once per excluded country and summarize the lag coefficients.

    Refits are independent; ``workers > 1`` runs them in a process pool (only
    with the default ``fit``).  A failing refit raises :class:`LocoError`
    carrying the excluded country.
    """
    if data.n_countries < 3:
        raise PosthocError("leave-one-country-out needs at least 3 countries")
    jobs = [(c, data.drop(c)) for c in data.countries]
    out = {}
    if fit is None and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {c: pool.submit(_loco_job, (d, spec, sampler_config)) for c, d in jobs}
            for c, fut in futures.items():
                try:
                    out[c] = _phi_summary(fut.result())
                except Exception as exc:
                    raise LocoError(c, exc) from exc
        return out
    for c, d in jobs:
        logger.info("refitting without %s", c)
        try:
            draws = fit(d) if fit is not None else _loco_job((d, spec, sampler_config))
        except Exception as exc:
            raise LocoError(c, exc) from exc
        out[c] = _phi_summary(draws)
    return out


def write_loco(results: dict[str, list[ParamSummary]], out_dir) -> None:
    for c, summ in results.items():
        d = Path(out_dir) / "loco" / c
        d.mkdir(parents=True, exist_ok=True)
        write_summary(summ, d / "summary.csv")


# ---------------------------------------------------------------------------
# Output tables
# ---------------------------------------------------------------------------


def correlation_table(results: Sequence[tuple[str, str, str, CorrelationPosterior]]) -> pd.DataFrame:
    rows = [(kind, a, b, r.mean, r.lower, r.upper, r.lower80, r.upper80,
             int(r.significant95), int(r.significant80)) for kind, a, b, r in results]
    return pd.DataFrame(rows, columns=["kind", "var_a", "var_b", "mean", "cri_low", "cri_high",
                                       "cri80_low", "cri80_high", "sig95", "sig80"])


def pca_tables(res: PcaResult, n_components: int = 5) -> tuple[pd.DataFrame, pd.DataFrame]:
    k = min(n_components, len(res.eigenvalues))
    cols = [f"Dim.{j + 1}" for j in range(k)]
    load = pd.DataFrame(res.loadings[:, :k], index=res.features, columns=cols)
    load.index.name = "feature"
    eig = pd.DataFrame({"eigenvalue": res.eigenvalues,
                        "explained": res.explained},
                       index=[f"Dim.{j + 1}" for j in range(len(res.eigenvalues))])
    eig.index.name = "component"
    return load, eig


def cluster_table(countries: Sequence[str], km: KMeansResult, scores: np.ndarray) -> pd.DataFrame:
    df = pd.DataFrame(scores, index=list(countries),
                      columns=[f"Dim.{j + 1}" for j in range(scores.shape[1])])
    df.insert(0, "cluster", km.labels + 1)
    df.index.name = "country"
    return df

