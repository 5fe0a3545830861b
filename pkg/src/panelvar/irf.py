"""Orthogonalised and generalised impulse responses.

Shocks are identified recursively in the fixed response order (log R, log
ED, ΔGDP, ΔTransit): a variable is contemporaneously unaffected by shocks
to the variables ordered after it.  Exogenous covariates are held at zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import RESPONSES

DEFAULT_HORIZON = 20


class IrfError(ValueError):
    pass


def cholesky_lower(Sigma) -> np.ndarray:
    S = np.asarray(Sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise IrfError("covariance must be a square matrix")
    if not np.allclose(S, S.T, rtol=1e-12, atol=1e-14):
        raise IrfError("covariance is not symmetric")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise IrfError("covariance is not positive definite") from exc
    return np.tril(L)


def ma_coefficients(Phi, H: int) -> np.ndarray:
    """Moving-average matrices ``Psi_0..Psi_H`` of the VAR (``Psi_h = Phi^h`` when p = 1)."""
    Phi = np.asarray(Phi, dtype=float)
    if Phi.ndim == 2:
        Phi = Phi[None]
    if H < 0:
        raise IrfError("horizon must be non-negative")
    p, n, _ = Phi.shape
    Psi = np.zeros((H + 1, n, n))
    Psi[0] = np.eye(n)
    for h in range(1, H + 1):
        acc = np.zeros((n, n))
        for k in range(1, min(h, p) + 1):
            acc += Phi[k - 1] @ Psi[h - k]
        Psi[h] = acc
    return Psi


def oirf(Phi, Sigma, H: int = DEFAULT_HORIZON) -> np.ndarray:
    """Responses to one-standard-deviation orthogonal shocks, shape ``(H+1, n, n)``.

    Entry ``[h, i, j]`` is the response of variable ``i`` at horizon ``h``
    to a shock in variable ``j``.
    """
    L = cholesky_lower(Sigma)
    return ma_coefficients(Phi, H) @ L


def girf(Phi, Sigma, H: int = DEFAULT_HORIZON) -> np.ndarray:
    """Generalised responses: column ``j`` is ``Psi_h Sigma e_j / sqrt(Sigma_jj)``."""
    S = np.asarray(Sigma, dtype=float)
    d = np.diag(S)
    if np.any(d <= 0):
        raise IrfError("covariance diagonal must be positive")
    return ma_coefficients(Phi, H) @ (S / np.sqrt(d)[None, :])


@dataclass
class IrfResult:
    kind: str
    horizons: np.ndarray
    responses: np.ndarray      # (draws, H+1, n, n)
    mean: np.ndarray           # (H+1, n, n)
    lower: np.ndarray
    upper: np.ndarray
    names: tuple = RESPONSES

    def to_rows(self) -> list[tuple]:
        rows = []
        for h in self.horizons:
            for i, ri in enumerate(self.names):
                for j, rj in enumerate(self.names):
                    rows.append((self.kind, int(h), ri, rj, self.mean[h, i, j],
                                 self.lower[h, i, j], self.upper[h, i, j]))
        return rows


IRF_COLUMNS = ("kind", "horizon", "response", "shock", "mean", "cri_low", "cri_high")


def irf_from_draws(Phis, Sigmas, kind: str = "OIRF", H: int = DEFAULT_HORIZON,
                   level: float = 0.95) -> IrfResult:
    """Per-draw IRFs summarized by their mean and equal-tailed quantiles."""
    kind = kind.upper()
    fn = {"OIRF": oirf, "GIRF": girf}.get(kind)
    if fn is None:
        raise IrfError(f"unknown IRF kind {kind!r}")
    Phis = np.asarray(Phis, dtype=float)
    Sigmas = np.asarray(Sigmas, dtype=float)
    if len(Phis) == 0:
        raise IrfError("no posterior draws")
    resp = np.stack([fn(P, S, H) for P, S in zip(Phis, Sigmas)])
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(resp, [a, 1.0 - a], axis=0, method="linear")
    return IrfResult(kind, np.arange(H + 1), resp, resp.mean(axis=0), lo, hi)


def irf_posterior(draws, model, kind: str = "OIRF", H: int = DEFAULT_HORIZON) -> IrfResult:
    """IRF bands from :class:`PosteriorDraws` using ``model`` to decode each draw."""
    flat = draws.flat()
    if flat.shape[0] == 0:
        raise IrfError("no posterior draws")
    thetas = [model.unflatten(v) for v in flat]
    return irf_from_draws([t.Phi for t in thetas], [t.sigma_u for t in thetas], kind, H)


def write_irf_csv(results, path) -> None:
    lines = [",".join(IRF_COLUMNS)]
    for res in results:
        for r in res.to_rows():
            lines.append(",".join(list(map(str, r[:4])) + ["%.17g" % x for x in r[4:]]))
    Path(path).write_text("\n".join(lines) + "\n")
