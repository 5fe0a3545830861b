"""Log posterior of the partially pooled panel VAR and its gradient.

The likelihood is evaluated through sufficient statistics: with every
regressor (lags, NPI levels and changes, variant dummies, vaccination and
the country one-hot block) stacked into a design ``V`` and the coefficient
matrix ``G``, the residual cross-product is

    S = Y'Y - G V'Y - (G V'Y)' + G (V'V) G'

so one evaluation costs a few 4 x (P + C) matrix products regardless of
the panel length.  Design rows are ordered country by country, then by
week; ``V'V`` and ``V'Y`` are accumulated once in that order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betaln

from .dataset import DEFAULT_NPIS, RESPONSES, VARIANTS, PanelDataset

LOG_2PI = math.log(2.0 * math.pi)
LOG2 = math.log(2.0)
N_RESP = len(RESPONSES)

_ALIASES = {
    "log_r": "log_r", "log r": "log_r", "logr": "log_r",
    "log_ed": "log_ed", "log ed": "log_ed", "loged": "log_ed",
    "d_gdp": "d_gdp", "δgdp": "d_gdp", "Δgdp": "d_gdp", "gdp": "d_gdp", "δ gdp": "d_gdp",
    "d_transit": "d_transit", "δtransit": "d_transit", "Δtransit": "d_transit",
    "transit": "d_transit", "δ transit": "d_transit",
}


class ModelError(ValueError):
    """Dimension or configuration problems in the model layer."""


class NonFiniteDensityError(ArithmeticError):
    """The log posterior evaluated to a non-finite value."""

    def __init__(self, term: str, value: float):
        super().__init__(f"log posterior term {term!r} is non-finite ({value})")
        self.term = term


def response_name(name: str) -> str:
    """Canonical response name for user-facing aliases such as ``"log R"``."""
    key = name.strip().lower().replace("Δ", "δ")
    if key in _ALIASES:
        return _ALIASES[key]
    if name in RESPONSES:
        return name
    raise ModelError(f"unknown response variable {name!r}")


@dataclass
class PriorConfig:
    tau: float = 1.0
    sigma_scale: float = 2.0
    lkj_xi: float = 2.0

    def __post_init__(self):
        if not (self.tau > 0 and self.sigma_scale > 0):
            raise ModelError("prior scales must be positive")
        if not self.lkj_xi >= 1:
            raise ModelError("LKJ concentration must be >= 1")


@dataclass
class ModelSpec:
    """Model structure: lag order, covariate blocks and exclusions."""

    p: int = 1
    npi_names: list = field(default_factory=lambda: list(DEFAULT_NPIS))
    include_levels: bool = True
    include_changes: bool = True
    excluded_predictors: tuple = ()
    priors: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if int(self.p) < 1:
            raise ModelError("lag order p must be >= 1")
        self.p = int(self.p)
        self.npi_names = list(self.npi_names)
        names = sorted({response_name(n) for n in self.excluded_predictors},
                       key=RESPONSES.index)
        self.excluded_predictors = tuple(names)
        if isinstance(self.priors, dict):
            self.priors = PriorConfig(**self.priors)

    @property
    def n_responses(self) -> int:
        return N_RESP

    def to_dict(self) -> dict:
        d = asdict(self)
        d["excluded_predictors"] = list(self.excluded_predictors)
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "ModelSpec":
        d = dict(d or {})
        d.pop("n_responses", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ModelError(f"unknown model config keys {sorted(unknown)}")
        if "priors" in d:
            d["priors"] = PriorConfig(**d["priors"])
        if "excluded_predictors" in d:
            d["excluded_predictors"] = tuple(d["excluded_predictors"])
        return cls(**d)


@dataclass
class ParameterVector:
    """All unknowns on the constrained scale.

    ``Phi`` is stacked per lag as ``(p, 4, 4)`` with ``Phi[k, i, j]`` the
    effect of response ``j`` lagged ``k + 1`` weeks on response ``i``.
    """

    Phi: np.ndarray
    lam: np.ndarray
    delta: np.ndarray
    variant: np.ndarray
    vacc: np.ndarray
    mu: np.ndarray
    sigma_mu: float
    resid_scales: np.ndarray
    corr_chol: np.ndarray

    @property
    def omega(self) -> np.ndarray:
        return self.corr_chol @ self.corr_chol.T

    @property
    def chol_sigma(self) -> np.ndarray:
        return self.resid_scales[:, None] * self.corr_chol

    @property
    def sigma_u(self) -> np.ndarray:
        L = self.chol_sigma
        return L @ L.T


# ---------------------------------------------------------------------------
# Correlation Cholesky factor transform and LKJ density
# ---------------------------------------------------------------------------


def _log1m_tanh2(y: float) -> float:
    """log(1 - tanh(y)^2) without cancellation for large |y|."""
    a = abs(y)
    return 2.0 * (LOG2 - a - math.log1p(math.exp(-2.0 * a)))


def corr_chol_constrain(y: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Map ``k(k-1)/2`` reals to a unit-row lower-triangular factor.

    Canonical partial correlations ``z = tanh(y)`` fill the rows in order.
    Returns the factor and the log absolute Jacobian of the map onto its
    strictly-lower entries.
    """
    L = np.zeros((k, k))
    L[0, 0] = 1.0
    log_jac = 0.0
    pos = 0
    for i in range(1, k):
        logw = 0.0
        for j in range(i):
            yj = float(y[pos])
            l1m = _log1m_tanh2(yj)
            L[i, j] = math.tanh(yj) * math.exp(0.5 * logw)
            log_jac += l1m + 0.5 * logw
            logw += l1m
            pos += 1
        L[i, i] = math.exp(0.5 * logw)
    return L, log_jac


def corr_chol_unconstrain(L: np.ndarray) -> np.ndarray:
    k = L.shape[0]
    out = []
    for i in range(1, k):
        w = 1.0
        for j in range(i):
            out.append(np.arctanh(L[i, j] / math.sqrt(w)))
            w -= L[i, j] ** 2
    return np.asarray(out)


def _corr_chol_backprop(y: np.ndarray, L: np.ndarray, gL: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``y`` of ``f(L(y)) + log_jac(y)`` given ``gL = df/dL``."""
    k = L.shape[0]
    Ll, Gl = L.tolist(), gL.tolist()
    gy = []
    pos = 0
    for i in range(1, k):
        row, grow = Ll[i], Gl[i]
        # tails[m] = sum over j > m of gL[i, j] * L[i, j]
        tails = [0.0] * i
        acc = grow[i] * row[i]
        for m in range(i - 1, -1, -1):
            tails[m] = acc
            acc += grow[m] * row[m]
        sqrt_w = 1.0
        for m in range(i):
            ym = float(y[pos + m])
            z = math.tanh(ym)
            om = math.exp(_log1m_tanh2(ym))
            gy.append(grow[m] * sqrt_w * om - z * (tails[m] + (i - 1 - m)) - 2.0 * z)
            sqrt_w *= math.sqrt(om)
        pos += i
    return np.asarray(gy)


def lkj_log_normalizer(k: int, eta: float) -> float:
    """log of the LKJ normalising constant for ``k x k`` correlation matrices."""
    total = 0.0
    for i in range(1, k):
        b = eta + 0.5 * (k - i - 1)
        total += (2.0 * eta - 2.0 + k - i) * (k - i) * LOG2 + (k - i) * betaln(b, b)
    return total


def lkj_corr_chol_logpdf(L: np.ndarray, eta: float) -> float:
    k = L.shape[0]
    i = np.arange(1, k)
    coef = k - i - 1 + 2.0 * eta - 2.0
    return float(np.sum(coef * np.log(np.diag(L)[1:])) - lkj_log_normalizer(k, eta))


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------


class Layout:
    """Positions of each parameter block in the flat vectors."""

    def __init__(self, spec: ModelSpec, countries: Sequence[str]):
        self.spec = spec
        self.countries = list(countries)
        p, K, C = spec.p, len(spec.npi_names), len(self.countries)
        excl = {RESPONSES.index(n) for n in spec.excluded_predictors}
        mask = np.ones((p, N_RESP, N_RESP), dtype=bool)
        for j in excl:
            mask[:, :, j] = False
            mask[:, j, j] = True
        self.phi_mask = mask
        self.n_npi = K
        sizes = [
            ("phi", int(mask.sum())),
            ("lam", N_RESP * K if spec.include_levels else 0),
            ("delta", N_RESP * K if spec.include_changes else 0),
            ("variant", N_RESP * len(VARIANTS)),
            ("vacc", N_RESP),
            ("mu", N_RESP * C),
            ("sigma_mu", 1),
            ("sigma", N_RESP),
            ("corr", N_RESP * (N_RESP - 1) // 2),
        ]
        self.slices: dict[str, slice] = {}
        pos = 0
        for name, n in sizes:
            self.slices[name] = slice(pos, pos + n)
            pos += n
        self.dim = pos
        self.n_coef = self.slices["vacc"].stop

    def __getitem__(self, name: str) -> slice:
        return self.slices[name]

    @property
    def names(self) -> list[str]:
        """Names of the constrained flat vector (see :meth:`PanelVarModel.flatten`)."""
        spec, R = self.spec, RESPONSES
        out = []
        for k, i, j in zip(*np.nonzero(self.phi_mask)):
            out.append(f"Phi.l{k + 1}.{R[i]}.{R[j]}")
        if spec.include_levels:
            out += [f"lambda.{R[i]}.{n}" for i in range(N_RESP) for n in spec.npi_names]
        if spec.include_changes:
            out += [f"delta.{R[i]}.{n}" for i in range(N_RESP) for n in spec.npi_names]
        out += [f"variant.{R[i]}.{v}" for i in range(N_RESP) for v in VARIANTS]
        out += [f"vacc.{R[i]}" for i in range(N_RESP)]
        out += [f"mu.{R[i]}.{c}" for i in range(N_RESP) for c in self.countries]
        out.append("sigma_mu")
        out += [f"sigma.{R[i]}" for i in range(N_RESP)]
        out += [f"Omega.{R[i]}.{R[j]}" for i in range(1, N_RESP) for j in range(i)]
        return out


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class PanelVarModel:
    """Log posterior over the unconstrained parameter vector.

    Unconstrained layout: free ``Phi`` entries, NPI level and change
    coefficients, variant and vaccination coefficients (all row-major,
    response first), country intercepts (response-major), ``log sigma_mu``,
    ``log`` residual scales and the canonical-partial-correlation block.
    """

    def __init__(self, data: PanelDataset, spec: ModelSpec):
        if list(data.npi_names) != list(spec.npi_names):
            raise ModelError(
                f"panel NPIs {list(data.npi_names)} do not match spec {list(spec.npi_names)}")
        self.data = data
        self.spec = spec
        self.layout = Layout(spec, data.countries)
        self._build_design()
        self._build_index()

    # -- design ----------------------------------------------------------
    def _row_regressors(self, panel, t: int) -> np.ndarray:
        spec = self.spec
        parts = [panel.Y[t - k] for k in range(1, spec.p + 1)]
        if spec.include_levels:
            parts.append(panel.X_level[t])
        if spec.include_changes:
            parts.append(panel.X_change[t])
        parts.append(panel.variant[t])
        parts.append(panel.vacc[t:t + 1])
        return np.concatenate(parts)

    def _build_design(self) -> None:
        p = self.spec.p
        rows, ys, cidx, tidx = [], [], [], []
        for ci, c in enumerate(self.data.countries):
            panel = self.data[c]
            for t in range(p, len(panel)):
                rows.append(self._row_regressors(panel, t))
                ys.append(panel.Y[t])
                cidx.append(ci)
                tidx.append(t)
        if not rows:
            raise ModelError("panel has no rows with lagged responses")
        W = np.asarray(rows)
        C = self.data.n_countries
        E = np.zeros((len(rows), C))
        E[np.arange(len(rows)), cidx] = 1.0
        self.W = W
        self.V = np.hstack([W, E])
        self.Y = np.asarray(ys)
        self.row_country = np.asarray(cidx)
        self.row_week = np.asarray(tidx)
        self.n_obs = len(rows)
        self.n_design = W.shape[1]
        self.VtV = self.V.T @ self.V
        self.VtY = self.V.T @ self.Y
        self.YtY = self.Y.T @ self.Y

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def param_names(self) -> list[str]:
        return self.layout.names

    # -- transforms ------------------------------------------------------
    def constrain(self, u: np.ndarray) -> ParameterVector:
        u = self._check(u)
        L = self.layout
        spec = self.spec
        C = self.data.n_countries
        Phi = np.zeros((spec.p, N_RESP, N_RESP))
        Phi[L.phi_mask] = u[L["phi"]]
        lam = u[L["lam"]].reshape(N_RESP, -1) if spec.include_levels else np.zeros((N_RESP, 0))
        delta = u[L["delta"]].reshape(N_RESP, -1) if spec.include_changes else np.zeros((N_RESP, 0))
        corr, _ = corr_chol_constrain(u[L["corr"]], N_RESP)
        return ParameterVector(
            Phi=Phi, lam=lam, delta=delta,
            variant=u[L["variant"]].reshape(N_RESP, len(VARIANTS)).copy(),
            vacc=u[L["vacc"]].copy(),
            mu=u[L["mu"]].reshape(N_RESP, C).copy(),
            sigma_mu=float(np.exp(u[L["sigma_mu"]][0])),
            resid_scales=np.exp(u[L["sigma"]]),
            corr_chol=corr,
        )

    def unconstrain(self, theta: ParameterVector) -> np.ndarray:
        L = self.layout
        u = np.empty(self.dim)
        u[L["phi"]] = np.asarray(theta.Phi)[L.phi_mask]
        if self.spec.include_levels:
            u[L["lam"]] = np.ravel(theta.lam)
        if self.spec.include_changes:
            u[L["delta"]] = np.ravel(theta.delta)
        u[L["variant"]] = np.ravel(theta.variant)
        u[L["vacc"]] = theta.vacc
        u[L["mu"]] = np.ravel(theta.mu)
        u[L["sigma_mu"]] = math.log(theta.sigma_mu)
        u[L["sigma"]] = np.log(theta.resid_scales)
        u[L["corr"]] = corr_chol_unconstrain(theta.corr_chol)
        return u

    def flatten(self, theta: ParameterVector) -> np.ndarray:
        """Constrained flat vector matching :attr:`param_names`."""
        L = self.layout
        out = self.unconstrain(theta)
        out[L["sigma_mu"]] = theta.sigma_mu
        out[L["sigma"]] = theta.resid_scales
        om = theta.omega
        out[L["corr"]] = [om[i, j] for i in range(1, N_RESP) for j in range(i)]
        return out

    def unflatten(self, vec: np.ndarray) -> ParameterVector:
        L = self.layout
        u = np.array(vec, dtype=float)
        om = np.eye(N_RESP)
        om[np.tril_indices(N_RESP, -1)] = u[L["corr"]]
        om = np.tril(om) + np.tril(om, -1).T
        u[L["sigma_mu"]] = np.log(u[L["sigma_mu"]])
        u[L["sigma"]] = np.log(u[L["sigma"]])
        u[L["corr"]] = corr_chol_unconstrain(np.linalg.cholesky(om))
        return self.constrain(u)

    def constrain_flat(self, u: np.ndarray) -> np.ndarray:
        return self.flatten(self.constrain(u))

    def coef_matrix(self, theta: ParameterVector) -> np.ndarray:
        """``G`` with ``V @ G.T`` the conditional mean of every design row."""
        parts = [theta.Phi[k] for k in range(self.spec.p)]
        if self.spec.include_levels:
            parts.append(theta.lam)
        if self.spec.include_changes:
            parts.append(theta.delta)
        parts += [theta.variant, theta.vacc[:, None], theta.mu]
        return np.hstack(parts)

    # -- density ---------------------------------------------------------
    def _check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ModelError(f"parameter vector has shape {u.shape}, expected ({self.dim},)")
        return u

    def log_density_terms(self, u: np.ndarray) -> dict[str, float]:
        return self._evaluate(u, grad=False)[0]

    def log_posterior(self, u: np.ndarray) -> float:
        terms = self.log_density_terms(u)
        return _total(terms)

    def grad_log_posterior(self, u: np.ndarray) -> np.ndarray:
        return self._evaluate(u, grad=True)[1]

    def logp_and_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        terms, g = self._evaluate(u, grad=True)
        return _total(terms), g

    def _build_index(self) -> None:
        """Map the coefficient and intercept blocks of ``u`` into ``G``."""
        L, spec = self.layout, self.spec
        ncol = self.n_design + self.data.n_countries
        cols = np.arange(ncol)
        pos = np.arange(N_RESP * ncol).reshape(N_RESP, ncol)
        blocks = []
        col = 0
        phi_pos = np.stack([pos[:, col + N_RESP * k: col + N_RESP * (k + 1)] for k in range(spec.p)])
        blocks.append(phi_pos[L.phi_mask])
        col += N_RESP * spec.p
        for flag in (spec.include_levels, spec.include_changes):
            if flag:
                blocks.append(pos[:, col:col + L.n_npi].ravel())
                col += L.n_npi
        blocks.append(pos[:, col:col + len(VARIANTS)].ravel())
        col += len(VARIANTS)
        blocks.append(pos[:, col])
        col += 1
        blocks.append(pos[:, col:].ravel())
        self._gmap = np.concatenate(blocks)
        self._ncol = len(cols)
        self._n_mu = L["mu"].stop - L["mu"].start
        pri = spec.priors
        self._lkj_const = lkj_log_normalizer(N_RESP, pri.lkj_xi)
        i = np.arange(1, N_RESP)
        self._lkj_coef = N_RESP - i - 1 + 2.0 * pri.lkj_xi - 2.0
        n_coef = L.n_coef
        self._coef_const = -0.5 * n_coef * LOG_2PI - n_coef * math.log(pri.tau)
        self._hc_const = LOG2 - math.log(math.pi * pri.sigma_scale)

    def _evaluate(self, u, grad: bool):
        u = self._check(u)
        L = self.layout
        pri = self.spec.priors
        n_mu = self._n_mu
        n_coef = L.n_coef
        mu_stop = L["mu"].stop
        terms: dict[str, float] = {}

        coef = u[:n_coef]
        mu = u[n_coef:mu_stop]
        log_smu = float(u[mu_stop])
        log_sig = u[mu_stop + 1:mu_stop + 1 + N_RESP]
        y_corr = u[mu_stop + 1 + N_RESP:]
        with np.errstate(over="ignore"):
            smu = float(np.exp(log_smu))
            inv_smu2 = float(np.exp(-2.0 * log_smu))
            sig = np.exp(log_sig)
        Lc, log_jac_corr = corr_chol_constrain(y_corr, N_RESP)
        if not (0.0 < smu < math.inf and np.all((sig > 0) & np.isfinite(sig))):
            raise NonFiniteDensityError("likelihood" if 0.0 < smu < math.inf else "intercept_prior",
                                        -math.inf)

        Gf = np.zeros(N_RESP * self._ncol)
        Gf[self._gmap] = u[:mu_stop]
        G = Gf.reshape(N_RESP, self._ncol)
        GA = G @ self.VtV
        Gb = G @ self.VtY
        S = self.YtY - Gb - Gb.T + GA @ G.T
        LS = sig[:, None] * Lc
        try:
            Linv = np.linalg.inv(LS)
        except np.linalg.LinAlgError:
            raise NonFiniteDensityError("likelihood", -math.inf) from None
        Sinv = Linv.T @ Linv
        N = self.n_obs
        diag_c = np.diag(Lc)
        terms["likelihood"] = float(-0.5 * N * N_RESP * LOG_2PI
                                    - N * (log_sig.sum() + np.log(diag_c).sum())
                                    - 0.5 * np.vdot(Sinv, S))

        tau = pri.tau
        cc = float(coef @ coef)
        mm = float(mu @ mu)
        terms["coef_prior"] = self._coef_const - 0.5 * cc / tau**2
        terms["intercept_prior"] = -0.5 * n_mu * LOG_2PI - n_mu * log_smu - 0.5 * mm * inv_smu2
        s = pri.sigma_scale
        terms["scale_prior"] = (5 * self._hc_const - math.log1p((smu / s) ** 2)
                                - float(np.log1p((sig / s) ** 2).sum()))
        terms["lkj_prior"] = float(self._lkj_coef @ np.log(diag_c[1:])) - self._lkj_const
        terms["jacobian"] = log_smu + float(log_sig.sum()) + log_jac_corr
        for name, val in terms.items():
            if not math.isfinite(val):
                raise NonFiniteDensityError(name, val)
        if not grad:
            return terms, None

        g = np.empty(self.dim)
        gG = Sinv @ (self.VtY.T - GA)
        g[:mu_stop] = gG.ravel()[self._gmap]
        g[:n_coef] -= coef / tau**2
        g[n_coef:mu_stop] -= mu * inv_smu2

        gSigma = 0.5 * (Sinv @ S @ Sinv) - 0.5 * N * Sinv
        gLS = np.tril(2.0 * gSigma @ LS)
        g_sig = (gLS * Lc).sum(axis=1)
        gLc = sig[:, None] * gLS
        i = np.arange(1, N_RESP)
        gLc[i, i] += self._lkj_coef / diag_c[1:]

        g[mu_stop] = -n_mu + mm * inv_smu2 - 2.0 / (1.0 + (s / smu) ** 2) + 1.0
        g[mu_stop + 1:mu_stop + 1 + N_RESP] = g_sig * sig - 2.0 / (1.0 + (s / sig) ** 2) + 1.0
        g[mu_stop + 1 + N_RESP:] = _corr_chol_backprop(y_corr, Lc, gLc)
        return terms, g

    # -- observation-level quantities -----------------------------------
    def row_means(self, theta: ParameterVector) -> np.ndarray:
        """Conditional mean of each design row, shape ``(n_obs, 4)``."""
        return self.V @ self.coef_matrix(theta).T

    def pointwise_loglik(self, theta: ParameterVector) -> np.ndarray:
        """Multivariate normal log density of each design row."""
        R = self.Y - self.row_means(theta)
        LS = theta.chol_sigma
        Z = np.linalg.solve(LS, R.T)
        return (-0.5 * N_RESP * LOG_2PI - np.sum(np.log(np.diag(LS)))
                - 0.5 * np.sum(Z * Z, axis=0))

    def linear_predictor(self, theta: ParameterVector, t: int, c) -> np.ndarray:
        ci = self.data.countries.index(c) if isinstance(c, str) else int(c)
        panel = self.data[self.data.countries[ci]]
        if t < self.spec.p or t >= len(panel):
            raise ModelError(f"week index {t} has no lagged responses (p = {self.spec.p})")
        G = self.coef_matrix(theta)
        x = np.concatenate([self._row_regressors(panel, t), np.eye(self.data.n_countries)[ci]])
        return G @ x


def _total(terms: dict[str, float]) -> float:
    return float(sum(terms.values()))


# Functional façade -----------------------------------------------------------


def log_posterior(u, data: PanelDataset, spec: ModelSpec) -> float:
    return PanelVarModel(data, spec).log_posterior(u)


def grad_log_posterior(u, data: PanelDataset, spec: ModelSpec) -> np.ndarray:
    return PanelVarModel(data, spec).grad_log_posterior(u)


def linear_predictor(theta: ParameterVector, data: PanelDataset, spec: ModelSpec,
                     t: int, c) -> np.ndarray:
    """Conditional mean of week ``t`` for country ``c`` (code or index)."""
    return PanelVarModel(data, spec).linear_predictor(theta, t, c)
