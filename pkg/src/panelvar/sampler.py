"""Multi-chain NUTS with dual-averaging step size and diagonal metric adaptation.

The transition is the multinomial no-U-turn sampler: trajectories double
forwards or backwards until the generalized U-turn criterion fires on the
whole tree or on any merged subtree, the new state is drawn with biased
progressive sampling across subtrees and uniformly within them, and an
energy error above 1000 marks the transition divergent.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0
MAX_DIVERGENT_FRACTION = 0.25


class SamplingError(RuntimeError):
    def __init__(self, msg: str, chain: int | None = None):
        super().__init__(msg if chain is None else f"chain {chain}: {msg}")
        self.chain = chain


class Target(Protocol):
    dim: int

    def logp_and_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]: ...


class FunctionTarget:
    """Wrap a ``u -> (logp, grad)`` callable as a sampling target."""

    def __init__(self, fn: Callable[[np.ndarray], tuple[float, np.ndarray]], dim: int,
                 names: Sequence[str] | None = None):
        self.fn = fn
        self.dim = int(dim)
        self.param_names = list(names) if names is not None else [f"x[{i}]" for i in range(dim)]

    def logp_and_grad(self, u):
        return self.fn(u)

    def log_posterior(self, u):
        return self.fn(u)[0]


class GaussianTarget:
    """Independent normal target; picklable, so usable with worker processes."""

    def __init__(self, mean, sd):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.sd = np.broadcast_to(np.asarray(sd, dtype=float), self.mean.shape).copy()
        self.dim = self.mean.size
        self.param_names = [f"x[{i}]" for i in range(self.dim)]

    def logp_and_grad(self, u):
        z = (u - self.mean) / self.sd
        return float(-0.5 * z @ z), -z / self.sd

    def log_posterior(self, u):
        return self.logp_and_grad(u)[0]


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 2000
    iterations: int = 2000
    adapt_delta: float = 0.9
    init_step_size: float = 0.01
    max_treedepth: int = 10
    seed: int = 0
    adapt_metric: bool = True
    init_radius: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 1 or self.iterations < 1:
            raise ValueError("chains, warmup and iterations must be >= 1")
        if not 0.0 < self.adapt_delta < 1.0:
            raise ValueError("adapt_delta must lie in (0, 1)")
        if not self.init_step_size > 0:
            raise ValueError("init_step_size must be positive")
        if self.max_treedepth < 1:
            raise ValueError("max_treedepth must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SamplerConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sampler config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChainResult:
    chain_id: int
    draws: np.ndarray          # (iterations, dim), unconstrained
    accept_stat: np.ndarray
    treedepth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    warmup_divergences: int
    seconds: float


@dataclass
class PosteriorDraws:
    """Post-warmup draws on the constrained scale plus sampler telemetry."""

    draws: np.ndarray          # (chains, iterations, dim)
    names: list
    divergences: np.ndarray    # per chain
    treedepth: np.ndarray      # (chains, iterations)
    step_sizes: np.ndarray
    inv_metric: np.ndarray     # (chains, unconstrained dim)
    accept_stat: np.ndarray    # (chains, iterations)
    n_leapfrog: np.ndarray     # (chains, iterations)
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_iterations(self) -> int:
        return self.draws.shape[1]

    def treedepth_histogram(self) -> dict[int, int]:
        vals, counts = np.unique(self.treedepth, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    def column(self, name: str) -> np.ndarray:
        """Draws of one parameter, shape ``(chains, iterations)``."""
        try:
            return self.draws[:, :, self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def flat(self) -> np.ndarray:
        """All draws stacked chain after chain, shape ``(chains * iterations, dim)``."""
        return self.draws.reshape(-1, self.draws.shape[2])

    def telemetry(self) -> dict:
        return {
            "chains": self.n_chains,
            "iterations": self.n_iterations,
            "divergences": [int(x) for x in self.divergences],
            "treedepth_histogram": {str(k): v for k, v in self.treedepth_histogram().items()},
            "step_sizes": [float(x) for x in self.step_sizes],
            "inv_metric": [[float(x) for x in row] for row in self.inv_metric],
            "mean_accept_stat": [float(x) for x in self.accept_stat.mean(axis=1)],
            "n_leapfrog_total": [int(x) for x in self.n_leapfrog.sum(axis=1)],
            "meta": self.meta,
        }

    def save(self, out_dir) -> None:
        """Write ``draws.csv`` (one row per draw) and ``telemetry.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = ["chain", "draw", "accept_stat__", "treedepth__", "n_leapfrog__",
                  "divergent__"] + list(self.names)
        lines = [",".join(header)]
        div_flags = self.meta.get("divergent_flags")
        for c in range(self.n_chains):
            for i in range(self.n_iterations):
                div = int(div_flags[c][i]) if div_flags is not None else 0
                head = [str(c + 1), str(i + 1), "%.17g" % self.accept_stat[c, i],
                        str(int(self.treedepth[c, i])), str(int(self.n_leapfrog[c, i])), str(div)]
                lines.append(",".join(head + ["%.17g" % x for x in self.draws[c, i]]))
        (out / "draws.csv").write_text("\n".join(lines) + "\n")
        tel = self.telemetry()
        tel["meta"] = {k: v for k, v in self.meta.items() if k != "divergent_flags"}
        (out / "telemetry.json").write_text(json.dumps(tel, indent=1, sort_keys=True))

    @classmethod
    def load(cls, in_dir) -> "PosteriorDraws":
        src = Path(in_dir)
        draws_path = src / "draws.csv"
        if not draws_path.exists():
            raise FileNotFoundError(draws_path)
        with open(draws_path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(draws_path, delimiter=",", skiprows=1, ndmin=2)
        tel = json.loads((src / "telemetry.json").read_text())
        C, n = tel["chains"], tel["iterations"]
        data = data.reshape(C, n, -1)
        meta = tel.get("meta", {})
        meta["divergent_flags"] = data[:, :, 5].astype(bool).tolist()
        return cls(
            draws=data[:, :, 6:], names=header[6:],
            divergences=np.asarray(tel["divergences"]),
            treedepth=data[:, :, 3].astype(int), step_sizes=np.asarray(tel["step_sizes"]),
            inv_metric=np.asarray(tel["inv_metric"]), accept_stat=data[:, :, 2],
            n_leapfrog=data[:, :, 4].astype(int), meta=meta,
        )


# ---------------------------------------------------------------------------
# Adaptation
# ---------------------------------------------------------------------------


class DualAveraging:
    def __init__(self, delta: float, gamma: float = 0.05, t0: float = 10.0,
                 kappa: float = 0.75):
        self.delta, self.gamma, self.t0, self.kappa = delta, gamma, t0, kappa
        self.mu = 0.0
        self.restart()

    def restart(self) -> None:
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        a = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class WindowedVariance:
    """Expanding-window schedule for the diagonal metric.

    An initial fast buffer (75 draws), doubling slow windows starting at 25
    and a terminal fast buffer (50).  Short warmups fall back to 15% / 75% /
    10% of the iterations.
    """

    def __init__(self, n_warmup: int, dim: int, init_buffer: int = 75,
                 term_buffer: int = 50, base_window: int = 25):
        self.n_warmup = n_warmup
        if n_warmup < 20:
            self.enabled = False
            init_buffer = term_buffer = base_window = 0
        else:
            self.enabled = True
            if init_buffer + base_window + term_buffer > n_warmup:
                init_buffer = int(0.15 * n_warmup)
                term_buffer = int(0.1 * n_warmup)
                base_window = n_warmup - (init_buffer + term_buffer)
        self.init_buffer, self.term_buffer, self.base_window = init_buffer, term_buffer, base_window
        self.counter = 0
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self.dim = dim
        self._reset_estimator()

    def _reset_estimator(self) -> None:
        self.n = 0
        self.m = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    def _in_window(self) -> bool:
        return (self.counter >= self.init_buffer
                and self.counter < self.n_warmup - self.term_buffer
                and self.counter != self.n_warmup)

    def _end_of_window(self) -> bool:
        return self.counter == self.next_window and self.counter != self.n_warmup

    def _compute_next_window(self) -> None:
        last = self.n_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last and self.next_window + 2 * self.window_size >= last + 1:
            self.next_window = last

    def update(self, q: np.ndarray) -> np.ndarray | None:
        """Record a warmup draw; returns a new inverse metric at window ends."""
        if not self.enabled:
            self.counter += 1
            return None
        if self._in_window():
            self.n += 1
            delta = q - self.m
            self.m += delta / self.n
            self.m2 += delta * (q - self.m)
        if self._end_of_window():
            self._compute_next_window()
            n = self.n
            var = self.m2 / (n - 1) if n > 1 else np.ones(self.dim)
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset_estimator()
            self.counter += 1
            return var
        self.counter += 1
        return None


# ---------------------------------------------------------------------------
# NUTS transition
# ---------------------------------------------------------------------------


class _State:
    __slots__ = ("q", "p", "grad", "logp")

    def __init__(self, q, p, grad, logp):
        self.q, self.p, self.grad, self.logp = q, p, grad, logp

    def copy(self) -> "_State":
        return _State(self.q, self.p, self.grad, self.logp)


def _log_add(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


class NutsKernel:
    def __init__(self, target: Target, rng: np.random.Generator, inv_metric: np.ndarray,
                 step_size: float, max_treedepth: int):
        self.target = target
        self.rng = rng
        self.inv_metric = inv_metric
        self.step_size = step_size
        self.max_treedepth = max_treedepth

    # -- dynamics ----------------------------------------------------------
    def evaluate(self, q: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            lp, g = self.target.logp_and_grad(q)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError, FloatingPointError):
            return -math.inf, np.zeros_like(q)
        if not (math.isfinite(lp) and np.all(np.isfinite(g))):
            return -math.inf, np.zeros_like(q)
        return float(lp), g

    def hamiltonian(self, z: _State) -> float:
        if z.logp == -math.inf:
            return math.inf
        return -z.logp + 0.5 * float(z.p @ (self.inv_metric * z.p))

    def leapfrog(self, z: _State, eps: float) -> _State:
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self.inv_metric * p
        lp, g = self.evaluate(q)
        p = p + 0.5 * eps * g
        return _State(q, p, g, lp)

    def sample_momentum(self) -> np.ndarray:
        return self.rng.standard_normal(self.inv_metric.size) / np.sqrt(self.inv_metric)

    # -- tree building -----------------------------------------------------
    def _build_tree(self, depth: int, z: _State, sign: int, H0: float):
        """Extend the trajectory by ``2**depth`` steps from ``z``.

        Returns ``(valid, z_end, z_propose, p_sharp_beg, p_sharp_end, rho,
        p_beg, p_end, log_sum_weight)``.
        """
        if depth == 0:
            z = self.leapfrog(z, sign * self.step_size)
            self.n_leapfrog += 1
            h = self.hamiltonian(z)
            if math.isnan(h):
                h = math.inf
            if h - H0 > MAX_DELTA_H:
                self.divergent = True
            lw = H0 - h
            self.sum_metro_prob += 1.0 if lw > 0 else math.exp(lw)
            p_sharp = self.inv_metric * z.p
            return (not self.divergent, z, z, p_sharp, p_sharp, z.p.copy(), z.p, z.p, lw)

        (valid_l, z, prop_l, ps_beg, ps_init_end, rho_l, p_beg, p_init_end,
         lsw_l) = self._build_tree(depth - 1, z, sign, H0)
        if not valid_l:
            return (False, z, prop_l, ps_beg, ps_init_end, rho_l, p_beg, p_init_end, lsw_l)
        (valid_r, z, prop_r, ps_final_beg, ps_end, rho_r, p_final_beg, p_end,
         lsw_r) = self._build_tree(depth - 1, z, sign, H0)
        if not valid_r:
            return (False, z, prop_r, ps_beg, ps_end, rho_l, p_beg, p_end, lsw_l)

        lsw = _log_add(lsw_l, lsw_r)
        if lsw_r > lsw:
            prop = prop_r
        else:
            prop = prop_r if self.rng.uniform() < math.exp(lsw_r - lsw) else prop_l
        rho = rho_l + rho_r
        persist = _no_uturn(ps_beg, ps_end, rho)
        persist &= _no_uturn(ps_beg, ps_final_beg, rho_l + p_final_beg)
        persist &= _no_uturn(ps_init_end, ps_end, rho_r + p_init_end)
        return (persist, z, prop, ps_beg, ps_end, rho, p_beg, p_end, lsw)

    def transition(self, z0: _State) -> tuple[_State, dict]:
        z0 = _State(z0.q, self.sample_momentum(), z0.grad, z0.logp)
        H0 = self.hamiltonian(z0)
        self.n_leapfrog = 0
        self.sum_metro_prob = 0.0
        self.divergent = False

        z_fwd = z_bck = z0
        z_sample = z0
        p_sharp0 = self.inv_metric * z0.p
        p_fwd_fwd = p_fwd_bck = p_bck_fwd = p_bck_bck = z0.p
        ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = p_sharp0
        rho = z0.p.copy()
        log_sum_weight = 0.0
        depth = 0
        while depth < self.max_treedepth:
            if self.rng.uniform() > 0.5:
                rho_bck = rho
                p_bck_fwd, ps_bck_fwd = p_fwd_bck, ps_fwd_bck
                (valid, z_fwd, prop, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd,
                 lsw_sub) = self._build_tree(depth, z_fwd, 1, H0)
            else:
                rho_fwd = rho
                p_fwd_bck, ps_fwd_bck = p_bck_fwd, ps_bck_fwd
                (valid, z_bck, prop, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd, p_bck_bck,
                 lsw_sub) = self._build_tree(depth, z_bck, -1, H0)
            if not valid:
                break
            depth += 1
            if lsw_sub > log_sum_weight:
                z_sample = prop
            elif self.rng.uniform() < math.exp(lsw_sub - log_sum_weight):
                z_sample = prop
            log_sum_weight = _log_add(log_sum_weight, lsw_sub)
            rho = rho_bck + rho_fwd
            persist = _no_uturn(ps_bck_bck, ps_fwd_fwd, rho)
            persist &= _no_uturn(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            persist &= _no_uturn(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break
        accept = self.sum_metro_prob / max(self.n_leapfrog, 1)
        info = {"accept_stat": accept, "treedepth": depth, "n_leapfrog": self.n_leapfrog,
                "divergent": self.divergent, "energy": self.hamiltonian(z_sample)}
        return z_sample, info

    def init_step_size(self, z: _State) -> None:
        """Double or halve the step size until one-step acceptance crosses 0.8."""
        log_08 = math.log(0.8)

        def delta_h() -> float:
            start = _State(z.q, self.sample_momentum(), z.grad, z.logp)
            H0 = self.hamiltonian(start)
            h = self.hamiltonian(self.leapfrog(start, self.step_size))
            return H0 - (math.inf if math.isnan(h) else h)

        direction = 1 if delta_h() > log_08 else -1
        while True:
            dh = delta_h()
            if direction == 1 and not dh > log_08:
                break
            if direction == -1 and not dh < log_08:
                break
            self.step_size = self.step_size * 2.0 if direction == 1 else self.step_size * 0.5
            if self.step_size > 1e7:
                raise SamplingError("step size diverged to infinity during initialization; "
                                    "the posterior may be improper")
            if self.step_size == 0:
                raise SamplingError("step size collapsed to zero during initialization")


def _no_uturn(p_sharp_minus: np.ndarray, p_sharp_plus: np.ndarray, rho: np.ndarray) -> bool:
    return bool(p_sharp_plus @ rho > 0 and p_sharp_minus @ rho > 0)


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


def check_gradient(target: Target, u: np.ndarray, rng: np.random.Generator,
                   n_directions: int = 3, h: float = 1e-5, rtol: float = 1e-3) -> None:
    """Compare the gradient with central differences along random directions."""
    lp, g = target.logp_and_grad(u)
    for _ in range(n_directions):
        d = rng.standard_normal(u.size)
        d /= np.linalg.norm(d)
        fp = target.logp_and_grad(u + h * d)[0]
        fm = target.logp_and_grad(u - h * d)[0]
        fd = (fp - fm) / (2 * h)
        an = float(g @ d)
        noise = 1e-12 * (abs(fp) + abs(fm) + abs(lp)) / h
        if abs(fd - an) > rtol * max(1.0, abs(an), abs(fd)) + noise:
            raise SamplingError(
                f"gradient self-test failed at the initial point: directional derivative "
                f"{an:.6g} vs finite difference {fd:.6g}")


def _chain_rng(seed: int, chain_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain_id)]))


def _initial_point(target: Target, rng: np.random.Generator, radius: float,
                   chain_id: int) -> np.ndarray:
    for _ in range(100):
        u = rng.uniform(-radius, radius, size=target.dim)
        try:
            lp, g = target.logp_and_grad(u)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            continue
        if math.isfinite(lp) and np.all(np.isfinite(g)):
            return u
    raise SamplingError("no finite initial point after 100 attempts", chain_id)


def run_chain(target: Target, config: SamplerConfig, chain_id: int = 0) -> ChainResult:
    """Warm up and sample one chain; the RNG stream is keyed by (seed, chain_id)."""
    t_start = time.perf_counter()
    rng = _chain_rng(config.seed, chain_id)
    dim = target.dim
    u = _initial_point(target, rng, config.init_radius, chain_id)
    check_gradient(target, u, rng)
    lp, g = target.logp_and_grad(u)
    kernel = NutsKernel(target, rng, np.ones(dim), config.init_step_size, config.max_treedepth)
    z = _State(u, np.zeros(dim), g, lp)
    kernel.init_step_size(z)
    da = DualAveraging(config.adapt_delta)
    da.mu = math.log(10.0 * kernel.step_size)
    windows = WindowedVariance(config.warmup, dim) if config.adapt_metric else None

    warm_div = 0
    for it in range(config.warmup):
        z, info = kernel.transition(z)
        warm_div += info["divergent"]
        kernel.step_size = da.update(info["accept_stat"])
        if windows is not None:
            var = windows.update(z.q)
            if var is not None:
                kernel.inv_metric = var
                kernel.init_step_size(z)
                da.mu = math.log(10.0 * kernel.step_size)
                da.restart()
    kernel.step_size = da.final()
    logger.debug("chain %d: warmup done, step size %.4g, %d warmup divergences",
                 chain_id, kernel.step_size, warm_div)

    n = config.iterations
    draws = np.empty((n, dim))
    stats = {k: np.empty(n) for k in ("accept_stat", "treedepth", "n_leapfrog",
                                     "divergent", "energy")}
    for it in range(n):
        z, info = kernel.transition(z)
        draws[it] = z.q
        for k in stats:
            stats[k][it] = info[k]
    n_div = int(stats["divergent"].sum())
    if n_div > MAX_DIVERGENT_FRACTION * n:
        raise SamplingError(
            f"{n_div} of {n} post-warmup transitions diverged; increase adapt_delta "
            f"(currently {config.adapt_delta}) or reparameterize", chain_id)
    return ChainResult(
        chain_id=chain_id, draws=draws, accept_stat=stats["accept_stat"],
        treedepth=stats["treedepth"].astype(int), n_leapfrog=stats["n_leapfrog"].astype(int),
        divergent=stats["divergent"].astype(bool), energy=stats["energy"],
        step_size=kernel.step_size, inv_metric=kernel.inv_metric.copy(),
        warmup_divergences=warm_div, seconds=time.perf_counter() - t_start,
    )


def _run_chain_job(args):
    target, config, chain_id = args
    try:
        return run_chain(target, config, chain_id)
    except SamplingError as exc:
        if exc.chain is None:
            raise SamplingError(str(exc), chain_id) from exc
        raise
    except Exception as exc:
        raise SamplingError(f"{type(exc).__name__}: {exc}", chain_id) from exc


def _constrain(target: Target, draws: np.ndarray) -> np.ndarray:
    fn = getattr(target, "constrain_flat", None)
    if fn is None:
        return draws
    return np.stack([fn(u) for u in draws])


def run_sampling(target: Target, config: SamplerConfig) -> PosteriorDraws:
    """Run ``config.chains`` independent chains and collect constrained draws."""
    jobs = [(target, config, c) for c in range(config.chains)]
    t0 = time.perf_counter()
    if config.threads > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, config.chains)) as pool:
            results = list(pool.map(_run_chain_job, jobs))
    else:
        results = [_run_chain_job(j) for j in jobs]
    names = list(getattr(target, "param_names", [f"x[{i}]" for i in range(target.dim)]))
    draws = np.stack([_constrain(target, r.draws) for r in results])
    out = PosteriorDraws(
        draws=draws, names=names,
        divergences=np.array([int(r.divergent.sum()) for r in results]),
        treedepth=np.stack([r.treedepth for r in results]),
        step_sizes=np.array([r.step_size for r in results]),
        inv_metric=np.stack([r.inv_metric for r in results]),
        accept_stat=np.stack([r.accept_stat for r in results]),
        n_leapfrog=np.stack([r.n_leapfrog for r in results]),
        meta={"config": config.to_dict(),
              "warmup_divergences": [r.warmup_divergences for r in results],
              "chain_seconds": [r.seconds for r in results],
              "wall_seconds": time.perf_counter() - t0,
              "divergent_flags": [r.divergent.tolist() for r in results]},
    )
    return out
