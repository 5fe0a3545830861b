import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from panelvar.diagnostics import (
    DiagnosticsError, ParamSummary, convergence_report, ess_bulk, read_summary, relative_ess,
    split_rhat, summarize, summarize_array, write_summary,
)


def ar1(phi, n, chains, rng):
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains) / math.sqrt(1 - phi ** 2)
    eps = rng.standard_normal((chains, n))
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + eps[:, t]
    return x


# -- independent reference: plain loops, scipy quantile function ------------

def oracle_rhat(x):
    x = np.asarray(x, float)
    half = x.shape[1] // 2
    s = [list(c[:half]) for c in x] + [list(c[x.shape[1] - half:]) for c in x]

    def normal_scores(chs):
        flat = sorted((v, i, j) for i, c in enumerate(chs) for j, v in enumerate(c))
        N = len(flat)
        out = [[0.0] * len(c) for c in chs]
        k = 0
        while k < N:
            e = k
            while e + 1 < N and flat[e + 1][0] == flat[k][0]:
                e += 1
            r = (k + e) / 2 + 1
            for q in range(k, e + 1):
                out[flat[q][1]][flat[q][2]] = norm.ppf((r - 0.375) / (N + 0.25))
            k = e + 1
        return out

    def basic(chs):
        m, n = len(chs), len(chs[0])
        means = [sum(c) / n for c in chs]
        grand = sum(means) / m
        W = sum(sum((v - mu) ** 2 for v in c) / (n - 1) for c, mu in zip(chs, means)) / m
        B = n * sum((mu - grand) ** 2 for mu in means) / (m - 1)
        return math.sqrt(((n - 1) / n * W + B / n) / W)

    med = float(np.median(np.array(s)))
    folded = [[abs(v - med) for v in c] for c in s]
    return max(basic(normal_scores(s)), basic(normal_scores(folded)))


def test_rhat_matches_loop_oracle(rng):
    x = rng.standard_normal((3, 101)) + np.array([[0.0], [0.2], [-0.1]])
    assert split_rhat(x) == pytest.approx(oracle_rhat(x), rel=1e-12)
    x[1, 10:20] = 0.5  # ties
    assert split_rhat(x) == pytest.approx(oracle_rhat(x), rel=1e-12)


def test_rhat_examples(rng):
    same = rng.standard_normal((2, 2000))
    # same-distribution chains: at most sampling noise below 1
    assert 1.0 - 1e-3 <= split_rhat(same) <= 1.01
    apart = rng.standard_normal((2, 2000)) + np.array([[0.0], [10.0]])
    assert split_rhat(apart) > 1.1
    assert split_rhat(np.full((2, 100), 3.3)) == 1.0


def test_rhat_detects_trend_within_chain():
    x = np.linspace(0, 5, 400)[None, :] + np.zeros((2, 1))
    assert split_rhat(x) > 1.5


def test_rhat_needs_four_per_half():
    with pytest.raises(DiagnosticsError):
        split_rhat(np.arange(7.0))


@given(a=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-3), b=st.floats(-1e3, 1e3))
@settings(max_examples=30, deadline=None)
def test_rhat_affine_invariant(a, b):
    x = np.random.default_rng(0).standard_normal((2, 200))
    # folding around the median can flip exact ties by one ulp, hence not 1e-12
    assert split_rhat(a * x + b) == pytest.approx(split_rhat(x), rel=1e-4)


def test_relative_ess_examples(rng):
    iid = rng.standard_normal((4, 1000))
    assert abs(relative_ess(iid) - 1.0) < 0.15
    slow = ar1(0.9, 4000, 4, rng)
    target = (1 - 0.9) / (1 + 0.9)
    assert target / 2 < relative_ess(slow) < target * 2
    assert relative_ess(np.full((2, 50), 1.0)) == 0.0
    with pytest.raises(DiagnosticsError):
        relative_ess(np.arange(7.0))


def test_ess_monotone_in_autocorrelation():
    vals = []
    for phi in (0.0, 0.5, 0.9):
        vals.append(relative_ess(ar1(phi, 2000, 4, np.random.default_rng(9))))
    assert vals[0] > vals[1] > vals[2]
    # analytic targets (1 - phi)/(1 + phi), loose tolerance
    for v, phi in zip(vals, (0.0, 0.5, 0.9)):
        assert v == pytest.approx((1 - phi) / (1 + phi), rel=0.35)


@given(seed=st.integers(0, 10_000), n=st.integers(8, 300), chains=st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_ess_bounds(seed, n, chains):
    x = np.random.default_rng(seed).standard_normal((chains, n))
    e = ess_bulk(x)
    total = x.size - (x.shape[1] % 2) * chains
    assert 0.0 <= e <= total * math.log10(total) + 1e-9


def test_summary_examples(rng):
    s = summarize_array(np.full((2, 10), 2.5), "c")
    assert (s.mean, s.sd, s.cri_low, s.cri_high) == (2.5, 0.0, 2.5, 2.5)
    z = rng.standard_normal((4, 2500))
    s = summarize_array(z)
    assert s.cri_low == pytest.approx(-1.96, abs=0.08)
    assert s.cri_high == pytest.approx(1.96, abs=0.08)
    out = summarize(rng.standard_normal((2, 50, 2)), ["a", "b"])
    assert [o.name for o in out] == ["a", "b"]


def test_summary_quantiles_are_linear_interpolation():
    s = summarize_array(np.arange(1.0, 11.0)[None, :])
    # order-statistic interpolation on n = 10: position 0.225 and 8.775
    assert s.cri_low == pytest.approx(1.225)
    assert s.cri_high == pytest.approx(9.775)


def test_summary_csv_round_trip(tmp_path, rng):
    out = summarize(rng.standard_normal((2, 40, 3)), ["x", "y", "z"])
    write_summary(out, tmp_path / "summary.csv")
    assert (tmp_path / "summary.csv").read_text().splitlines()[0] == \
        "name,mean,sd,cri_low,cri_high,rhat,rel_ess"
    back = read_summary(tmp_path / "summary.csv")
    assert back == out


def test_convergence_report():
    rows = [ParamSummary("a", 0, 1, -1, 1, 1.001, 0.9), ParamSummary("b", 0, 1, -1, 1, 1.2, 0.3)]
    rep = convergence_report(rows)
    assert rep["n_rhat_fail"] == 1 and rep["rhat_fail"] == ["b"]
    assert rep["max_rhat"] == 1.2 and rep["frac_rel_ess_above_half"] == 0.5
