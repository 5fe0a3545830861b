import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from panelvar.irf import (
    IRF_COLUMNS, IrfError, cholesky_lower, girf, irf_from_draws, irf_posterior, ma_coefficients,
    oirf, write_irf_csv,
)
from panelvar.synth import REFERENCE_PHI


def spd(rng, n=4):
    A = rng.standard_normal((n, n))
    return A @ A.T + np.eye(n)


def scaled_to_radius(rng, radius, n=4):
    A = rng.standard_normal((n, n))
    return A * radius / max(abs(np.linalg.eigvals(A)))


def girf_loop_oracle(Phi, Sigma, H):
    out = np.zeros((H + 1, 4, 4))
    P = np.eye(4)
    for h in range(H + 1):
        for j in range(4):
            e = np.zeros(4)
            e[j] = 1.0
            out[h][:, j] = P @ Sigma @ e / np.sqrt(Sigma[j, j])
        P = Phi @ P
    return out


def test_cholesky_examples(rng):
    np.testing.assert_array_equal(cholesky_lower(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    np.testing.assert_array_equal(cholesky_lower(np.eye(4)), np.eye(4))
    S = spd(rng)
    L = cholesky_lower(S)
    assert np.max(np.abs(L @ L.T - S)) < 1e-10
    assert np.all(np.diag(L) > 0) and np.all(np.triu(L, 1) == 0)


def test_cholesky_rejects_bad_input():
    with pytest.raises(IrfError, match="positive definite"):
        cholesky_lower(np.diag([1.0, -1.0]))
    with pytest.raises(IrfError, match="symmetric"):
        cholesky_lower(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_oirf_examples():
    r = oirf(0.5 * np.eye(4), np.eye(4), 2)
    np.testing.assert_allclose(r[2], 0.25 * np.eye(4))
    z = oirf(np.zeros((4, 4)), np.eye(4) * 2.0, 5)
    assert np.all(z[1:] == 0.0)


def test_oirf_decays_for_stable_phi(rng):
    Phi = np.diag(np.full(4, 0.9))  # 0.9**40 is about 0.0148
    S = spd(rng)
    r = oirf(Phi, S, 40)
    assert np.abs(r[40]).max() < 0.015 * np.abs(r[0]).max()


def test_oirf_matches_matrix_power(rng):
    Phi, S = scaled_to_radius(rng, 0.8), spd(rng)
    L = np.linalg.cholesky(S)
    r = oirf(Phi, S, 6)
    for h in range(7):
        np.testing.assert_allclose(r[h], np.linalg.matrix_power(Phi, h) @ L, atol=1e-13)


def test_horizon_zero_is_lower_triangular(rng):
    r = oirf(REFERENCE_PHI, spd(rng), 0)
    assert r.shape == (1, 4, 4)
    assert np.all(r[0][np.triu_indices(4, 1)] == 0.0)


def test_girf_examples(rng):
    D = np.diag([0.3, 2.0, 1.1, 0.7])
    Phi = scaled_to_radius(rng, 0.7)
    np.testing.assert_allclose(girf(Phi, D, 10), oirf(Phi, D, 10), rtol=0, atol=1e-12)
    np.testing.assert_allclose(girf(0.5 * np.eye(4), np.eye(4), 2)[2], 0.25 * np.eye(4))
    S = spd(rng)
    np.testing.assert_allclose(girf(Phi, S, 8), girf_loop_oracle(Phi, S, 8), atol=1e-12)
    with pytest.raises(IrfError):
        girf(Phi, np.diag([1.0, 0.0, 1.0, 1.0]), 3)


def test_girf_shock_column_scaled_by_own_sd(rng):
    S = spd(rng)
    g = girf(np.zeros((4, 4)), S, 0)[0]
    np.testing.assert_allclose(np.diag(g), np.sqrt(np.diag(S)))


def test_ma_coefficients_second_order():
    P1, P2 = 0.5 * np.eye(2), 0.2 * np.eye(2)
    Psi = ma_coefficients(np.stack([P1, P2]), 3)
    np.testing.assert_allclose(Psi[2], P1 @ P1 + P2)
    np.testing.assert_allclose(Psi[3], P1 @ Psi[2] + P2 @ Psi[1])
    with pytest.raises(IrfError):
        ma_coefficients(P1, -1)


def _normal_phi(rng, radius):
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    lam = rng.uniform(-radius, radius, 4)
    lam[0] = radius
    return Q @ np.diag(lam) @ Q.T


@given(seed=st.integers(0, 2**32 - 1), radius=st.floats(0.05, 0.9))
@settings(max_examples=40, deadline=None)
def test_long_run_limit_vanishes(seed, radius):
    rng = np.random.default_rng(seed)
    r = oirf(_normal_phi(rng, radius), spd(rng), 200)
    assert np.abs(r[200]).max() < 1e-6


@given(seed=st.integers(0, 2**32 - 1), radius=st.floats(0.05, 0.95))
@settings(max_examples=40, deadline=None)
def test_long_run_geometric_bound(seed, radius):
    # 0.95**200 is about 3.5e-5, so near the top of the range only the rate is checkable
    rng = np.random.default_rng(seed)
    S = spd(rng)
    r = oirf(_normal_phi(rng, radius), S, 200)
    norms = np.linalg.norm(r, ord=2, axis=(1, 2))
    L2 = np.linalg.norm(np.linalg.cholesky(S), 2)
    assert np.all(norms <= L2 * radius ** np.arange(201) * (1 + 1e-9) + 1e-300)
    assert np.all(np.diff(norms) <= 1e-12 * norms[0])


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_girf_equals_oirf_for_diagonal_sigma(seed):
    rng = np.random.default_rng(seed)
    D = np.diag(rng.uniform(0.01, 5.0, 4))
    Phi = scaled_to_radius(rng, 0.9)
    np.testing.assert_allclose(girf(Phi, D, 12), oirf(Phi, D, 12), rtol=0, atol=1e-12)


def test_degenerate_draws_collapse_bands(rng):
    Phi, S = scaled_to_radius(rng, 0.6), spd(rng)
    res = irf_from_draws([Phi] * 5, [S] * 5, "OIRF", 6)
    point = oirf(Phi, S, 6)
    np.testing.assert_allclose(res.mean, point, atol=1e-15)
    np.testing.assert_allclose(res.lower, point, atol=1e-15)
    np.testing.assert_allclose(res.upper, point, atol=1e-15)


def test_two_draws_span_both_values(rng):
    Phis = [scaled_to_radius(rng, 0.6) for _ in range(2)]
    Ss = [spd(rng) for _ in range(2)]
    res = irf_from_draws(Phis, Ss, "GIRF", 4)
    a, b = girf(Phis[0], Ss[0], 4), girf(Phis[1], Ss[1], 4)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    # 2.5% and 97.5% linear quantiles of two values
    np.testing.assert_allclose(res.lower, lo + 0.025 * (hi - lo), atol=1e-14)
    np.testing.assert_allclose(res.upper, lo + 0.975 * (hi - lo), atol=1e-14)
    assert np.all(res.lower <= res.mean) and np.all(res.mean <= res.upper)


def test_posterior_mean_tracks_truth(rng):
    S = np.diag([0.04, 0.09, 0.01, 0.02])
    n = 400
    Phis = REFERENCE_PHI + 0.01 * rng.standard_normal((n, 4, 4))
    res = irf_from_draws(Phis, [S] * n, "OIRF", 8)
    truth = oirf(REFERENCE_PHI, S, 8)
    mc = res.responses.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(res.mean - truth) <= 2 * mc + 1e-3 * np.abs(truth).max())


def test_empty_and_unknown_kind():
    with pytest.raises(IrfError):
        irf_from_draws(np.zeros((0, 4, 4)), np.zeros((0, 4, 4)))
    with pytest.raises(IrfError):
        irf_from_draws([np.eye(4)], [np.eye(4)], "FEVD")


def test_irf_posterior_from_model_draws(tiny, tmp_path):
    from panelvar.sampler import PosteriorDraws

    data, spec, model = tiny
    rng = np.random.default_rng(1)
    flat = np.stack([model.constrain_flat(0.1 * rng.standard_normal(model.dim)) for _ in range(6)])
    d = PosteriorDraws(draws=flat.reshape(2, 3, -1), names=model.param_names,
                       divergences=np.zeros(2), treedepth=np.zeros((2, 3), int),
                       step_sizes=np.ones(2), inv_metric=np.ones((2, model.dim)),
                       accept_stat=np.ones((2, 3)), n_leapfrog=np.ones((2, 3), int))
    res = irf_posterior(d, model, "OIRF", 5)
    assert res.responses.shape == (6, 6, 4, 4)
    th = model.unflatten(flat[4])
    np.testing.assert_allclose(res.responses[4], oirf(th.Phi, th.sigma_u, 5), atol=1e-14)
    write_irf_csv([res], tmp_path / "irf.csv")
    lines = (tmp_path / "irf.csv").read_text().splitlines()
    assert lines[0] == ",".join(IRF_COLUMNS)
    assert len(lines) == 1 + 6 * 16
