import numpy as np
import pytest

from pseudopost import _kernels
from pseudopost.errors import ConfigError, NumericalError
from pseudopost.model import (FitConfig, McmcState, b_conditional, fit, init_state,
                              lambda_conditional, m_conditional, tau_conditional, update_B,
                              update_Lambda, update_M, update_psi, update_tau_B)

from conftest import make_sample
from oracles import (dense_b_mean, lambda_logpdf, m_logpdf_scalar, psi_logpdf, quad_mean,
                     tau_logpdf)


def random_state(rng, n, P, D, scale=1.0):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, P - 1))])
    A = rng.standard_normal((D, D))
    Mm = rng.standard_normal((P, P))
    st = McmcState(Psi=rng.standard_normal((n, D)) * scale, B=rng.standard_normal((P, D)),
                   Lambda=A @ A.T + np.eye(D), M=Mm @ Mm.T + np.eye(P),
                   tau_B=float(rng.gamma(2.0)))
    return X, st


# ---------------------------------------------------------------- config

def test_fit_config_validation():
    with pytest.raises(ConfigError, match="burn_in"):
        FitConfig(n_iter=10, burn_in=10).validate()
    with pytest.raises(ConfigError):
        FitConfig(thin=0).validate()
    with pytest.raises(ConfigError, match="fixed"):
        FitConfig(fixed=("Gamma",)).validate()
    assert FitConfig(n_iter=10, burn_in=3, thin=3).retained == 3


# ---------------------------------------------------------------- init

def test_init_zero_counts_and_intercept_only():
    s = make_sample(np.ones((5, 1)), np.zeros((5, 2), dtype=int))
    st = init_state(s)
    np.testing.assert_allclose(st.Psi, np.log(0.5))
    s = make_sample(np.ones((7, 1)), np.ones((7, 3), dtype=int), w=np.arange(1.0, 8.0))
    st = init_state(s)
    np.testing.assert_allclose(st.B, np.log(1.5) * np.ones((1, 3)))
    np.testing.assert_array_equal(st.Lambda, np.eye(3))
    assert st.tau_B == 1.0


def test_init_rejects_empty():
    s = make_sample(np.ones((1, 1)), np.zeros((1, 1), dtype=int))
    s.indices = s.indices[:0]
    with pytest.raises(ConfigError):
        init_state(s)


# ---------------------------------------------------------------- B

def test_b_conditional_matches_dense_solve():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, P, D = rng.integers(25, 201), rng.integers(1, 21), rng.integers(1, 5)
        X, st = random_state(rng, n, P, D)
        w = rng.uniform(0.1, 5.0, n)
        s = make_sample(X, np.zeros((n, D), dtype=int), w)
        mean, _ = b_conditional(st, s, weighted=True)
        ref = dense_b_mean(X, s.normalized_weights, st.Psi, st.tau_B, st.M, st.Lambda)
        assert np.max(np.abs(mean - ref)) <= 1e-10


def test_b_conditional_limits():
    rng = np.random.default_rng(1)
    X, st = random_state(rng, 40, 4, 2)
    B0 = rng.standard_normal((4, 2))
    st.Psi = X @ B0
    st.tau_B = 1e-14
    s = make_sample(X, np.zeros((40, 2), dtype=int))
    mean, _ = b_conditional(st, s, weighted=False)
    np.testing.assert_allclose(mean, B0, atol=1e-8)
    st.Psi = rng.standard_normal((40, 2))
    ols = np.linalg.lstsq(X, st.Psi, rcond=None)[0]
    np.testing.assert_allclose(b_conditional(st, s, False)[0], ols, atol=1e-8)


def test_b_collinear_sample_is_jittered_or_reported():
    X = np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)])
    st = McmcState(np.zeros((6, 1)), np.zeros((3, 1)), np.eye(1), np.eye(3), 1e-300)
    s = make_sample(X, np.zeros((6, 1), dtype=int))
    _, fac = b_conditional(st, s, False)
    assert fac.jitter > 0
    st.M = -np.eye(3) * 1e300
    st.tau_B = 1.0
    with pytest.raises(NumericalError, match="collinear"):
        b_conditional(st, s, False)


def test_b_draw_covariance_is_kronecker():
    rng = np.random.default_rng(2)
    X, st = random_state(rng, 30, 3, 2)
    s = make_sample(X, np.zeros((30, 2), dtype=int), rng.uniform(0.5, 2, 30))
    mean, fac = b_conditional(st, s, True)
    draws = np.array([update_B(st, s, True, rng).ravel(order="F") for _ in range(40000)])
    expected = np.kron(np.linalg.inv(st.Lambda), np.linalg.inv(fac.matrix()))
    np.testing.assert_allclose(draws.mean(0), mean.ravel(order="F"), atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), expected, atol=0.03 * np.abs(expected).max())


# ---------------------------------------------------------------- Lambda, tau, M

def test_lambda_conditional_against_quadrature():
    rng = np.random.default_rng(3)
    n, P = 40, 2
    X, st = random_state(rng, n, P, 1, scale=0.7)
    w = rng.uniform(0.3, 3, n)
    s = make_sample(X, np.zeros((n, 1), dtype=int), w)
    draws = np.array([update_Lambda(st, s, True, rng)[0, 0] for _ in range(100000)])
    resid = (st.Psi - X @ st.B)[:, 0]
    tq = st.tau_B * float(st.B[:, 0] @ st.M @ st.B[:, 0])
    ref = quad_mean(lambda_logpdf(resid, s.normalized_weights, P, tq), 1e-9, 50 * draws.mean())
    assert abs(draws.mean() / ref - 1) < 0.02


def test_lambda_zero_residuals():
    P, D, n = 3, 2, 10
    st = McmcState(np.zeros((n, D)), np.zeros((P, D)), np.eye(D), np.eye(P), 1.0)
    s = make_sample(np.column_stack([np.ones(n), np.eye(n)[:, :2]]), np.zeros((n, D), dtype=int))
    df, scale = lambda_conditional(st, s, True)
    np.testing.assert_allclose(df * scale, (D + 1 + n + P) * np.eye(D))


def test_lambda_scatter_scales_quadratically():
    rng = np.random.default_rng(4)
    X, st = random_state(rng, 20, 2, 2)
    st.B[:] = 0
    s = make_sample(X, np.zeros((20, 2), dtype=int))
    _, s1 = lambda_conditional(st, s, False)
    st.Psi = st.Psi * 3
    _, s3 = lambda_conditional(st, s, False)
    scat1 = np.linalg.inv(s1) - np.eye(2)
    scat3 = np.linalg.inv(s3) - np.eye(2)
    np.testing.assert_allclose(scat3, 9 * scat1, rtol=1e-10)


def test_tau_conditional():
    rng = np.random.default_rng(5)
    P, D = 3, 2
    st = McmcState(np.zeros((1, D)), np.zeros((P, D)), np.eye(D), np.eye(P), 1.0)
    assert tau_conditional(st) == (1 + P * D / 2, 1.0)
    draws = np.array([update_tau_B(st, rng) for _ in range(40000)])
    assert abs(draws.mean() / (1 + P * D / 2) - 1) < 0.02
    st.B = np.array([[1.0, 0], [0, 1.0], [0, 0]])     # tr(Lam B'MB) = 2
    assert tau_conditional(st)[1] == 2.0
    # P = D = 1 against quadrature
    st = McmcState(np.zeros((1, 1)), np.array([[0.8]]), np.array([[1.7]]), np.array([[0.6]]), 1.0)
    draws = np.array([update_tau_B(st, rng) for _ in range(100000)])
    ref = quad_mean(tau_logpdf(1, 1, 1.7 * 0.6 * 0.64), 1e-12, 60)
    assert abs(draws.mean() / ref - 1) < 0.02


def test_m_conditional():
    rng = np.random.default_rng(6)
    P, D = 3, 2
    st = McmcState(np.zeros((1, D)), np.zeros((P, D)), np.eye(D), np.eye(P), 1.0)
    df, scale = m_conditional(st)
    assert df == P + 1 + D
    np.testing.assert_allclose(scale, np.eye(P))
    st.tau_B = 0.0
    st.B = rng.standard_normal((P, D))
    assert np.allclose(m_conditional(st)[1], np.eye(P))
    st = McmcState(np.zeros((1, 1)), np.array([[1.3]]), np.array([[0.9]]), np.array([[1.0]]), 0.7)
    draws = np.array([update_M(st, rng)[0, 0] for _ in range(100000)])
    ref = quad_mean(m_logpdf_scalar(1, 0.7 * 0.9 * 1.69), 1e-12, 80)
    assert abs(draws.mean() / ref - 1) < 0.02


# ---------------------------------------------------------------- psi

def _psi_chain(y, w, mean, lam, sweeps, units=2000, seed=0, start=None):
    """Stationary psi draws for ``units`` identical one-dimensional units."""
    rng = np.random.default_rng(seed)
    X = np.ones((units, 1))
    s = make_sample(X, np.full((units, 1), y, dtype=int))
    s.normalized_weights = np.full(units, float(w))
    st = McmcState(np.full((units, 1), np.log(y + 0.5) if start is None else start),
                   np.array([[mean]]),
                   np.array([[lam]]), np.eye(1), 1.0)
    out = []
    for t in range(sweeps):
        st.Psi = update_psi(st, s, True, rng)
        if t >= 10:
            out.append(st.Psi[:, 0].copy())
    return np.concatenate(out)


@pytest.mark.parametrize("y, w, mean, lam", [(100, 1.0, 3.0, 0.5), (3, 2.0, 0.5, 2.0),
                                             (0, 0.4, -1.0, 1.0)])
def test_psi_stationary_mean_against_quadrature(y, w, mean, lam):
    draws = _psi_chain(y, w, mean, lam, sweeps=60)
    ref = quad_mean(psi_logpdf(y, w, mean, lam), mean - 15, max(mean, np.log(y + 1)) + 15)
    assert abs(draws.mean() - ref) < 0.02 * max(abs(ref), 1.0)


def test_psi_degenerate_prior_stays_at_mean():
    draws = _psi_chain(5, 1.0, 0.7, 1e12, sweeps=15, units=50, start=0.7)
    np.testing.assert_allclose(draws, 0.7, atol=1e-4)


def test_psi_nonfinite_state_raises():
    s = make_sample(np.ones((3, 1)), np.ones((3, 1), dtype=int))
    st = McmcState(np.array([[0.0], [900.0], [0.0]]), np.zeros((1, 1)), np.eye(1), np.eye(1), 1.0)
    with pytest.raises(NumericalError, match="unit 1"):
        update_psi(st, s, True, np.random.default_rng(0))


# ---------------------------------------------------------------- fit

def _toy_sample(rng, n=80, w=None):
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    psi = X @ np.array([[0.5, 1.0], [0.8, -0.3]]) + 0.3 * rng.standard_normal((n, 2))
    return make_sample(X, rng.poisson(np.exp(psi)), w)


def _as_bytes(draws, tmp_path, name):
    p = tmp_path / name
    draws.save_csv(p)
    return p.read_bytes()


def test_uniform_weights_identical_to_unweighted(tmp_path):
    rng = np.random.default_rng(7)
    s = _toy_sample(rng, w=np.full(80, 13.7))
    cfg = dict(n_iter=150, burn_in=50, seed=4)
    a = fit(s, FitConfig(weighted=True, **cfg))
    b = fit(s, FitConfig(weighted=False, **cfg))
    assert _as_bytes(a, tmp_path, "a.csv") == _as_bytes(b, tmp_path, "b.csv")


@pytest.mark.parametrize("c", [0.25, 8.0, 1024.0])
def test_weight_scale_invariance(tmp_path, c):
    rng = np.random.default_rng(8)
    w = rng.uniform(1, 20, 80)
    s1 = _toy_sample(np.random.default_rng(8), w=w)
    s2 = _toy_sample(np.random.default_rng(8), w=c * w)
    cfg = FitConfig(n_iter=120, burn_in=20, seed=1)
    assert _as_bytes(fit(s1, cfg), tmp_path, "a.csv") == _as_bytes(fit(s2, cfg), tmp_path, "b.csv")


def test_fit_is_reproducible_and_thread_invariant(tmp_path):
    s = _toy_sample(np.random.default_rng(9))
    a = fit(s, FitConfig(n_iter=100, burn_in=20, seed=3, n_threads=1))
    b = fit(s, FitConfig(n_iter=100, burn_in=20, seed=3, n_threads=3))
    assert _as_bytes(a, tmp_path, "a.csv") == _as_bytes(b, tmp_path, "b.csv")


def test_draws_respect_invariants():
    s = _toy_sample(np.random.default_rng(10))
    d = fit(s, FitConfig(n_iter=300, burn_in=100, thin=2, seed=0, keep_M=True))
    assert d.n_draws == 100
    assert all(np.linalg.eigvalsh(L).min() > 0 for L in d.Lambda)
    assert all(np.linalg.eigvalsh(M).min() > 0 for M in d.M)
    assert np.all(d.tau_B > 0)
    for name, row in d.summary().items():
        assert row["q025"] <= row["mean"] <= row["q975"], name
    _, names = d.columns()
    assert sum(n.startswith("B[") for n in names) == 4 and "tau_B" in names


def test_conjugate_subcase_matches_closed_form():
    """Psi observed directly, Lambda/tau/M held fixed: B draws are exactly MN."""
    rng = np.random.default_rng(11)
    n, P, D = 60, 3, 2
    X, st = random_state(rng, n, P, D)
    w = rng.uniform(0.5, 3, n)
    s = make_sample(X, np.zeros((n, D), dtype=int), w)
    d = fit(s, FitConfig(n_iter=20000, burn_in=1, seed=2,
                         fixed=("Psi", "Lambda", "tau_B", "M")), init=st)
    ref = dense_b_mean(X, s.normalized_weights, st.Psi, st.tau_B, st.M, st.Lambda)
    _, fac = b_conditional(st, s, True)
    sd = np.sqrt(np.outer(np.diag(np.linalg.inv(fac.matrix())), np.diag(np.linalg.inv(st.Lambda))))
    assert np.all(np.abs(d.B.mean(0) - ref) < 4 * sd / np.sqrt(d.n_draws))


def test_fit_reports_iteration_on_failure():
    s = make_sample(np.ones((3, 1)), np.ones((3, 1), dtype=int))
    st = McmcState(np.array([[0.0], [900.0], [0.0]]), np.zeros((1, 1)), np.eye(1), np.eye(1), 1.0)
    with pytest.raises(NumericalError, match="iteration 0"):
        fit(s, FitConfig(n_iter=5, burn_in=1), init=st)


def test_weighting_widens_intervals_on_informative_sample(small_pop):
    from pseudopost.design import SamplingDesign, compute_inclusion_probs, draw_sample
    design = SamplingDesign("pps", 150)
    s = draw_sample(small_pop, compute_inclusion_probs(small_pop, design), design, 0)
    cfg = dict(n_iter=1500, burn_in=500, seed=0)
    sd_w = fit(s, FitConfig(weighted=True, **cfg)).B[:, 1, 0].std()
    sd_u = fit(s, FitConfig(weighted=False, **cfg)).B[:, 1, 0].std()
    assert sd_w > sd_u
