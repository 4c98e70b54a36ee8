import numpy as np
import pytest

from mimo_ilc.cgpr import (FrfEstimate, RowEstimate, _cholesky_with_jitter, delta_bar_from_variance, estimate_frf,
                           estimate_noise_variance, estimate_row, log_marginal_likelihood, optimize_hyperparameters,
                           prior_estimate, ratio_gpr_reference, select_hyperparameters, uncertainty_bounds,
                           write_frf_csv)
from mimo_ilc.errors import IllConditionedError, InvalidArgument
from mimo_ilc.kernels import SisoKernel
from mimo_ilc.signals import Spectrum, TimeSeries


def spec(grid, data):
    return Spectrum(np.asarray(grid, dtype=float), np.atleast_2d(np.asarray(data, dtype=complex)))


def test_scalar_noiseless_interpolation():
    row = estimate_row(spec([1.0], [2.0]), spec([1.0], [6.0]), (SisoKernel(),), 0.0, [1.0])
    assert row.mean[0, 0] == pytest.approx(3.0, abs=1e-9)
    assert row.variance[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_ratio_reference_examples():
    grid = np.linspace(0, 3, 8)
    I = np.exp(1j * grid) + 0.5
    c = 0.4 - 0.2j
    mean, var = ratio_gpr_reference(spec(grid, I), spec(grid, c * I), SisoKernel(1.0, 2.0), 1e-10, grid)
    assert np.allclose(mean, c, atol=1e-4)
    _, var0 = ratio_gpr_reference(spec([0.0, 1.0], [1.0, 2j]), spec([0.0, 1.0], [1.0, 1.0]), SisoKernel(), 0.0, [1.0])
    assert abs(var0[0]) < 1e-9
    with pytest.raises(InvalidArgument):
        ratio_gpr_reference(spec([0.0, 1.0], [0.0, 1.0]), spec([0.0, 1.0], [1.0, 1.0]), SisoKernel(), 0.1, [0.5])


def test_ratio_equivalence_spot_case():
    rng = np.random.default_rng(3)
    grid = np.sort(rng.uniform(0, 5, 12))
    I = rng.normal(size=12) + 1j * rng.normal(size=12)
    O = rng.normal(size=12) + 1j * rng.normal(size=12)
    k = SisoKernel(0.8, 0.6)
    sigma2 = 0.05
    ev = np.linspace(0, 5, 9)
    row = estimate_row(spec(grid, I), spec(grid, O), (k,), sigma2, ev)
    mean, var = ratio_gpr_reference(spec(grid, I), spec(grid, O), k, sigma2 / np.abs(I) ** 2, ev)
    assert np.allclose(row.mean[:, 0], mean, rtol=1e-9, atol=1e-12)
    assert np.allclose(row.variance[:, 0], var, rtol=1e-9, atol=1e-12)


def test_zero_input_rejected():
    with pytest.raises(InvalidArgument):
        estimate_row(spec([0.0, 1.0], [[1.0, 0.0], [0.0, 0.0]]), spec([0.0, 1.0], [1.0, 1.0]),
                     (SisoKernel(), SisoKernel()), 0.1, [0.5])


def draw_prior(rng, kernel, grid):
    K = kernel.matrix(grid, grid) + 1e-10 * np.eye(grid.size)
    L = np.linalg.cholesky(K)
    return L @ (rng.normal(size=grid.size) + 1j * rng.normal(size=grid.size)) / np.sqrt(2)


def test_two_input_coverage_monte_carlo():
    inside = total = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        grid = np.linspace(0, 4, 20)
        kernels = (SisoKernel(1.0, 0.8), SisoKernel(0.5, 1.2))
        S = np.stack([draw_prior(rng, k, grid) for k in kernels])
        I = rng.normal(size=(2, 20)) + 1j * rng.normal(size=(2, 20))
        sigma2 = 0.05
        noise = np.sqrt(sigma2 / 2) * (rng.normal(size=20) + 1j * rng.normal(size=20))
        O = (S * I).sum(axis=0) + noise
        row = estimate_row(spec(grid, I), spec(grid, O), kernels, sigma2, grid)
        bound = 3 * np.sqrt(row.variance / 2)
        err = row.mean - S.T
        ok = (np.abs(err.real) <= bound) & (np.abs(err.imag) <= bound)
        inside += ok.sum()
        total += ok.size
    assert inside / total >= 0.99


def test_variance_bounded_by_prior_and_monotone_in_noise():
    rng = np.random.default_rng(11)
    grid = np.linspace(0, 6, 15)
    I = rng.normal(size=(2, 15)) + 1j * rng.normal(size=(2, 15))
    O = rng.normal(size=(1, 15)) + 0j
    kernels = (SisoKernel(1.3, 0.5), SisoKernel(0.7, 1.0))
    ev = np.linspace(-1, 7, 40)
    prev = None
    for s2 in [0.0, 1e-3, 0.1, 1.0, 10.0]:
        row = estimate_row(spec(grid, I), spec(grid, O), kernels, s2, ev)
        prior = np.array([1.3 ** 2, 0.7 ** 2])
        assert np.all(row.variance <= prior + 1e-12)
        if prev is not None:
            assert np.all(row.variance >= prev - 1e-12)
        prev = row.variance


def test_prior_estimate():
    row = prior_estimate((SisoKernel(2.0, 1.0), SisoKernel(0.5, 1.0)), [0.0, 1.0])
    assert np.all(row.mean == 0)
    assert np.allclose(row.variance, [[4.0, 0.25], [4.0, 0.25]])


def test_per_frequency_noise_accepted():
    grid = np.linspace(0, 1, 4)
    row = estimate_row(spec(grid, np.ones(4)), spec(grid, np.ones(4)), (SisoKernel(),), [0.1, 0.2, 0.3, 0.4], grid)
    assert row.variance.shape == (4, 1)
    with pytest.raises(InvalidArgument):
        estimate_row(spec(grid, np.ones(4)), spec(grid, np.ones(4)), (SisoKernel(),), -1.0, grid)


def test_cholesky_escalation_and_failure():
    A = np.ones((3, 3))
    L, jitter = _cholesky_with_jitter(A)
    assert jitter > 0 and np.allclose(L @ L.conj().T, A, atol=1e-5)
    with pytest.raises(IllConditionedError) as info:
        _cholesky_with_jitter(np.diag([1.0, -1.0]))
    assert info.value.condition_number == pytest.approx(1.0)


def test_delta_bar_examples():
    est = FrfEstimate(np.array([0.0]), np.zeros((1, 1, 1), complex), np.array([[[0.02]]]), np.array([0.0]))
    assert delta_bar_from_variance(est, 3.0)[0, 0, 0] == pytest.approx(0.3)
    assert delta_bar_from_variance(est, 6.0)[0, 0, 0] == pytest.approx(0.6)
    zero = FrfEstimate(np.array([0.0]), np.zeros((1, 1, 1), complex), np.zeros((1, 1, 1)), np.array([0.0]))
    assert delta_bar_from_variance(zero)[0, 0, 0] == 0
    with pytest.raises(InvalidArgument):
        delta_bar_from_variance(est, 0.0)


def test_uncertainty_bounds_examples():
    assert uncertainty_bounds(np.array([[0.5]]), np.array([[0.1]]))[0, 0] == pytest.approx(0.05)
    db = np.array([[0.1, 0.2], [0.3, 0.4]])
    assert np.allclose(uncertainty_bounds(np.eye(2), db), db)
    assert np.all(uncertainty_bounds(np.eye(2), np.zeros((2, 2))) == 0)
    Sd = np.array([[1 + 1j, 0.5], [0.0, -2.0]])
    brute = np.array([[sum(abs(Sd[k, l]) * db[j, k] for k in range(2)) for l in range(2)] for j in range(2)])
    assert np.allclose(uncertainty_bounds(Sd, db), brute)
    with pytest.raises(InvalidArgument):
        uncertainty_bounds(np.ones((3, 2)), np.ones((2, 2)))


def test_noise_variance_estimates():
    assert np.all(estimate_noise_variance(TimeSeries(np.full((2, 300), 0.4))) < 1e-12)
    rng = np.random.default_rng(5)
    v = 0.002 ** 2
    x = TimeSeries(0.1 + np.sqrt(v) * rng.normal(size=(1, 4000)))
    a = estimate_noise_variance(x.window(0, 19.99))[0]
    b = estimate_noise_variance(x.window(20, 39.99))[0]
    assert abs(a - v) < 0.1 * v and abs(b - a) < 0.25 * a
    assert estimate_noise_variance(x, n_fft=6000)[0] == pytest.approx(6000 * estimate_noise_variance(x)[0])
    with pytest.raises(InvalidArgument):
        estimate_noise_variance(TimeSeries(np.zeros((1, 50))))


def test_noise_scaling_matches_dft():
    rng = np.random.default_rng(9)
    x = rng.normal(scale=0.01, size=(1, 8000))
    X = np.fft.rfft(x[0])[1:-1]
    assert np.mean(np.abs(X) ** 2) == pytest.approx(8000 * 1e-4, rel=0.05)


def test_hyperparameter_search_prefers_truth():
    rng = np.random.default_rng(2)
    grid = np.linspace(0, 8, 60)
    true = SisoKernel(1.0, 1.0)
    S = draw_prior(rng, true, grid)
    I = rng.normal(size=60) + 1j * rng.normal(size=60)
    O = S * I + 0.01 * (rng.normal(size=60) + 1j * rng.normal(size=60))
    sf, ls = select_hyperparameters(spec(grid, I), spec(grid, O), 2e-4, (0.1, 1.0, 10.0), (0.1, 1.0, 10.0))
    assert (sf, ls) == (1.0, 1.0)
    start = (SisoKernel(0.3, 0.3),)
    tuned = optimize_hyperparameters(spec(grid, I), spec(grid, O), 2e-4, start)
    ll = lambda k: log_marginal_likelihood(spec(grid, I), spec(grid, O), k, 2e-4)
    assert ll(tuned) >= ll(start)


def test_estimate_frf_and_csv(tmp_path):
    grid = np.linspace(0, 2, 10)
    I = np.vstack([np.ones(10), 1j * np.arange(1, 11)])
    O = np.vstack([I[0] * 0.5 + I[1] * 0.1, I[0] * 0.2])
    est = estimate_frf(spec(grid, I), spec(grid, O), [(SisoKernel(),) * 2] * 2, [1e-6, 1e-6], [0.5, 1.0])
    assert est.mean.shape == (2, 2, 2) and est.variance.shape == (2, 2, 2)
    path = tmp_path / "frf.csv"
    write_frf_csv(est, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "freq_hz,j,l,re_mean,im_mean,variance" and len(lines) == 1 + 2 * 4
    assert lines[1].startswith("0.500000,1,1,")


def test_rows_combine():
    r = RowEstimate(np.array([0.0]), np.ones((1, 2), complex), np.zeros((1, 2)), 0.1)
    est = FrfEstimate.from_rows([r, r, r])
    assert est.m == 3 and est.n == 2
