"""Complex GP regression of the frequency-response matrix from one experiment.

Each output row ``j`` is regressed separately. The observations are the
output-perturbation spectrum ``O_j`` on the observed grid, modeled as
``O_j = sum_l S_jl * I_l + eps`` with independent, proper, zero-mean GP
priors on the ``S_jl``. With the input-weighted kernel the posterior of
``S_jl(w)`` is the GP prediction at the test point ``[w, e_l]``.

Noise variances are expressed on the spectral scale of the unnormalized
DFT (a white sequence of variance ``v`` over ``N`` samples has bin variance
``N * v``).
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.signal

from .errors import IllConditionedError, InvalidArgument, NumericalError
from .kernels import SisoKernel, WeightedKernelContext, cross_covariance, self_covariance
from .signals import Spectrum, TimeSeries

log = logging.getLogger(__name__)

JITTER_START = 1e-12
JITTER_STOP = 1e-6
NEG_VARIANCE_TOL = 1e-12


@dataclass(frozen=True)
class RowEstimate:
    """Posterior of one output row: ``mean`` and ``variance`` are ``(q, n)``."""

    freq_grid: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    noise_var: float
    jitter: float = 0.0


@dataclass(frozen=True)
class FrfEstimate:
    """Posterior of the full ``m x n`` frequency response.

    ``mean`` and ``variance`` are ``(q, m, n)``. ``variance`` is the complex
    variance ``E|S - mean|**2``, i.e. twice the variance of the real part.
    """

    freq_grid: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    noise_var: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.variance.shape or self.mean.shape[0] != len(self.freq_grid):
            raise InvalidArgument("inconsistent FRF estimate dimensions")
        if np.any(self.variance < 0):
            raise InvalidArgument("negative posterior variance")

    @property
    def m(self) -> int:
        return self.mean.shape[1]

    @property
    def n(self) -> int:
        return self.mean.shape[2]

    @classmethod
    def from_rows(cls, rows: list[RowEstimate]) -> "FrfEstimate":
        return cls(rows[0].freq_grid,
                   np.stack([r.mean for r in rows], axis=1),
                   np.stack([r.variance for r in rows], axis=1),
                   np.array([r.noise_var for r in rows]))


@dataclass(frozen=True)
class UncertaintyBounds:
    """Estimation-error bounds ``delta_bar`` (q, m, n) and uncertainty bounds ``Delta_bar`` (q, m, m)."""

    freq_grid: np.ndarray
    delta_bar: np.ndarray
    Delta_bar: np.ndarray
    gamma_delta: float = 3.0

    def __post_init__(self):
        if np.any(self.delta_bar < 0) or np.any(self.Delta_bar < 0):
            raise InvalidArgument("uncertainty bounds must be nonnegative")


def _noise_diag(noise_var, q: int) -> np.ndarray:
    noise = np.broadcast_to(np.asarray(noise_var, dtype=float), (q,))
    if np.any(noise < 0):
        raise InvalidArgument("noise variance must be nonnegative")
    return np.array(noise)


def _cholesky_with_jitter(A: np.ndarray):
    """Lower Cholesky factor of Hermitian ``A``, adding diagonal jitter if needed.

    Jitter starts at ``1e-12 * trace(A)/q`` and grows tenfold up to
    ``1e-6 * trace(A)/q``.
    """
    try:
        return scipy.linalg.cholesky(A, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    q = A.shape[0]
    scale = max(float(np.real(np.trace(A))) / q, np.finfo(float).tiny)
    eye = np.eye(q)
    jitter = JITTER_START
    while jitter <= JITTER_STOP * (1 + 1e-9):
        try:
            L = scipy.linalg.cholesky(A + jitter * scale * eye, lower=True)
            log.debug("cholesky needed jitter %.1e * trace/q", jitter)
            return L, jitter * scale
        except np.linalg.LinAlgError:
            jitter *= 10.0
    cond = np.linalg.cond(A)
    raise IllConditionedError(f"covariance not positive definite (condition number {cond:.3e})", cond)


def _clamp_variance(var: np.ndarray, prior: np.ndarray) -> np.ndarray:
    tol = NEG_VARIANCE_TOL * np.maximum(prior, 1.0)
    if np.any(var < -tol):
        raise NumericalError(f"posterior variance {var.min():.3e} is negative beyond rounding")
    return np.maximum(var, 0.0)


def estimate_row(I_p: Spectrum, O_jp: Spectrum, kernels, noise_var, eval_grid) -> RowEstimate:
    """Posterior mean and variance of ``S_j1 .. S_jn`` on ``eval_grid``.

    ``I_p`` carries the ``n`` input channels on the observed grid and
    ``O_jp`` the single output channel on the same grid. ``noise_var`` is a
    scalar or one value per observed frequency.
    """
    if O_jp.channels != 1:
        raise InvalidArgument("O_jp must hold exactly one output channel")
    if I_p.q != O_jp.q or not np.array_equal(I_p.freq_grid, O_jp.freq_grid):
        raise InvalidArgument("input and output observations use different grids")
    ctx = WeightedKernelContext(tuple(kernels), I_p.freq_grid, I_p.data)
    eval_grid = np.atleast_1d(np.asarray(eval_grid, dtype=float))
    noise = _noise_diag(noise_var, ctx.q)

    A = self_covariance(ctx) + np.diag(noise)
    L, jitter = _cholesky_with_jitter(A)
    y = O_jp.data[0]
    alpha = scipy.linalg.cho_solve((L, True), y)

    mean = np.empty((eval_grid.size, ctx.n), dtype=complex)
    var = np.empty((eval_grid.size, ctx.n))
    for l in range(ctx.n):
        KT = cross_covariance(ctx, eval_grid, l)
        mean[:, l] = KT @ alpha
        V = scipy.linalg.solve_triangular(L, KT.conj().T, lower=True)
        prior = np.real(ctx.kernels[l].variance(eval_grid))
        var[:, l] = _clamp_variance(prior - np.sum(np.abs(V) ** 2, axis=0), prior)
    return RowEstimate(eval_grid, mean, var, float(np.mean(noise)), jitter)


def estimate_frf(I_p: Spectrum, O_p: Spectrum, kernel_rows, noise_var, eval_grid) -> FrfEstimate:
    """Row-by-row estimate; ``kernel_rows[j]`` holds the ``n`` kernels of row ``j``."""
    noise = np.broadcast_to(np.asarray(noise_var, dtype=float), (O_p.channels,))
    rows = []
    for j in range(O_p.channels):
        rows.append(estimate_row(I_p, O_p.with_data(O_p.data[j:j + 1]), kernel_rows[j],
                                 noise[j], eval_grid))
    return FrfEstimate.from_rows(rows)


def prior_estimate(kernels, eval_grid) -> RowEstimate:
    """Posterior with no observations: zero mean, prior variance."""
    eval_grid = np.atleast_1d(np.asarray(eval_grid, dtype=float))
    n = len(kernels)
    var = np.stack([np.real(k.variance(eval_grid)) for k in kernels], axis=1)
    return RowEstimate(eval_grid, np.zeros((eval_grid.size, n), dtype=complex), var, 0.0)


def ratio_gpr_reference(I_1: Spectrum, O_1: Spectrum, kernel: SisoKernel, noise_var_S, eval_grid):
    """Plain GPR on the ratios ``O/I`` with noise covariance ``diag(noise_var_S)``.

    Single-input reference used to cross-check :func:`estimate_row`.
    Returns ``(mean, variance)`` on ``eval_grid``.
    """
    I = np.asarray(I_1.data, dtype=complex).reshape(-1)
    O = np.asarray(O_1.data, dtype=complex).reshape(-1)
    if I.size != O.size:
        raise InvalidArgument("single-input reference needs one input and one output channel")
    if np.any(I == 0):
        raise InvalidArgument("ratio regression needs a nonzero input at every observed frequency")
    w = I_1.freq_grid
    eval_grid = np.atleast_1d(np.asarray(eval_grid, dtype=float))
    ratio = O / I
    K = kernel.matrix(w, w)
    C = np.diag(np.broadcast_to(np.asarray(noise_var_S, dtype=float), w.shape))
    KT = kernel.matrix(eval_grid, w)
    G = K + C
    mean = KT @ np.linalg.solve(G, ratio)
    var = np.real(kernel.variance(eval_grid)) - np.real(np.einsum("ij,ji->i", KT, np.linalg.solve(G, KT.conj().T)))
    return mean, var


def log_marginal_likelihood(I_p: Spectrum, O_jp: Spectrum, kernels, noise_var) -> float:
    """Circular complex-Gaussian evidence ``log p(O_j)`` under the weighted kernel."""
    ctx = WeightedKernelContext(tuple(kernels), I_p.freq_grid, I_p.data)
    A = self_covariance(ctx) + np.diag(_noise_diag(noise_var, ctx.q))
    L, _ = _cholesky_with_jitter(A)
    y = O_jp.data[0]
    z = scipy.linalg.solve_triangular(L, y, lower=True)
    logdet = 2.0 * np.sum(np.log(np.real(np.diag(L))))
    return float(-np.real(np.vdot(z, z)) - logdet - ctx.q * np.log(np.pi))


def select_hyperparameters(I_p: Spectrum, O_jp: Spectrum, noise_var, sigma_grid, length_grid):
    """Grid search for a row-shared ``(sigma_f, length_scale)`` maximizing the evidence."""
    best, best_ll = None, -np.inf
    n = I_p.channels
    for sf, ls in itertools.product(sigma_grid, length_grid):
        kernels = tuple(SisoKernel(sf, ls) for _ in range(n))
        try:
            ll = log_marginal_likelihood(I_p, O_jp, kernels, noise_var)
        except IllConditionedError:
            continue
        if ll > best_ll:
            best, best_ll = (float(sf), float(ls)), ll
    if best is None:
        raise IllConditionedError("no hyperparameter candidate gave a usable covariance")
    return best


def optimize_hyperparameters(I_p: Spectrum, O_jp: Spectrum, noise_var, init_kernels,
                             sigma_bounds=(1e-2, 1e2), length_bounds=(0.05, 10.0), maxiter: int = 60) -> tuple:
    """Per-entry ``(sigma_f, length_scale)`` maximizing the evidence, started from ``init_kernels``.

    Bounded quasi-Newton search over log parameters. Returns a tuple of
    :class:`SisoKernel`, one per input channel.
    """
    n = I_p.channels
    x0 = np.log([[k.sigma_f, k.length_scale] for k in init_kernels]).ravel()
    bounds = [tuple(np.log(sigma_bounds)), tuple(np.log(length_bounds))] * n

    def kernels_of(x):
        return tuple(SisoKernel(float(np.exp(a)), float(np.exp(b))) for a, b in x.reshape(n, 2))

    def objective(x):
        try:
            return -log_marginal_likelihood(I_p, O_jp, kernels_of(x), noise_var)
        except IllConditionedError:
            return np.inf

    res = scipy.optimize.minimize(objective, x0, method="L-BFGS-B", bounds=bounds,
                                  options={"maxiter": maxiter})
    best = res.x if np.isfinite(res.fun) and res.fun <= objective(x0) else x0
    return kernels_of(best)


def delta_bar_from_variance(est: FrfEstimate, gamma_delta: float = 3.0) -> np.ndarray:
    """``gamma_delta * sqrt(V[Re S])`` with ``V[Re S] = V[S] / 2``."""
    if not gamma_delta > 0:
        raise InvalidArgument("gamma_delta must be positive")
    return gamma_delta * np.sqrt(est.variance / 2.0)


def uncertainty_bounds(S_dagger, delta_bar) -> np.ndarray:
    """``Delta_bar[j, l] = sum_k |S_dagger[k, l]| * delta_bar[j, k]`` per frequency.

    ``S_dagger`` is ``(q, n, m)`` (or a ``ModelInverse``) and ``delta_bar``
    is ``(q, m, n)``; single matrices without the leading axis also work.
    """
    Sd = np.asarray(getattr(S_dagger, "S_dagger", S_dagger))
    db = np.asarray(delta_bar, dtype=float)
    if Sd.shape[-2] != db.shape[-1] or Sd.shape[-1] != db.shape[-2]:
        raise InvalidArgument(f"S_dagger {Sd.shape} and delta_bar {db.shape} do not conform")
    return db @ np.abs(Sd)


def estimate_noise_variance(quiet: TimeSeries, n_fft: int | None = None) -> np.ndarray:
    """Per-channel noise variance from a segment recorded under constant input.

    Returns the sample variance of the linearly detrended segment. With
    ``n_fft`` given, the value is scaled to the bin variance of an
    ``n_fft``-point unnormalized DFT.
    """
    if quiet.n_samples < quiet.sample_rate:
        raise InvalidArgument("quiet segment must span at least 1 s")
    resid = scipy.signal.detrend(quiet.data, axis=1, type="linear")
    v = resid.var(axis=1, ddof=2)
    return v * n_fft if n_fft is not None else v


def write_frf_csv(est: FrfEstimate, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["freq_hz", "j", "l", "re_mean", "im_mean", "variance"])
        for k, f in enumerate(est.freq_grid):
            for j in range(est.m):
                for l in range(est.n):
                    z = est.mean[k, j, l]
                    writer.writerow([f"{f:.6f}", j + 1, l + 1, repr(float(z.real)),
                                     repr(float(z.imag)), repr(float(est.variance[k, j, l]))])
