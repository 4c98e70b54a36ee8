"""Frequency-domain kernels and the input-weighted composite kernel.

A SISO kernel maps two real frequencies (Hz) to a covariance. The composite
kernel for one output row weights each input channel's SISO kernel by the
observed input spectrum at both arguments::

    k'(r, s) = sum_l I_l(w_r) * k_l(w_r, w_s) * conj(I_l(w_s))

Any object with a ``matrix(wa, wb)`` method returning a Hermitian PSD
covariance block can stand in for :class:`SisoKernel`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

PSD_TOL = 1e-10


@dataclass(frozen=True)
class SisoKernel:
    """Squared-exponential kernel ``sigma_f**2 * exp(-(w1 - w2)**2 / (2 l**2))``."""

    sigma_f: float = 1.0
    length_scale: float = 0.5

    def __post_init__(self):
        if not (self.sigma_f > 0 and self.length_scale > 0):
            raise InvalidArgument("sigma_f and length_scale must be positive")

    def matrix(self, wa, wb) -> np.ndarray:
        wa = np.asarray(wa, dtype=float)
        wb = np.asarray(wb, dtype=float)
        d = wa[..., :, None] - wb[..., None, :]
        return (self.sigma_f ** 2) * np.exp(-0.5 * (d / self.length_scale) ** 2)

    def variance(self, w) -> np.ndarray:
        return np.full(np.shape(w), self.sigma_f ** 2)


def eval_siso(k: SisoKernel, w1: float, w2: float) -> complex:
    return complex(k.matrix([w1], [w2])[0, 0])


@dataclass(frozen=True)
class WeightedKernelContext:
    """SISO kernels for the ``n`` inputs plus the input spectra on the observed grid.

    ``input_spectrum`` has shape ``(n, q)``; ``freq_grid`` is the observed set.
    """

    kernels: tuple
    freq_grid: np.ndarray
    input_spectrum: np.ndarray

    def __post_init__(self):
        kernels = tuple(self.kernels)
        grid = np.atleast_1d(np.asarray(self.freq_grid, dtype=float))
        spec = np.atleast_2d(np.asarray(self.input_spectrum, dtype=complex))
        if spec.shape != (len(kernels), grid.size):
            raise InvalidArgument(
                f"input spectrum shape {spec.shape} != (n={len(kernels)}, q={grid.size})")
        zero = np.all(spec == 0, axis=0)
        if np.any(zero):
            raise InvalidArgument(
                f"all inputs vanish at observed frequencies {grid[zero][:5]} Hz")
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "freq_grid", grid)
        object.__setattr__(self, "input_spectrum", spec)

    @property
    def n(self) -> int:
        return len(self.kernels)

    @property
    def q(self) -> int:
        return self.freq_grid.size


def eval_weighted(ctx: WeightedKernelContext, r: int, s: int) -> complex:
    if not (0 <= r < ctx.q and 0 <= s < ctx.q):
        raise InvalidArgument(f"frequency index out of range (q={ctx.q})")
    wr, ws = ctx.freq_grid[r], ctx.freq_grid[s]
    total = 0j
    for l, kern in enumerate(ctx.kernels):
        total += ctx.input_spectrum[l, r] * kern.matrix([wr], [ws])[0, 0] * np.conj(ctx.input_spectrum[l, s])
    return complex(total)


def self_covariance(ctx: WeightedKernelContext) -> np.ndarray:
    """K' = sum_l diag(I_l) K_l diag(conj(I_l)) over the observed grid."""
    Kp = np.zeros((ctx.q, ctx.q), dtype=complex)
    for l, kern in enumerate(ctx.kernels):
        I = ctx.input_spectrum[l]
        Kp += I[:, None] * kern.matrix(ctx.freq_grid, ctx.freq_grid) * np.conj(I)[None, :]
    # exact Hermitian symmetry; the construction is Hermitian up to rounding
    return 0.5 * (Kp + Kp.conj().T)


def cross_covariance(ctx: WeightedKernelContext, test_freqs, channel: int) -> np.ndarray:
    """Rows K'_T for test points ``[w, e_l]``: ``k_l(w, w_s) * conj(I_l(w_s))``."""
    if not 0 <= channel < ctx.n:
        raise InvalidArgument(f"input channel {channel} out of range (n={ctx.n})")
    kern = ctx.kernels[channel]
    return kern.matrix(np.atleast_1d(test_freqs), ctx.freq_grid) * np.conj(ctx.input_spectrum[channel])[None, :]


def assemble_covariances(ctx: WeightedKernelContext, test_freq: float, test_channel: int):
    """Return ``(K', K'_T, K'_0)`` for one test frequency and input channel.

    ``test_channel`` is zero-based.
    """
    KT = cross_covariance(ctx, [test_freq], test_channel)
    K0 = complex(ctx.kernels[test_channel].matrix([test_freq], [test_freq])[0, 0])
    return self_covariance(ctx), KT, K0


def is_hermitian_psd(M, tol: float = PSD_TOL) -> bool:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgument("matrix must be square")
    if np.max(np.abs(M - M.conj().T), initial=0.0) > tol:
        return False
    return bool(np.linalg.eigvalsh(0.5 * (M + M.conj().T)).min() >= -tol)


def make_kernels(sigma_f, length_scale, n: int) -> tuple:
    """Build ``n`` kernels from scalars or length-``n`` sequences."""
    sf = np.broadcast_to(np.asarray(sigma_f, dtype=float), (n,))
    ls = np.broadcast_to(np.asarray(length_scale, dtype=float), (n,))
    return tuple(SisoKernel(float(a), float(b)) for a, b in zip(sf, ls))


def kernel_rows(sigma_f, length_scale, m: int, n: int) -> list[tuple]:
    """Per-output-row kernel tuples from scalars or ``m x n`` nested values."""
    sf = np.broadcast_to(np.asarray(sigma_f, dtype=float), (m, n))
    ls = np.broadcast_to(np.asarray(length_scale, dtype=float), (m, n))
    return [make_kernels(sf[j], ls[j], n) for j in range(m)]
