"""Multi-channel sampled signals and their one-sided DFT images.

Conventions used everywhere in the package:

* the forward transform is unnormalized, ``X[k] = sum_n x[n] exp(-2j*pi*k*n/N)``;
* the inverse divides by ``N``;
* spectra are one-sided, on the grid ``k * fs / N`` for ``k = 0 .. N // 2``;
* frequencies are in Hz.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class TimeSeries:
    """Real samples, shape ``(channels, N)``, taken uniformly from ``t0``."""

    data: np.ndarray
    sample_rate: float = 100.0
    t0: float = 0.0

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if data.ndim != 2:
            raise InvalidArgument("time series data must be (channels, samples)")
        if data.shape[1] < 1:
            raise InvalidArgument("time series must hold at least one sample")
        if not self.sample_rate > 0:
            raise InvalidArgument("sample_rate must be positive")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.sample_rate

    def index_of(self, t: float) -> int:
        """Index of the sample closest to time ``t``."""
        return int(round((t - self.t0) * self.sample_rate))

    def window(self, t_start: float, t_stop: float) -> "TimeSeries":
        """Samples with ``t_start <= t <= t_stop`` (closed interval)."""
        i0 = max(self.index_of(t_start), 0)
        i1 = min(self.index_of(t_stop), self.n_samples - 1)
        if i1 < i0:
            raise InvalidArgument(f"empty window [{t_start}, {t_stop}]")
        return TimeSeries(self.data[:, i0:i1 + 1], self.sample_rate, self.t0 + i0 / self.sample_rate)

    def with_data(self, data) -> "TimeSeries":
        return TimeSeries(data, self.sample_rate, self.t0)

    def __add__(self, other):
        if isinstance(other, TimeSeries):
            _check_compatible(self, other)
            return self.with_data(self.data + other.data)
        return self.with_data(self.data + other)

    def __sub__(self, other):
        if isinstance(other, TimeSeries):
            _check_compatible(self, other)
            return self.with_data(self.data - other.data)
        return self.with_data(self.data - other)


def _check_compatible(a: TimeSeries, b: TimeSeries):
    if a.data.shape != b.data.shape or a.sample_rate != b.sample_rate:
        raise InvalidArgument("time series shapes or sample rates differ")


@dataclass(frozen=True)
class Spectrum:
    """Complex values, shape ``(channels, q)``, on an increasing frequency grid."""

    freq_grid: np.ndarray
    data: np.ndarray
    sample_rate: float | None = None
    t0: float = field(default=0.0, compare=False)

    def __post_init__(self):
        grid = np.atleast_1d(np.asarray(self.freq_grid, dtype=float))
        data = np.atleast_2d(np.asarray(self.data, dtype=complex))
        if grid.ndim != 1 or grid.size < 1:
            raise InvalidArgument("frequency grid must be a nonempty vector")
        if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
            raise InvalidArgument("frequency grid must be nonnegative and strictly increasing")
        if data.ndim != 2 or data.shape[1] != grid.size:
            raise InvalidArgument(f"spectrum data {data.shape} does not match grid of {grid.size}")
        grid = grid.copy()
        data = data.copy()
        grid.flags.writeable = False
        data.flags.writeable = False
        object.__setattr__(self, "freq_grid", grid)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def q(self) -> int:
        return self.freq_grid.size

    def with_data(self, data) -> "Spectrum":
        return Spectrum(self.freq_grid, data, self.sample_rate, self.t0)


def dft_grid(n_samples: int, sample_rate: float) -> np.ndarray:
    """One-sided DFT grid ``{0, fs/N, ..., fs*(N//2)/N}`` in Hz."""
    if n_samples < 1:
        raise InvalidArgument("n_samples must be >= 1")
    return np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)


def to_frequency(x: TimeSeries) -> Spectrum:
    if x.n_samples < 1:
        raise InvalidArgument("cannot transform an empty series")
    return Spectrum(dft_grid(x.n_samples, x.sample_rate), np.fft.rfft(x.data, axis=1),
                    sample_rate=x.sample_rate, t0=x.t0)


def to_time(X: Spectrum, n_samples: int, sample_rate: float | None = None) -> TimeSeries:
    """Inverse of :func:`to_frequency`.

    The imaginary parts of the DC bin (and of the Nyquist bin for even
    ``n_samples``) are discarded, which is what conjugate symmetry of the
    implied two-sided spectrum requires for a real signal.
    """
    fs = sample_rate if sample_rate is not None else X.sample_rate
    if fs is None:
        if X.q < 2:
            raise InvalidArgument("sample rate cannot be inferred from a single-bin grid")
        fs = X.freq_grid[1] * n_samples
    expected = dft_grid(n_samples, fs)
    if expected.size != X.q or not np.allclose(expected, X.freq_grid, rtol=1e-12, atol=1e-12):
        raise InvalidArgument(f"spectrum grid does not match the canonical grid for N={n_samples}")
    data = np.array(X.data, dtype=complex)
    data[:, 0] = data[:, 0].real
    if n_samples % 2 == 0:
        data[:, -1] = data[:, -1].real
    return TimeSeries(np.fft.irfft(data, n=n_samples, axis=1), fs, X.t0)


def pad_zeros(x: TimeSeries, pre_s: float, post_s: float) -> TimeSeries:
    if pre_s < 0 or post_s < 0:
        raise InvalidArgument("padding durations must be nonnegative")
    n_pre = int(round(pre_s * x.sample_rate))
    n_post = int(round(post_s * x.sample_rate))
    data = np.pad(x.data, ((0, 0), (n_pre, n_post)))
    return TimeSeries(data, x.sample_rate, x.t0 - n_pre / x.sample_rate)


def max_abs_per_channel(e: TimeSeries) -> np.ndarray:
    return np.max(np.abs(e.data), axis=1)


def parseval_energy(X: Spectrum, n_samples: int) -> np.ndarray:
    """Per-channel ``sum x[n]**2`` recovered from a one-sided spectrum."""
    mag2 = np.abs(X.data) ** 2
    weights = np.full(X.q, 2.0)
    weights[0] = 1.0
    if n_samples % 2 == 0:
        weights[-1] = 1.0
    return (mag2 * weights).sum(axis=1) / n_samples


def write_csv(x: TimeSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"ch{i + 1}" for i in range(x.channels)])
        for t, row in zip(x.times, x.data.T):
            writer.writerow([f"{t:.6f}"] + [repr(float(v)) for v in row])


def read_csv(path) -> TimeSeries:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t" or not body:
        raise InvalidArgument(f"{path}: not a time-series CSV")
    values = np.array(body, dtype=float)
    t = values[:, 0]
    fs = 1.0 / np.median(np.diff(t)) if t.size > 1 else 100.0
    return TimeSeries(values[:, 1:].T, sample_rate=round(fs, 6), t0=float(t[0]))
