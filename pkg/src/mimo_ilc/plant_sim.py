"""Simulated MIMO LTI plants.

Plants are matrices of rational transfer functions in the Laplace variable;
coefficients are listed highest power first (``numpy.polyval`` order).
Simulation is circular: each DFT bin of the input is multiplied by the
frequency response at that bin. Records that start and end at rest, like
the cleaning task with its quiet lead and lag, make the wrap-around
negligible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .signals import TimeSeries, dft_grid


@dataclass(frozen=True)
class TransferFunction:
    num: tuple
    den: tuple

    def __post_init__(self):
        num = tuple(float(c) for c in np.atleast_1d(self.num))
        den = tuple(float(c) for c in np.trim_zeros(np.atleast_1d(np.asarray(self.den, dtype=float)), "f"))
        if not den:
            raise InvalidArgument("denominator must be nonzero")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def __call__(self, s):
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    def poles(self) -> np.ndarray:
        return np.roots(self.den)

    def is_stable(self) -> bool:
        p = self.poles()
        return bool(np.all(p.real < 0)) if p.size else True

    def dc_gain(self) -> float:
        return float(self(0.0).real)


@dataclass(frozen=True)
class LtiPlant:
    """``m x n`` matrix of stable transfer functions, optional per-input delays in samples."""

    entries: tuple
    delay_samples: tuple | None = None
    sample_rate: float = 100.0
    saturation: float | None = None

    def __post_init__(self):
        rows = tuple(tuple(e if isinstance(e, TransferFunction) else TransferFunction(*e) for e in row)
                     for row in self.entries)
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise InvalidArgument("plant entries must form a rectangular matrix")
        m, n = len(rows), len(rows[0])
        if m > n:
            raise InvalidArgument(f"plant has more outputs ({m}) than inputs ({n})")
        for j, row in enumerate(rows):
            for l, tf in enumerate(row):
                if not tf.is_stable():
                    raise InvalidArgument(f"entry ({j}, {l}) is unstable: poles {tf.poles()}")
        if self.delay_samples is not None:
            delays = tuple(int(d) for d in self.delay_samples)
            if len(delays) != n or min(delays) < 0:
                raise InvalidArgument("need one nonnegative delay per input")
            object.__setattr__(self, "delay_samples", delays)
        object.__setattr__(self, "entries", rows)

    @property
    def m(self) -> int:
        return len(self.entries)

    @property
    def n(self) -> int:
        return len(self.entries[0])


@dataclass(frozen=True)
class NoiseModel:
    std: tuple = ()
    seed: int = 0

    def __post_init__(self):
        std = tuple(float(s) for s in np.atleast_1d(self.std))
        if any(s < 0 for s in std):
            raise InvalidArgument("noise standard deviations must be nonnegative")
        object.__setattr__(self, "std", std)

    def child(self, key: int) -> "NoiseModel":
        """Same levels, independent stream derived from ``(seed, key)``."""
        seed = int(np.random.SeedSequence([self.seed, key]).generate_state(1)[0])
        return NoiseModel(self.std, seed)


def frequency_response(plant: LtiPlant, w) -> np.ndarray:
    """Response at frequency ``w`` Hz (``m x n``), or ``(q, m, n)`` for an array of frequencies."""
    w_arr = np.asarray(w, dtype=float)
    s = 2j * np.pi * np.atleast_1d(w_arr)
    out = np.empty((s.size, plant.m, plant.n), dtype=complex)
    for j, row in enumerate(plant.entries):
        for l, tf in enumerate(row):
            out[:, j, l] = tf(s)
    if plant.delay_samples is not None:
        delay_s = np.asarray(plant.delay_samples) / plant.sample_rate
        out *= np.exp(-s[:, None] * delay_s[None, :])[:, None, :]
    return out[0] if w_arr.ndim == 0 else out


def simulate(plant: LtiPlant, input: TimeSeries, noise: NoiseModel | None = None) -> TimeSeries:
    if input.channels != plant.n:
        raise InvalidArgument(f"plant expects {plant.n} input channels, got {input.channels}")
    N = input.n_samples
    X = np.fft.rfft(input.data, axis=1)
    S = frequency_response(plant, dft_grid(N, input.sample_rate))
    Y = np.einsum("kjl,lk->jk", S, X)
    Y[:, 0] = Y[:, 0].real
    if N % 2 == 0:
        Y[:, -1] = Y[:, -1].real
    y = np.fft.irfft(Y, n=N, axis=1)
    if plant.saturation is not None:
        y = np.clip(y, -plant.saturation, plant.saturation)
    if noise is not None and noise.std:
        std = np.broadcast_to(np.asarray(noise.std), (plant.m,))
        rng = np.random.default_rng(noise.seed)
        y = y + std[:, None] * rng.standard_normal((plant.m, N))
    return TimeSeries(y, input.sample_rate, input.t0)


def _second_order(w0: float, zeta: float) -> list:
    return [1.0, 2 * zeta * w0, w0 ** 2]


def sea_like_plant(natural_freq_hz=3.0, damping=0.4, coupling=0.3, coupling_pole_hz=5.0,
                   sample_rate: float = 100.0) -> LtiPlant:
    """3x3 reference-to-angle model of three position-controlled elastic joints.

    Diagonal: ``w0**2 / (s**2 + 2 zeta w0 s + w0**2)``. Off-diagonal
    ``(j, l)``: ``g_jl * s * w0_j**2 / ((s**2 + 2 zeta_j w0_j s + w0_j**2)(s + a))``,
    a coupling that vanishes at DC. ``coupling`` is a scalar or a 3x3 matrix
    whose diagonal is ignored; frequencies are in Hz.
    """
    w0 = 2 * np.pi * np.broadcast_to(np.asarray(natural_freq_hz, dtype=float), (3,))
    zeta = np.broadcast_to(np.asarray(damping, dtype=float), (3,))
    g = np.asarray(coupling, dtype=float)
    g = np.full((3, 3), float(g)) if g.ndim == 0 else g
    a = 2 * np.pi * float(coupling_pole_hz)
    if g.shape != (3, 3):
        raise InvalidArgument("coupling must be a scalar or 3x3")
    if np.any(w0 <= 0) or np.any(zeta <= 0) or a <= 0:
        raise InvalidArgument("natural frequencies, damping ratios and coupling pole must be positive")
    entries = []
    for j in range(3):
        loop = _second_order(w0[j], zeta[j])
        row = []
        for l in range(3):
            if j == l:
                row.append(TransferFunction([w0[j] ** 2], loop))
            else:
                row.append(TransferFunction([g[j, l] * w0[j] ** 2, 0.0], np.polymul(loop, [1.0, a])))
        entries.append(tuple(row))
    return LtiPlant(tuple(entries), sample_rate=sample_rate)


def _scale_frequency(coeffs, alpha: float) -> list:
    """Coefficients of ``p(s / alpha)``."""
    c = np.asarray(coeffs, dtype=float)
    powers = np.arange(c.size - 1, -1, -1)
    return list(c * alpha ** (-powers))


def perturb_plant(plant: LtiPlant, relative_error: float, seed: int = 0,
                  scale_dc_gain: bool = False) -> LtiPlant:
    """Entry-wise ``beta * H(s / alpha)`` with ``alpha, beta`` uniform in ``[1 - r, 1 + r]``.

    ``alpha`` scales every pole and zero of the entry (natural frequencies),
    ``beta`` its gain. Entries with nonzero DC gain keep it unless
    ``scale_dc_gain`` is set: they model servo loops with integral action.
    """
    if not 0 <= relative_error < 1:
        raise InvalidArgument("relative_error must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    r = relative_error
    entries = []
    for row in plant.entries:
        new_row = []
        for tf in row:
            alpha, beta = rng.uniform(1 - r, 1 + r, size=2)
            if not scale_dc_gain and abs(tf.dc_gain()) > 0:
                beta = 1.0
            num = [beta * c for c in _scale_frequency(tf.num, alpha)]
            new_row.append(TransferFunction(num, _scale_frequency(tf.den, alpha)))
        entries.append(tuple(new_row))
    return LtiPlant(tuple(entries), plant.delay_samples, plant.sample_rate, plant.saturation)


def plant_to_dict(plant: LtiPlant) -> dict:
    return {
        "entries": [[{"num": list(tf.num), "den": list(tf.den)} for tf in row] for row in plant.entries],
        "delay_samples": list(plant.delay_samples) if plant.delay_samples is not None else None,
        "sample_rate": plant.sample_rate,
        "saturation": plant.saturation,
    }


def plant_from_dict(d: dict) -> LtiPlant:
    entries = tuple(tuple(TransferFunction(e["num"], e["den"]) for e in row) for row in d["entries"])
    return LtiPlant(entries, d.get("delay_samples"), float(d.get("sample_rate", 100.0)), d.get("saturation"))


def load_plant_file(path):
    """Plant definition file: rational entries plus optional ``noise_std`` and ``seed``.

    Returns ``(plant, noise)``.
    """
    d = json.loads(Path(path).read_text())
    plant = plant_from_dict(d)
    noise = NoiseModel(d.get("noise_std", [0.0] * plant.m), int(d.get("seed", 0)))
    return plant, noise


def save_plant_file(plant: LtiPlant, noise: NoiseModel, path) -> None:
    d = plant_to_dict(plant)
    d["noise_std"] = list(noise.std)
    d["seed"] = noise.seed
    Path(path).write_text(json.dumps(d, indent=2))
