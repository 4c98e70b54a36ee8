"""Inversion-based MIMO ILC: update law, contraction gain, and certified gains.

Per frequency the update is ``I_{k+1} = I_k + S_dagger rho E_k`` and the
error propagates as ``E_{k+1} = G E_k`` with ``G = (1 - rho) - Delta rho``,
``Delta = S S_dagger - 1``. Gains are diagonal. The convergence tests use
column Gershgorin discs of ``G``: column ``i`` is centred at ``G_ii`` with
radius ``rho_i * sum_{j != i} |Delta_ji|``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, RankDeficiencyError
from .signals import Spectrum

RANK_COND_LIMIT = 1e12


@dataclass(frozen=True)
class ModelInverse:
    """Model ``S_hat`` (q, m, n), weights ``W`` (q, n) and ``S_dagger`` (q, n, m).

    ``defined`` marks frequencies where the model was evaluated; elsewhere
    ``S_hat`` and ``S_dagger`` are zero.
    """

    freq_grid: np.ndarray
    S_hat: np.ndarray
    W: np.ndarray
    S_dagger: np.ndarray
    defined: np.ndarray

    @classmethod
    def build(cls, freq_grid, S_hat, W=None, defined=None) -> "ModelInverse":
        freq_grid = np.asarray(freq_grid, dtype=float)
        S_hat = np.asarray(S_hat, dtype=complex)
        q, m, n = S_hat.shape
        W = np.ones((q, n)) if W is None else np.broadcast_to(np.asarray(W, dtype=float), (q, n)).copy()
        defined = np.ones(q, dtype=bool) if defined is None else np.asarray(defined, dtype=bool)
        S_dagger = np.zeros((q, n, m), dtype=complex)
        for k in np.flatnonzero(defined):
            try:
                S_dagger[k] = weighted_pseudo_inverse(S_hat[k], np.diag(W[k]))
            except RankDeficiencyError as exc:
                raise RankDeficiencyError(f"model rank-deficient at {freq_grid[k]:.4f} Hz: {exc}",
                                          exc.condition_number) from exc
        S_hat = np.where(defined[:, None, None], S_hat, 0)
        return cls(freq_grid, S_hat, W, S_dagger, defined)

    @property
    def m(self) -> int:
        return self.S_hat.shape[1]

    @property
    def n(self) -> int:
        return self.S_hat.shape[2]


@dataclass(frozen=True)
class GainSchedule:
    """Diagonal gains ``rho`` (q, m), bounds ``rho_bar`` (q, m), ``feasible`` (q, m)."""

    freq_grid: np.ndarray
    rho: np.ndarray
    rho_bar: np.ndarray
    feasible: np.ndarray

    def __post_init__(self):
        if np.any(self.rho < 0):
            raise InvalidArgument("iteration gains must be nonnegative")
        bad = self.feasible & (self.rho > 0) & ~(self.rho < self.rho_bar)
        if np.any(bad) or np.any(self.rho[~self.feasible] != 0):
            raise InvalidArgument("gain schedule violates its certified bounds")


@dataclass(frozen=True)
class ContractionReport:
    freq_grid: np.ndarray
    G: np.ndarray
    spectral_radius: np.ndarray
    gersgorin_bound: np.ndarray
    feasible: np.ndarray


@dataclass(frozen=True)
class RhoPolicy:
    """Requested gain ``value`` up to ``bandwidth_hz``, squared taper to zero over ``taper_hz``."""

    value: float = 0.7
    bandwidth_hz: float = 5.0
    taper_hz: float = 1.5
    margin: float = 0.95

    def __post_init__(self):
        if not self.value > 0:
            raise InvalidArgument("rho value must be positive")
        if not 0 < self.margin < 1:
            raise InvalidArgument("margin must lie in (0, 1)")

    @property
    def cutoff_hz(self) -> float:
        return self.bandwidth_hz + self.taper_hz

    def envelope(self, freq) -> np.ndarray:
        """Requested gain before certification: flat, then ``(1 - x)**2`` taper, then zero."""
        f = np.asarray(freq, dtype=float)
        x = (f - self.bandwidth_hz) / self.taper_hz
        env = np.where(f <= self.bandwidth_hz, 1.0, np.where(f <= self.cutoff_hz, (1.0 - x) ** 2, 0.0))
        return self.value * env


def weighted_pseudo_inverse(S_hat, W) -> np.ndarray:
    """``W^-1 S^H (S W^-1 S^H)^-1`` for full-row-rank ``S_hat`` (m x n) and diagonal ``W``."""
    S = np.atleast_2d(np.asarray(S_hat, dtype=complex))
    W = np.asarray(W, dtype=float)
    w = np.diag(W) if W.ndim == 2 else W
    if w.shape != (S.shape[1],) or np.any(w <= 0):
        raise InvalidArgument("W must be a positive diagonal n x n matrix")
    WiSh = S.conj().T / w[:, None]
    gram = S @ WiSh
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > RANK_COND_LIMIT:
        raise RankDeficiencyError(f"S W^-1 S^H is rank-deficient (condition number {cond:.3e})", cond)
    return WiSh @ np.linalg.inv(gram)


def update_input(I_k: Spectrum, E_k: Spectrum, inv: ModelInverse, gains: GainSchedule) -> Spectrum:
    """One ILC step on a common frequency grid."""
    grids = [I_k.freq_grid, E_k.freq_grid, inv.freq_grid, gains.freq_grid]
    if any(g.shape != grids[0].shape or not np.allclose(g, grids[0], rtol=0, atol=1e-9) for g in grids):
        raise InvalidArgument("update_input arguments are on different frequency grids")
    if I_k.channels != inv.n or E_k.channels != inv.m:
        raise InvalidArgument("channel counts do not match the model inverse")
    # (q, m) error scaled by rho, then (q, n, m) @ (q, m)
    scaled = gains.rho * E_k.data.T
    delta = np.einsum("knm,km->kn", inv.S_dagger, scaled)
    return I_k.with_data(I_k.data + delta.T)


def contraction_gain(Delta, rho) -> np.ndarray:
    Delta = np.atleast_2d(np.asarray(Delta, dtype=complex))
    rho = np.asarray(rho, dtype=float)
    R = np.diag(rho)
    return np.eye(rho.size) - R - Delta @ R


def spectral_radius(G) -> float:
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    if G.shape[0] != G.shape[1]:
        raise InvalidArgument("spectral radius needs a square matrix")
    return float(np.max(np.abs(np.linalg.eigvals(G))))


def gersgorin_bound(G) -> float:
    """``max_i |G_ii| + sum_{j != i} |G_ji|`` (column discs)."""
    G = np.atleast_2d(np.asarray(G))
    absG = np.abs(G)
    diag = np.diag(absG)
    return float(np.max(diag + absG.sum(axis=0) - diag))


def _off_diag_column_sums(M: np.ndarray) -> np.ndarray:
    return M.sum(axis=0) - np.diag(M)


def check_convergence_conditions(Delta, rho) -> np.ndarray:
    """Per-index sufficient convergence conditions for a known ``Delta``."""
    Delta = np.atleast_2d(np.asarray(Delta, dtype=complex))
    rho = np.asarray(rho, dtype=float)
    M = np.abs(Delta)
    R = _off_diag_column_sums(M)
    A = np.real(np.diag(Delta))
    Mii = np.diag(M)
    denom = 1 + 2 * A + Mii ** 2 - R ** 2
    cond_radius = R < 1 + A
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = 2 * (1 + A - R) / denom
    cond_gain = (rho > 0) & (rho < upper) & (denom > 0)
    cond_disc = rho * R < 1
    return cond_radius & cond_gain & cond_disc


def rho_upper_bound(Delta_bar):
    """Certified gain bound from entrywise bounds on ``|Delta|``.

    Returns ``(rho_bar, feasible)``. ``rho_bar`` is the smaller of the two
    candidate bounds (diagonal uncertainty at either sign), capped at
    ``1 / Delta_bar_R`` so that ``rho * Delta_bar_R < 1`` whenever
    ``rho < rho_bar``. Infeasible indices report ``rho_bar = 0``.
    """
    Db = np.atleast_2d(np.asarray(Delta_bar, dtype=float))
    if np.any(~np.isfinite(Db)) or np.any(Db < 0):
        raise InvalidArgument("uncertainty bounds must be finite and nonnegative")
    d = np.diag(Db)
    DR = _off_diag_column_sums(Db)
    feasible = DR < 1 - d
    with np.errstate(divide="ignore", invalid="ignore"):
        plus, minus = (2 * (1 + p * d - DR) / (1 + 2 * p * d + d ** 2 - DR ** 2) for p in (1.0, -1.0))
    rho_bar = np.minimum(plus, minus)
    cap = np.where(DR > 0, 1.0 / np.where(DR > 0, DR, 1.0), np.inf)
    rho_bar = np.where(feasible, np.minimum(rho_bar, cap), 0.0)
    return rho_bar, feasible


def build_gain_schedule(freq_grid, Delta_bar, policy: RhoPolicy = RhoPolicy(),
                        nyquist_hz: float | None = None) -> GainSchedule:
    """Per-frequency certified gains.

    Up to the bandwidth ``rho = min(value, margin * rho_bar)``; over the
    taper ``rho = rho(bandwidth) * (1 - x)**2``, still capped by
    ``margin * rho_bar``; zero above the taper and at infeasible points.

    ``Delta_bar`` is ``(q, m, m)``; it is only read at frequencies up to the
    taper end, and may hold NaN beyond it. Above the taper end gains are
    zero and reported infeasible.
    """
    freq_grid = np.asarray(freq_grid, dtype=float)
    if nyquist_hz is None:
        nyquist_hz = freq_grid[-1]
    if not (0 < policy.bandwidth_hz and policy.taper_hz > 0
            and policy.cutoff_hz <= nyquist_hz * (1 + 1e-12)):
        raise InvalidArgument("need 0 < bandwidth < bandwidth + taper <= Nyquist")
    Delta_bar = np.asarray(Delta_bar, dtype=float)
    q, m, _ = Delta_bar.shape
    rho = np.zeros((q, m))
    rho_bar = np.zeros((q, m))
    feasible = np.zeros((q, m), dtype=bool)
    for k in np.flatnonzero(freq_grid <= policy.cutoff_hz):
        rho_bar[k], feasible[k] = rho_upper_bound(Delta_bar[k])
    flat = freq_grid <= policy.bandwidth_hz
    rho[flat] = np.where(feasible[flat], np.minimum(policy.value, policy.margin * rho_bar[flat]), 0.0)
    # taper starts from the gain at the last in-band bin, still capped by the local bound
    edge = rho[np.flatnonzero(flat)[-1]] if flat.any() else np.full(m, policy.value)
    taper = ~flat & (freq_grid <= policy.cutoff_hz)
    shape = policy.envelope(freq_grid[taper]) / policy.value
    rho[taper] = np.where(feasible[taper], np.minimum(edge[None, :] * shape[:, None],
                                                      policy.margin * rho_bar[taper]), 0.0)
    return GainSchedule(freq_grid, rho, rho_bar, feasible)


def contraction_report(freq_grid, S_true, inv: ModelInverse, gains: GainSchedule) -> ContractionReport:
    """Actual ``G`` per frequency for a known plant response ``S_true`` (q, m, n)."""
    q, m = gains.rho.shape
    G = np.empty((q, m, m), dtype=complex)
    sr = np.empty(q)
    gb = np.empty(q)
    eye = np.eye(m)
    for k in range(q):
        Delta = S_true[k] @ inv.S_dagger[k] - eye if inv.defined[k] else np.zeros((m, m))
        G[k] = contraction_gain(Delta, gains.rho[k])
        sr[k] = spectral_radius(G[k])
        gb[k] = gersgorin_bound(G[k])
    return ContractionReport(np.asarray(freq_grid, dtype=float), G, sr, gb, gains.feasible)


def write_contraction_csv(report: ContractionReport, path) -> None:
    m = report.feasible.shape[1]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["freq_hz", "spectral_radius", "gersgorin_bound"] + [f"feasible_{i + 1}" for i in range(m)])
        for k, f in enumerate(report.freq_grid):
            writer.writerow([f"{f:.6f}", repr(float(report.spectral_radius[k])),
                             repr(float(report.gersgorin_bound[k]))] + [int(b) for b in report.feasible[k]])


def write_gain_csv(gains: GainSchedule, path) -> None:
    m = gains.rho.shape[1]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["freq_hz"] + [f"rho_{i + 1}" for i in range(m)] + [f"rho_bar_{i + 1}" for i in range(m)])
        for k, f in enumerate(gains.freq_grid):
            writer.writerow([f"{f:.6f}"] + [repr(float(v)) for v in gains.rho[k]]
                            + [repr(float(v)) for v in gains.rho_bar[k]])
