"""Planar 3R arm kinematics, the hole-cleaning trajectory and perturbation inputs.

Lengths are in cm, angles in rad, times in s. ``Phi_k`` is the cumulative
angle ``theta_1 + ... + theta_k``. The tip is kept perpendicular to the
plate (``Theta = pi/2``) and moves only along ``Y``; the stroke parameter
``l_s`` is the tip's ``Y`` offset from its rest position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, UnreachableError
from .signals import TimeSeries

ARCCOS_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class ArmGeometry:
    l1: float = 16.90
    l2: float = 17.97
    l3: float = 15.86
    phi0: tuple = (-0.6756, 1.0007, 0.0)

    def __post_init__(self):
        if min(self.l1, self.l2, self.l3) <= 0:
            raise InvalidArgument("link lengths must be positive")
        object.__setattr__(self, "phi0", tuple(float(p) for p in self.phi0))

    @property
    def l_b(self) -> float:
        """Wrist ``Y`` at the initial pose."""
        p1, p2 = self.phi0[:2]
        return self.l1 * np.cos(p1) + self.l2 * np.cos(p2)

    @property
    def l_a(self) -> float:
        """Magnitude of the wrist ``X`` at the initial pose."""
        p1, p2 = self.phi0[:2]
        return abs(-self.l1 * np.sin(p1) - self.l2 * np.sin(p2))

    @property
    def rest_y(self) -> float:
        """Tip ``Y`` at the initial pose, ``l_b + l3``, from the stated angles."""
        return self.l_b + self.l3

    @property
    def theta0(self) -> np.ndarray:
        p = np.asarray(self.phi0)
        return np.array([p[0], p[1] - p[0], p[2] - p[1]])


def forward_kinematics(geom: ArmGeometry, theta):
    """Tip ``(X, Y, Theta)`` for joint angles ``theta`` of shape ``(3,)`` or ``(3, N)``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.cumsum(theta, axis=0)
    lengths = (geom.l1, geom.l2, geom.l3)
    Y = sum(l * np.cos(phi[i]) for i, l in enumerate(lengths))
    X = -sum(l * np.sin(phi[i]) for i, l in enumerate(lengths))
    return X, Y, phi[2] + np.pi / 2


def _safe_arccos(x, what: str):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1 + ARCCOS_CLAMP_TOL):
        raise UnreachableError(f"{what}: target outside the reachable annulus (cos = {np.max(np.abs(x)):.6f})")
    return np.arccos(np.clip(x, -1.0, 1.0))


def inverse_kinematics(geom: ArmGeometry, l_s):
    """Joint angles placing the tip at stroke offset ``l_s`` with ``Theta = pi/2``.

    Elbow branch with negative ``theta_1``. Vectorized over ``l_s``; returns
    an array of shape ``(3,) + shape(l_s)``.
    """
    l_s = np.asarray(l_s, dtype=float)
    la, lb, l1, l2 = geom.l_a, geom.l_b, geom.l1, geom.l2
    y = lb + l_s
    r2 = la ** 2 + y ** 2
    r = np.sqrt(r2)
    if np.any(r > l1 + l2 + ARCCOS_CLAMP_TOL) or np.any(r < abs(l1 - l2) - ARCCOS_CLAMP_TOL):
        raise UnreachableError(f"wrist distance {np.max(r):.4f} cm outside [{abs(l1 - l2):.4f}, {l1 + l2:.4f}]")
    th1 = -np.arctan(-la / y) - _safe_arccos((y ** 2 + la ** 2 + l1 ** 2 - l2 ** 2) / (2 * l1 * r), "shoulder")
    th2 = np.pi - _safe_arccos((l1 ** 2 + l2 ** 2 - r2) / (2 * l1 * l2), "elbow")
    return np.stack([th1, th2, -(th1 + th2)])


@dataclass(frozen=True)
class CleaningTask:
    """Periodic forward-and-backward stroke of ``d`` cm, period ``T``, between quiet holds of ``t1``.

    ``y_floor`` labels the rest tip height; joint angles only depend on the
    offset ``Y_d - y_floor``.
    """

    T: float = 0.5
    d: float = 5.0
    t1: float = 20.0
    motion_s: float = 20.0
    y_floor: float = 39.13
    sample_rate: float = 100.0

    def __post_init__(self):
        if not (self.T > 0 and self.d > 0 and self.t1 >= 0 and self.sample_rate > 0):
            raise InvalidArgument("task needs T > 0, d > 0, t1 >= 0")
        k = self.motion_s / self.T
        if round(k) < 1 or abs(k - round(k)) > 1e-9:
            raise InvalidArgument(f"motion time {self.motion_s} s is not a whole number of periods T={self.T}")

    @property
    def k_N(self) -> int:
        return int(round(self.motion_s / self.T))

    @property
    def t_f(self) -> float:
        return 2 * self.t1 + self.k_N * self.T

    @property
    def motion_end(self) -> float:
        return self.t1 + self.k_N * self.T

    @property
    def accel_amplitude(self) -> float:
        return 8 * np.pi * self.d / self.T ** 2

    @property
    def omega_T(self) -> float:
        return 4 * np.pi / self.T

    @property
    def n_samples(self) -> int:
        return int(round(self.t_f * self.sample_rate))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate

    def boundaries(self) -> np.ndarray:
        """All segment boundaries: cycle starts, mid-strokes and the final stop."""
        return self.t1 + 0.5 * self.T * np.arange(2 * self.k_N + 1)


def _phase(task: CleaningTask, t):
    """Half-cycle local time and direction (+1 forward, -1 backward, 0 at rest)."""
    t = np.asarray(t, dtype=float)
    rel = t - task.t1
    active = (rel >= 0) & (rel < task.k_N * task.T)
    tau = np.mod(np.where(active, rel, 0.0), task.T)
    half = task.T / 2
    forward = tau < half
    s = np.where(forward, tau, tau - half)
    direction = np.where(active, np.where(forward, 1.0, -1.0), 0.0)
    return s, direction


def desired_position(task: CleaningTask, t) -> np.ndarray:
    """Closed-form double integral of the stroke acceleration profile."""
    A, w = task.accel_amplitude, task.omega_T
    s, direction = _phase(task, t)
    ramp = (A / w) * (s - np.sin(w * s) / w)
    return task.y_floor + np.where(direction > 0, ramp, np.where(direction < 0, task.d - ramp, 0.0))


def desired_velocity(task: CleaningTask, t) -> np.ndarray:
    A, w = task.accel_amplitude, task.omega_T
    s, direction = _phase(task, t)
    return direction * (A / w) * (1 - np.cos(w * s))


def desired_acceleration(task: CleaningTask, t) -> np.ndarray:
    A, w = task.accel_amplitude, task.omega_T
    s, direction = _phase(task, t)
    return direction * A * np.sin(w * s)


def cleaning_trajectory(task: CleaningTask, geom: ArmGeometry = ArmGeometry()):
    """Desired tip height ``Y_d`` (1 channel) and joint angles ``theta_d`` (3 channels)."""
    t = task.times
    Y = desired_position(task, t)
    theta = inverse_kinematics(geom, Y - task.y_floor)
    return TimeSeries(Y[None, :], task.sample_rate), TimeSeries(theta, task.sample_rate)


@dataclass(frozen=True)
class Chirp:
    """Quadratic-phase sweep ``amplitude * sin(2 pi rate * tc**2)`` active on ``[start, stop]``.

    ``form`` selects how the local time ``tc`` is formed:

    * ``"wrapped"``: ``tc = mod(t - start + offset, stop - start)``
    * ``"reverse"``: ``tc = stop - t``
    * ``"split"``: ``tc = mod(t - (start + stop)/2 + offset, stop - start)``; the
      upper half sweeps ``-sin(.. (tc - P/2)**2)``, the lower half ``sin(.. (P - tc)**2)``.
    """

    amplitude: float
    form: str = "wrapped"
    offset: float = 0.0
    start: float = 20.0
    stop: float = 40.0

    def __call__(self, t, rate_hz: float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        P = self.stop - self.start
        if self.form == "wrapped":
            tc = np.mod(t - self.start + self.offset, P)
            y = np.sin(2 * np.pi * rate_hz * tc ** 2)
        elif self.form == "reverse":
            y = np.sin(2 * np.pi * rate_hz * (self.stop - t) ** 2)
        elif self.form == "split":
            tc = np.mod(t - 0.5 * (self.start + self.stop) + self.offset, P)
            y = np.where(tc >= P / 2, -np.sin(2 * np.pi * rate_hz * (tc - P / 2) ** 2),
                         np.sin(2 * np.pi * rate_hz * (P - tc) ** 2))
        else:
            raise InvalidArgument(f"unknown chirp form {self.form!r}")
        return np.where((t >= self.start) & (t <= self.stop), self.amplitude * y, 0.0)


@dataclass(frozen=True)
class Staircase:
    """Consecutive constant steps of ``step_s`` seconds starting at ``t_start``."""

    t_start: float
    steps: tuple
    step_s: float = 5.0

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for i, h in enumerate(self.steps):
            lo = self.t_start + i * self.step_s
            out = np.where((t >= lo) & (t < lo + self.step_s), h, out)
        return out


def _default_chirps():
    return (Chirp(0.012, "wrapped", np.sqrt(100.0 / 3.0)),
            Chirp(0.022, "reverse"),
            Chirp(0.012, "split", np.sqrt(50.0)))


def _default_staircases():
    return (Staircase(24.0, (0.002, -0.002, 0.002)),
            Staircase(23.0, (-0.003, 0.003, -0.003)),
            Staircase(21.0, (0.002, -0.002, 0.002)))


@dataclass(frozen=True)
class PerturbationSpec:
    """Per-joint chirp plus staircase; defaults reproduce the three-joint excitation."""

    chirps: tuple = field(default_factory=_default_chirps)
    staircases: tuple = field(default_factory=_default_staircases)
    rate_hz: float = 0.3
    scale: float = 1.0

    def __post_init__(self):
        if len(self.chirps) != len(self.staircases):
            raise InvalidArgument("need one chirp and one staircase per joint")

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        kw = {}
        if "chirps" in d:
            kw["chirps"] = tuple(Chirp(**c) for c in d["chirps"])
        if "staircases" in d:
            kw["staircases"] = tuple(Staircase(s["t_start"], tuple(s["steps"]), s.get("step_s", 5.0))
                                     for s in d["staircases"])
        for key in ("rate_hz", "scale"):
            if key in d:
                kw[key] = float(d[key])
        return cls(**kw)


def perturbation_signal(spec: PerturbationSpec = PerturbationSpec(), duration: float = 60.0,
                        sample_rate: float = 100.0) -> TimeSeries:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    rows = [spec.scale * (c(t, spec.rate_hz) + h(t)) for c, h in zip(spec.chirps, spec.staircases)]
    return TimeSeries(np.array(rows), sample_rate)
