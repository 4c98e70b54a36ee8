"""End-to-end learning-control experiment against a simulated plant.

Sequence per run: nominal trial with ``I_0 = O_d``; perturbed trial with
``I_1 = I_0 + I_p``; model and uncertainty from ``O_1 - O_0``; certified
gains; then corrective trials. ``I_2`` is corrected from ``I_0`` and
``E_0`` so the perturbed trial never feeds the update.

Corrections are computed on the padded active window
``[t1 - pad, t1 + k_N T + pad]``: the error is zeroed outside the cleaning
cycles, transformed over that window, and the resulting input change is
written back over the same window. Tracking errors ``E_bar`` are maxima
over the cleaning cycles ``[t1, t1 + k_N T]``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cgpr import (FrfEstimate, UncertaintyBounds, delta_bar_from_variance, estimate_frf,
                   estimate_noise_variance, optimize_hyperparameters, select_hyperparameters, uncertainty_bounds, write_frf_csv)
from .errors import CertificationError, ConfigError
from .ilc_core import (ContractionReport, GainSchedule, ModelInverse, RhoPolicy, build_gain_schedule,
                       contraction_report, update_input, write_contraction_csv, write_gain_csv)
from .kernels import SisoKernel, kernel_rows
from .plant_sim import (LtiPlant, NoiseModel, frequency_response, load_plant_file, perturb_plant,
                        plant_from_dict, sea_like_plant, simulate)
from .sea_robot import ArmGeometry, CleaningTask, PerturbationSpec, cleaning_trajectory, perturbation_signal
from .signals import Spectrum, TimeSeries, dft_grid, to_frequency, to_time, write_csv

log = logging.getLogger(__name__)

MODEL_SOURCES = ("learned", "exact", "nominal")


@dataclass
class KernelConfig:
    sigma_f: object = 1.0
    length_scale: object = 1.0
    optimize: bool = False
    per_entry: bool = True
    sigma_grid: tuple = (0.25, 0.5, 1.0, 2.0)
    length_grid: tuple = (0.25, 0.5, 1.0, 2.0)
    obs_max_hz: float = 10.0
    obs_window: str = "support"


@dataclass
class ExperimentConfig:
    seed: int
    plant: dict = field(default_factory=lambda: {"kind": "sea_like"})
    noise_std: object = 0.002
    task: CleaningTask = field(default_factory=CleaningTask)
    geometry: ArmGeometry = field(default_factory=ArmGeometry)
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    gamma_delta: float = 3.0
    rho: RhoPolicy = field(default_factory=RhoPolicy)
    W: object = 1.0
    epsilon: float = 0.01
    k_max: int = 10
    pad_s: float = 5.0
    model: str = "learned"
    output_dir: str | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.k_max < 2:
            raise ConfigError("k_max must be at least 2")
        if self.model not in MODEL_SOURCES:
            raise ConfigError(f"model must be one of {MODEL_SOURCES}")
        if not self.gamma_delta > 0:
            raise ConfigError("gamma_delta must be positive")
        if self.pad_s < 0 or self.task.t1 < self.pad_s:
            raise ConfigError("padding must be nonnegative and fit inside the quiet lead")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        if "seed" not in d:
            raise ConfigError("config must set an integer 'seed'")
        try:
            kw = {"seed": int(d.pop("seed"))}
            if "plant" in d:
                plant = dict(d.pop("plant"))
                if "file" in plant and base_dir is not None:
                    plant["file"] = str((base_dir / plant["file"]).resolve())
                kw["plant"] = plant
            if "task" in d:
                kw["task"] = CleaningTask(**d.pop("task"))
            if "geometry" in d:
                kw["geometry"] = ArmGeometry(**d.pop("geometry"))
            if "perturbation" in d:
                kw["perturbation"] = PerturbationSpec.from_dict(d.pop("perturbation"))
            if "kernel" in d:
                k = dict(d.pop("kernel"))
                for key in ("sigma_grid", "length_grid"):
                    if key in k:
                        k[key] = tuple(k[key])
                kw["kernel"] = KernelConfig(**k)
            if "rho" in d:
                kw["rho"] = RhoPolicy(**d.pop("rho"))
            for key in ("noise_std", "gamma_delta", "W", "epsilon", "k_max", "pad_s", "model", "output_dir"):
                if key in d:
                    kw[key] = d.pop(key)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        if d:
            raise ConfigError(f"unknown config keys: {sorted(d)}")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d, base_dir=path.parent)


@dataclass
class IterationRecord:
    k: int
    max_error: np.ndarray
    input: TimeSeries
    output: TimeSeries
    error: TimeSeries
    wall_time: float = 0.0


@dataclass
class RunResult:
    records: list
    estimate: FrfEstimate
    inverse: ModelInverse
    bounds: UncertaintyBounds
    gains: GainSchedule
    contraction: ContractionReport
    noise_var: np.ndarray
    hyperparameters: list
    converged: bool

    @property
    def max_errors(self) -> np.ndarray:
        return np.array([r.max_error for r in self.records])

    def reductions(self) -> np.ndarray:
        E = self.max_errors
        return (E[0] - E[-1]) / E[0]


def build_plants(cfg: ExperimentConfig):
    """``(true_plant, nominal_plant, noise)`` from the plant section."""
    spec = dict(cfg.plant)
    noise_std = cfg.noise_std
    try:
        if "file" in spec:
            nominal, file_noise = load_plant_file(spec["file"])
            if "noise_std" not in spec and cfg.noise_std is None:
                noise_std = file_noise.std
        elif spec.get("kind", "sea_like") == "sea_like":
            params = {k: spec[k] for k in ("natural_freq_hz", "damping", "coupling", "coupling_pole_hz")
                      if k in spec}
            nominal = sea_like_plant(sample_rate=cfg.task.sample_rate, **params)
        elif spec.get("kind") == "rational":
            nominal = plant_from_dict(spec)
        else:
            raise ConfigError(f"unknown plant kind {spec.get('kind')!r}")
    except (KeyError, TypeError, ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid plant definition: {exc}") from exc
    true_plant = nominal
    if "perturb" in spec:
        p = spec["perturb"]
        true_plant = perturb_plant(nominal, float(p.get("relative_error", 0.0)), int(p.get("seed", cfg.seed)),
                                   bool(p.get("scale_dc_gain", False)))
    if "saturation" in spec:
        true_plant = replace(true_plant, saturation=float(spec["saturation"]))
    std = np.broadcast_to(np.asarray(noise_std, dtype=float), (true_plant.m,))
    return true_plant, nominal, NoiseModel(tuple(std), cfg.seed)


class _Windows:
    """Index bookkeeping for the padded correction window and the active cycles."""

    def __init__(self, task: CleaningTask, pad_s: float):
        fs = task.sample_rate
        self.active = (int(round(task.t1 * fs)), int(round(task.motion_end * fs)))
        self.padded = (int(round((task.t1 - pad_s) * fs)), int(round((task.motion_end + pad_s) * fs)))
        if self.padded[1] >= task.n_samples:
            raise ConfigError("padded window extends past the end of the record")
        self.length = self.padded[1] - self.padded[0] + 1
        self.grid = dft_grid(self.length, fs)
        self.fs = fs

    def max_error(self, e: TimeSeries) -> np.ndarray:
        a, b = self.active
        return np.max(np.abs(e.data[:, a:b + 1]), axis=1)

    def masked_error(self, e: TimeSeries) -> TimeSeries:
        p0, p1 = self.padded
        a, b = self.active
        data = np.zeros((e.channels, self.length))
        data[:, a - p0:b - p0 + 1] = e.data[:, a:b + 1]
        return TimeSeries(data, self.fs, p0 / self.fs)

    def input_window(self, x: TimeSeries) -> TimeSeries:
        p0, p1 = self.padded
        return TimeSeries(x.data[:, p0:p1 + 1], self.fs, p0 / self.fs)

    def splice(self, x: TimeSeries, window: TimeSeries) -> TimeSeries:
        p0, p1 = self.padded
        data = np.array(x.data)
        data[:, p0:p1 + 1] = window.data
        return x.with_data(data)


def _ilc_step(win: _Windows, I_prev: TimeSeries, E_prev: TimeSeries, inv: ModelInverse,
              gains: GainSchedule) -> TimeSeries:
    Iw = to_frequency(win.input_window(I_prev))
    Ew = to_frequency(win.masked_error(E_prev))
    new = update_input(Iw, Ew, inv, gains)
    return win.splice(I_prev, to_time(new, win.length, win.fs))


def _observed_spectra(I_p: TimeSeries, O_p: TimeSeries, obs_max_hz: float):
    Ip = to_frequency(I_p)
    Op = to_frequency(O_p)
    keep = (Ip.freq_grid <= obs_max_hz) & np.any(np.abs(Ip.data) > 0, axis=0)
    grid = Ip.freq_grid[keep]
    return (Spectrum(grid, Ip.data[:, keep], Ip.sample_rate),
            Spectrum(grid, Op.data[:, keep], Op.sample_rate))


def learn_model(cfg: ExperimentConfig, I_p: TimeSeries, O_p: TimeSeries, eval_grid):
    """GP estimate of the FRF from one perturbation experiment.

    Returns ``(estimate, noise_var, hyperparameters)``; the noise variance is
    measured on the quiet lead of ``O_p`` and scaled to the record's DFT.
    """
    task = cfg.task
    quiet = O_p.window(0.0, task.t1 - 1.0)
    noise_var = estimate_noise_variance(quiet, n_fft=O_p.n_samples)
    if cfg.kernel.obs_window == "support":
        idx = np.flatnonzero(np.any(I_p.data != 0, axis=0))
        if idx.size == 0:
            raise ConfigError("perturbation input is identically zero")
        lo = max(idx[0] / I_p.sample_rate - cfg.pad_s, 0.0)
        hi = min(idx[-1] / I_p.sample_rate + cfg.pad_s, (I_p.n_samples - 1) / I_p.sample_rate)
        I_obs, O_obs = I_p.window(lo, hi), O_p.window(lo, hi)
        noise_var = noise_var / O_p.n_samples * I_obs.n_samples
    else:
        I_obs, O_obs = I_p, O_p
    Ip_obs, Op_obs = _observed_spectra(I_obs, O_obs, cfg.kernel.obs_max_hz)
    m, n = O_p.channels, I_p.channels
    if cfg.kernel.optimize:
        rows, hyper = [], []
        for j in range(m):
            Oj = Op_obs.with_data(Op_obs.data[j:j + 1])
            sf, ls = select_hyperparameters(Ip_obs, Oj, noise_var[j], cfg.kernel.sigma_grid,
                                            cfg.kernel.length_grid)
            row = tuple(SisoKernel(sf, ls) for _ in range(n))
            if cfg.kernel.per_entry:
                row = optimize_hyperparameters(Ip_obs, Oj, noise_var[j], row)
            rows.append(row)
            hyper.append([(k.sigma_f, k.length_scale) for k in row])
    else:
        rows = kernel_rows(cfg.kernel.sigma_f, cfg.kernel.length_scale, m, n)
        hyper = [[(k.sigma_f, k.length_scale) for k in row] for row in rows]
    est = estimate_frf(Ip_obs, Op_obs, rows, noise_var, eval_grid)
    return est, noise_var, hyper


def _design(cfg: ExperimentConfig, true_plant: LtiPlant, nominal: LtiPlant, win: _Windows,
            I_p: TimeSeries, O_p: TimeSeries):
    """Model, uncertainty bounds and certified gains on the correction grid."""
    grid = win.grid
    defined = grid <= cfg.rho.cutoff_hz
    eval_grid = grid[defined]
    m, n = true_plant.m, true_plant.n
    noise_var = np.zeros(m)
    hyper = []
    if cfg.model == "learned":
        est, noise_var, hyper = learn_model(cfg, I_p, O_p, eval_grid)
    else:
        source = true_plant if cfg.model == "exact" else nominal
        S = frequency_response(source, eval_grid)
        est = FrfEstimate(eval_grid, S, np.zeros(S.shape), noise_var)
    S_full = np.zeros((grid.size, m, n), dtype=complex)
    S_full[defined] = est.mean
    W = np.broadcast_to(np.asarray(cfg.W, dtype=float), (n,))
    inv = ModelInverse.build(grid, S_full, W, defined)
    delta_bar = delta_bar_from_variance(est, cfg.gamma_delta)
    Delta_bar = np.full((grid.size, m, m), np.nan)
    Delta_bar[defined] = uncertainty_bounds(inv.S_dagger[defined], delta_bar)
    bounds = UncertaintyBounds(eval_grid, delta_bar, Delta_bar[defined], cfg.gamma_delta)
    gains = build_gain_schedule(grid, Delta_bar, cfg.rho, nyquist_hz=win.fs / 2)
    in_band = grid <= cfg.rho.bandwidth_hz
    if not np.any(gains.feasible[in_band]):
        raise CertificationError("convergence conditions fail at every in-band frequency")
    report = contraction_report(grid, frequency_response(true_plant, grid), inv, gains)
    return est, noise_var, hyper, inv, bounds, gains, report


def _trial(true_plant, noise: NoiseModel, k: int, inp: TimeSeries, O_d: TimeSeries, win: _Windows):
    start = time.perf_counter()
    out = simulate(true_plant, inp, noise.child(k))
    err = O_d - out
    return IterationRecord(k, win.max_error(err), inp, out, err, time.perf_counter() - start)


def design_from_experiment(cfg: ExperimentConfig):
    """Trials 0 and 1 plus the gain design (no corrective iterations)."""
    true_plant, nominal, noise = build_plants(cfg)
    win = _Windows(cfg.task, cfg.pad_s)
    _, theta_d = cleaning_trajectory(cfg.task, cfg.geometry)
    I_p = perturbation_signal(cfg.perturbation, cfg.task.t_f, cfg.task.sample_rate)
    if I_p.channels != true_plant.n:
        raise ConfigError(f"perturbation has {I_p.channels} channels, plant has {true_plant.n} inputs")
    r0 = _trial(true_plant, noise, 0, theta_d, theta_d, win)
    r1 = _trial(true_plant, noise, 1, theta_d + I_p, theta_d, win)
    design = _design(cfg, true_plant, nominal, win, I_p, r1.output - r0.output)
    return (true_plant, noise, win, theta_d, [r0, r1]) + design


def run_ilc(cfg: ExperimentConfig) -> RunResult:
    (true_plant, noise, win, O_d, records, est, noise_var, hyper,
     inv, bounds, gains, report) = design_from_experiment(cfg)
    for r in records:
        log.info("k=%d  E_bar=%s", r.k, np.array2string(r.max_error, precision=4))
    r0 = records[0]

    k = 2
    rec = _trial(true_plant, noise, k, _ilc_step(win, r0.input, r0.error, inv, gains), O_d, win)
    records.append(rec)
    log.info("k=%d  E_bar=%s", k, np.array2string(rec.max_error, precision=4))
    while np.any(rec.max_error >= cfg.epsilon) and k < cfg.k_max:
        k += 1
        rec = _trial(true_plant, noise, k, _ilc_step(win, rec.input, rec.error, inv, gains), O_d, win)
        records.append(rec)
        log.info("k=%d  E_bar=%s", k, np.array2string(rec.max_error, precision=4))
    converged = bool(np.all(rec.max_error < cfg.epsilon))
    return RunResult(records, est, inv, bounds, gains, report, noise_var, hyper, converged)


def certify(cfg: ExperimentConfig) -> dict:
    """Feasibility summary of the certified gains after the learning trials."""
    (_, _, win, _, _, est, noise_var, hyper, inv, bounds, gains, report) = design_from_experiment(cfg)
    in_band = win.grid <= cfg.rho.bandwidth_hz
    active = np.all(gains.rho > 0, axis=1)
    return {
        "in_band_bins": int(in_band.sum()),
        "feasible_fraction": [float(f) for f in gains.feasible[in_band].mean(axis=0)],
        "min_rho_bar_in_band": [float(v) for v in np.where(gains.feasible, gains.rho_bar, np.inf)[in_band].min(axis=0)],
        "max_spectral_radius_all_active": float(report.spectral_radius[active].max()) if active.any() else None,
        "noise_var": [float(v) for v in noise_var],
    }


def speed_sweep(cfg: ExperimentConfig, periods) -> list:
    """``(T, E_bar_0)`` rows for each period, ordered by ``T`` descending."""
    true_plant, _, noise = build_plants(cfg)
    rows = []
    for T in sorted((float(T) for T in periods), reverse=True):
        try:
            task = replace(cfg.task, T=T)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        win = _Windows(task, cfg.pad_s)
        _, theta_d = cleaning_trajectory(task, cfg.geometry)
        rows.append((T, _trial(true_plant, noise, 0, theta_d, theta_d, win).max_error))
    return rows


def export_report(result: RunResult, cfg: ExperimentConfig, out_dir) -> Path:
    """Write per-iteration signals, design tables and ``summary.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in result.records:
        write_csv(r.input, out / f"iter{r.k:02d}_input.csv")
        write_csv(r.output, out / f"iter{r.k:02d}_output.csv")
        write_csv(r.error, out / f"iter{r.k:02d}_error.csv")
    write_gain_csv(result.gains, out / "gains.csv")
    write_frf_csv(result.estimate, out / "frf_estimate.csv")
    write_contraction_csv(result.contraction, out / "contraction.csv")
    E = result.max_errors
    summary = {
        "version": __version__,
        "seed": cfg.seed,
        "model": cfg.model,
        "iterations": [r.k for r in result.records],
        "max_error": E.tolist(),
        "reduction_percent": (100 * result.reductions()).tolist(),
        "converged": result.converged,
        "epsilon": cfg.epsilon,
        "noise_var": result.noise_var.tolist(),
        "hyperparameters": result.hyperparameters,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return out
