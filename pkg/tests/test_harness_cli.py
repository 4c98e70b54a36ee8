import json

import numpy as np
import pytest

from mimo_ilc import __version__
from mimo_ilc.cli import main
from mimo_ilc.errors import CertificationError, ConfigError, InvalidArgument
from mimo_ilc.harness import (ExperimentConfig, _Windows, build_plants, certify, export_report, run_ilc,
                              speed_sweep)
from mimo_ilc.plant_sim import NoiseModel, save_plant_file, sea_like_plant
from mimo_ilc.signals import to_frequency

WIDE = {"value": 1.0, "bandwidth_hz": 45.0, "taper_hz": 5.0}


def cfg(**kw):
    base = {"seed": 0, "model": "exact", "plant": {"kind": "sea_like", "perturb": {"relative_error": 0.2, "seed": 0}}}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"epsilon": 0.01})
    with pytest.raises(ConfigError):
        cfg(epsilon=0.0)
    with pytest.raises(ConfigError):
        cfg(k_max=1)
    with pytest.raises(ConfigError):
        cfg(model="oracle")
    with pytest.raises(ConfigError):
        cfg(colour="blue")
    with pytest.raises(ConfigError):
        cfg(task={"T": 0.3})


def test_config_defaults():
    c = ExperimentConfig(seed=3)
    assert c.gamma_delta == 3.0 and c.k_max == 10 and c.epsilon == 0.01
    assert (c.rho.value, c.rho.bandwidth_hz, c.rho.taper_hz, c.rho.margin) == (0.7, 5.0, 1.5, 0.95)


def test_exact_model_single_step():
    r = run_ilc(cfg(noise_std=0.0, rho=WIDE, epsilon=1e-12, k_max=2))
    assert np.all(r.records[2].max_error < 1e-6)


def test_exact_model_geometric_decay():
    r = run_ilc(cfg(noise_std=0.0, rho={**WIDE, "value": 0.7}, epsilon=1e-12, k_max=5))
    E = r.max_errors
    assert np.allclose(E[3:5] / E[2:4], 0.3, atol=0.01)


def test_iteration_two_provenance():
    c = cfg(noise_std=0.002, k_max=3)
    r = run_ilc(c)
    win = _Windows(c.task, c.pad_s)
    I0, E0 = r.records[0].input, r.records[0].error
    p0, p1 = win.padded
    a, b = win.active
    masked = np.zeros((3, win.length))
    masked[:, a - p0:b - p0 + 1] = E0.data[:, a:b + 1]
    Iw = np.fft.rfft(I0.data[:, p0:p1 + 1], axis=1)
    Ew = np.fft.rfft(masked, axis=1)
    new = Iw + np.einsum("knm,km->nk", r.inverse.S_dagger, r.gains.rho * Ew.T)
    expected = I0.data.copy()
    expected[:, p0:p1 + 1] = np.fft.irfft(new, n=win.length, axis=1)
    assert np.allclose(r.records[2].input.data, expected, atol=1e-12)
    assert not np.allclose(r.records[1].input.data, r.records[0].input.data)


def test_out_of_band_inertness():
    c = cfg(noise_std=0.002, k_max=4)
    r = run_ilc(c)
    win = _Windows(c.task, c.pad_s)
    above = win.grid > c.rho.cutoff_hz
    ref = to_frequency(win.input_window(r.records[0].input)).data[:, above]
    for rec in r.records[2:]:
        assert np.allclose(to_frequency(win.input_window(rec.input)).data[:, above], ref, atol=1e-9)
        outside = np.ones(rec.input.n_samples, bool)
        outside[win.padded[0]:win.padded[1] + 1] = False
        assert np.array_equal(rec.input.data[:, outside], r.records[0].input.data[:, outside])


def test_loop_termination():
    r = run_ilc(cfg(epsilon=1.0))
    assert [rec.k for rec in r.records] == [0, 1, 2] and r.converged
    r = run_ilc(cfg(epsilon=1e-9, k_max=4))
    assert len(r.records) == 5 and not r.converged
    assert all(np.all(rec.max_error >= 0) for rec in r.records)


def test_learned_model_runs_and_certifies():
    c = cfg(model="learned", k_max=3)
    r = run_ilc(c)
    assert r.noise_var.shape == (3,) and np.all(r.noise_var > 0)
    assert np.all(r.max_errors[3] < r.max_errors[0])
    fs = c.task.sample_rate
    assert np.all(r.gains.rho[r.gains.freq_grid > c.rho.cutoff_hz] == 0)
    rep = certify(c)
    assert rep["in_band_bins"] > 0 and all(0 <= f <= 1 for f in rep["feasible_fraction"])


def test_certification_failure():
    with pytest.raises(CertificationError):
        run_ilc(cfg(model="learned", gamma_delta=1e4, k_max=2))


def test_speed_sweep_order_and_errors():
    rows = speed_sweep(cfg(), [0.5, 10, 2])
    assert [T for T, _ in rows] == [10.0, 2.0, 0.5]
    assert np.all(rows[0][1] < rows[-1][1])
    with pytest.raises((ConfigError, InvalidArgument)):
        speed_sweep(cfg(), [0.3])


def test_export_report(tmp_path):
    c = cfg(epsilon=1e-9, k_max=3)
    r = run_ilc(c)
    out = export_report(r, c, tmp_path / "run")
    summary = json.loads((out / "summary.json").read_text())
    E = np.array(summary["max_error"])
    assert E.shape == (c.k_max + 1, 3)
    assert np.allclose(summary["reduction_percent"], 100 * (E[0] - E[-1]) / E[0])
    for name in ("gains.csv", "frf_estimate.csv", "contraction.csv", "iter00_input.csv", "iter03_error.csv"):
        assert (out / name).exists()


def test_plant_file_config(tmp_path):
    path = tmp_path / "plant.json"
    save_plant_file(sea_like_plant(), NoiseModel((0.001,) * 3, 0), path)
    conf = {"seed": 1, "plant": {"file": "plant.json"}, "model": "nominal", "k_max": 2}
    (tmp_path / "cfg.json").write_text(json.dumps(conf))
    c = ExperimentConfig.load(tmp_path / "cfg.json")
    true_plant, nominal, noise = build_plants(c)
    assert true_plant == nominal and noise.std == (0.002,) * 3


def write_config(tmp_path, **kw):
    d = {"seed": 0, "model": "exact", "k_max": 3, "plant": {"kind": "sea_like", "perturb": {"relative_error": 0.2}}}
    d.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    return str(path)


def test_cli_version(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


def test_cli_run_deterministic(tmp_path):
    path = write_config(tmp_path)
    assert main(["run", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", path, "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_sweep_and_certify(tmp_path, capsys):
    path = write_config(tmp_path, model="learned")
    assert main(["sweep", "--config", path, "--periods", "0.5,5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "T_s,E1_0,E2_0,E3_0" and lines[1].startswith("5,")
    assert main(["certify", "--config", path]) == 0
    assert "feasible_fraction" in json.loads(capsys.readouterr().out)


def test_cli_exit_codes(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = write_config(tmp_path, epsilon=-1)
    assert main(["run", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    cert = write_config(tmp_path, model="learned", gamma_delta=1e4)
    assert main(["certify", "--config", cert]) == 3
    tf = {"num": [1.0], "den": [1.0, 1.0]}
    singular = {"kind": "rational", "entries": [[tf] * 3] * 3}
    num = write_config(tmp_path, plant=singular)
    assert main(["run", "--config", num, "--out", str(tmp_path / "y")]) == 4
