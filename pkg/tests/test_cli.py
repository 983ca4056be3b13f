"""End-to-end checks for the command line driver.

Every command runs in-process through main(argv) and writes into a fresh
directory, so reruns of the same config can be compared byte for byte.
"""

import json
import math
import os

import numpy as np
import pytest

from rflab import cli
from rflab.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from rflab.distributions import DistributionSpec
from rflab.linalg_rng import RngStream
from rflab.network import NetArchitecture, VelocityNet, save_checkpoint
from rflab.sampler import one_step_sample
from rflab.training import DivergenceError


def _write_config(tmp_path, obj, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def _read_csv(path):
    with open(path, encoding="utf-8") as fh:
        meta = fh.readline().rstrip("\n")
        header = fh.readline().rstrip("\n").split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    return meta, header, rows


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- config validation exits 2 with the offending field named ----------------------


def test_missing_config_file_exits_config(tmp_path, capsys):
    code = main(["--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "out"), "train"])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "config error:" in err
    assert "cannot read config" in err


def test_invalid_json_reports_line_and_column(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "task": }\n', encoding="utf-8")
    code = main(["--config", str(path), "--out", str(tmp_path / "out"),
                 "train"])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "invalid JSON" in err
    assert "line 2" in err
    assert "column" in err


def test_unknown_task_names_the_field(tmp_path, capsys):
    cfg = _write_config(tmp_path, {"task": "spiral"})
    code = main(["--config", cfg, "--out", str(tmp_path / "out"), "train"])
    assert code == EXIT_CONFIG
    assert "field 'task'" in capsys.readouterr().err


@pytest.mark.parametrize("seed", [-3, 2 ** 64, 1.5])
def test_bad_seed_rejected(tmp_path, capsys, seed):
    cfg = _write_config(tmp_path, {"seed": seed})
    code = main(["--config", cfg, "--out", str(tmp_path / "out"),
                 "gradcheck"])
    assert code == EXIT_CONFIG
    assert "field 'seed'" in capsys.readouterr().err


def test_endpoint_dimension_mismatch(tmp_path, capsys):
    cfg = _write_config(tmp_path, {
        "pi0": {"kind": "gaussian", "dim": 1, "mean": [0.0], "std": 1.0},
        "pi1": {"kind": "gaussian", "dim": 2, "mean": [1.0, 1.0], "std": 1.0},
    })
    code = main(["--config", cfg, "--out", str(tmp_path / "out"), "train"])
    assert code == EXIT_CONFIG
    assert "dimensions differ" in capsys.readouterr().err


def test_arch_dim_must_match_endpoints(tmp_path, capsys):
    cfg = _write_config(tmp_path, {"task": "gaussian_1d",
                                   "arch": {"dim": 2, "hidden": [4, 4]}})
    code = main(["--config", cfg, "--out", str(tmp_path / "out"), "train"])
    assert code == EXIT_CONFIG
    assert "arch.dim" in capsys.readouterr().err


def test_jobs_must_be_positive(tmp_path, capsys):
    code = main(["--jobs", "0", "--out", str(tmp_path / "out"), "gradcheck"])
    assert code == EXIT_CONFIG
    assert "--jobs" in capsys.readouterr().err


@pytest.mark.parametrize("command,field", [
    ("sweep", "sweep"), ("bounds", "bounds"), ("lowerbound", "lowerbound")])
def test_commands_requiring_blocks(tmp_path, capsys, command, field):
    # the default config has no sweep/bounds/lowerbound block
    code = main(["--out", str(tmp_path / "out"), command])
    assert code == EXIT_CONFIG
    assert f"missing field '{field}'" in capsys.readouterr().err


@pytest.mark.parametrize("grid,fragment", [
    ([32, 64, 128, 1024], "needs >= 5"),
    ([32, 64, 64, 128, 1024], "ascending"),
    ([32, 40, 50, 64, 128], "1.5 decades"),
])
def test_sweep_grid_validation(tmp_path, capsys, grid, fragment):
    cfg = _write_config(tmp_path, {"sweep": {"grid": grid}})
    code = main(["--config", cfg, "--out", str(tmp_path / "out"), "sweep"])
    assert code == EXIT_CONFIG
    assert fragment in capsys.readouterr().err


def test_lowerbound_block_requires_R(tmp_path, capsys):
    cfg = _write_config(tmp_path, {"lowerbound": {"epsilon": 0.1}})
    code = main(["--config", cfg, "--out", str(tmp_path / "out"),
                 "lowerbound"])
    assert code == EXIT_CONFIG
    assert "lowerbound.R" in capsys.readouterr().err


# -- gradcheck ---------------------------------------------------------------------


def test_gradcheck_passes_and_reruns_identically(tmp_path, capsys):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["--out", str(out_a), "gradcheck"]) == EXIT_OK
    assert main(["--out", str(out_b), "gradcheck"]) == EXIT_OK
    rep = _read_json(out_a / "gradcheck.json")
    assert rep["passed"] is True
    assert rep["max_rel_err"] <= 1e-5
    # default arch plus the three battery entries, none coinciding
    assert len(rep["cases"]) == 4
    assert (out_a / "gradcheck.json").read_bytes() \
        == (out_b / "gradcheck.json").read_bytes()
    assert "max rel err" in capsys.readouterr().out


# -- train -------------------------------------------------------------------------

_SMALL_TRAIN = {
    "task": "gaussian_1d",
    "seed": 11,
    "train": {"n_samples": 128, "batch_size": 32, "steps": 60,
              "record_every": 20},
}


def test_train_outputs_and_byte_identical_rerun(tmp_path):
    cfg = _write_config(tmp_path, _SMALL_TRAIN)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["--config", cfg, "--out", str(out_a), "train"]) == EXIT_OK
    assert main(["--config", cfg, "--out", str(out_b), "train"]) == EXIT_OK

    summary = _read_json(out_a / "train_summary.json")
    assert summary["seed"] == 11
    assert summary["n_samples"] == 128
    assert summary["steps"] == 60
    assert summary["final_loss"] < summary["initial_loss"]

    meta, header, rows = _read_csv(out_a / "trace.csv")
    assert meta.startswith("# config_sha256=")
    assert header == ["step", "loss", "grad_norm", "eta", "max_row_l1"]
    assert [int(r[0]) for r in rows] == [0, 20, 40, 59]

    # output directories differ but nothing inside the files depends on them
    for name in ("checkpoint.bin", "trace.csv", "train_summary.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_train_mixture_task_smoke(tmp_path):
    cfg = _write_config(tmp_path, {
        "task": "mixture_2d", "seed": 4,
        "train": {"n_samples": 96, "batch_size": 32, "steps": 30,
                  "record_every": 30},
    })
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "train"]) == EXIT_OK
    summary = _read_json(out / "train_summary.json")
    assert summary["task"] == "mixture_2d"
    assert math.isfinite(summary["final_loss"])


def test_train_point_mass_pair_fits_to_tolerance(tmp_path):
    # a single coupled pair is realizable, so constant steps drive the
    # squared loss to the noise floor
    cfg = _write_config(tmp_path, {
        "seed": 3,
        "pi0": {"kind": "empirical", "dim": 1, "points": [[0.0]]},
        "pi1": {"kind": "empirical", "dim": 1, "points": [[2.0]]},
        "train": {"n_samples": 64, "batch_size": 64, "steps": 2000,
                  "schedule": "constant", "eta": 0.5, "record_every": 500},
    })
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "train"]) == EXIT_OK
    assert _read_json(out / "train_summary.json")["final_loss"] < 1e-4


# -- sample ------------------------------------------------------------------------


def _default_arch():
    return NetArchitecture(dim=1, hidden=(8,), activation="tanh",
                           l1_budget=4.0, act_bound=1.0)


def _samples_matrix(path):
    _, header, rows = _read_csv(path)
    assert header[0] == "dim_0"
    return np.array([[float(v) for v in r] for r in rows])


def test_sample_zero_field_returns_initial_draws(tmp_path):
    ck = tmp_path / "zero.bin"
    save_checkpoint(VelocityNet.zeros(_default_arch()), str(ck), seed=0,
                    step=0)
    cfg = _write_config(tmp_path, {"task": "gaussian_1d", "seed": 11})
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "sample",
                 "--checkpoint", str(ck), "--steps", "50",
                 "--count", "40"]) == EXIT_OK

    got = _samples_matrix(out / "samples.csv")
    pi0 = DistributionSpec(kind="gaussian", dim=1, mean=np.zeros(1), std=1.0)
    want = pi0.sample(RngStream(11).derive(5), 40)
    # repr round-trips doubles exactly, so the CSV is lossless
    assert np.array_equal(got, want)

    summary = _read_json(out / "sample_summary.json")
    assert summary["count"] == 40
    assert summary["euler_steps"] == 50
    assert summary["reflow_rounds"] == 0
    assert summary["straightness_per_round"] == []


def test_sample_single_step_matches_one_step_sample(tmp_path):
    arch = _default_arch()
    net = VelocityNet.init(arch, RngStream(3))
    ck = tmp_path / "net.bin"
    save_checkpoint(net, str(ck), seed=3, step=0)
    cfg = _write_config(tmp_path, {"task": "gaussian_1d", "seed": 11})
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "sample",
                 "--checkpoint", str(ck), "--steps", "1",
                 "--count", "16"]) == EXIT_OK

    got = _samples_matrix(out / "samples.csv")
    pi0 = DistributionSpec(kind="gaussian", dim=1, mean=np.zeros(1), std=1.0)
    z0 = pi0.sample(RngStream(11).derive(5), 16)
    assert np.array_equal(got, one_step_sample(net, z0))


def test_sample_trajectories_table(tmp_path):
    ck = tmp_path / "zero.bin"
    save_checkpoint(VelocityNet.zeros(_default_arch()), str(ck), seed=0,
                    step=0)
    cfg = _write_config(tmp_path, {"task": "gaussian_1d", "seed": 11})
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "sample",
                 "--checkpoint", str(ck), "--steps", "4", "--count", "3",
                 "--trajectories"]) == EXIT_OK

    _, header, rows = _read_csv(out / "trajectories.csv")
    assert header == ["sample", "step", "time", "dim_0"]
    assert len(rows) == 3 * 5
    times = sorted({float(r[2]) for r in rows})
    assert times == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_sample_reflow_records_straightness(tmp_path):
    arch = _default_arch()
    net = VelocityNet.init(arch, RngStream(3))
    ck = tmp_path / "net.bin"
    save_checkpoint(net, str(ck), seed=3, step=0)
    cfg = _write_config(tmp_path, {
        "task": "gaussian_1d", "seed": 11,
        "train": {"n_samples": 96, "batch_size": 32, "steps": 40,
                  "record_every": 40},
    })
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "sample",
                 "--checkpoint", str(ck), "--steps", "8", "--count", "8",
                 "--reflow", "1"]) == EXIT_OK
    summary = _read_json(out / "sample_summary.json")
    assert summary["reflow_rounds"] == 1
    rounds = summary["straightness_per_round"]
    assert len(rounds) == 2
    assert all(v >= 0.0 for v in rounds)


# -- sweep -------------------------------------------------------------------------

_SMALL_SWEEP = {
    "task": "gaussian_1d",
    "seed": 5,
    "train": {"batch_size": 32, "eta": 0.05},
    "sweep": {"grid": [32, 64, 128, 256, 1024], "trials": 2, "epochs": 3,
              "proxy_n": 512, "proxy_epochs": 3, "proxy_batch": 128,
              "eval_samples": 128, "euler_steps": 16,
              "steps_exponent": 1.0},
}


def _strip_runtime(path):
    """sweep.csv rows minus the runtime_ms column, plus meta and header."""
    meta, header, rows = _read_csv(path)
    assert header[-1] == "runtime_ms"
    return meta, header[:-1], [r[:-1] for r in rows]


def test_sweep_smoke_outputs(tmp_path):
    cfg = _write_config(tmp_path, _SMALL_SWEEP)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "sweep"]) == EXIT_OK

    meta, header, rows = _read_csv(out / "sweep.csv")
    assert header == ["n", "trial", "seed", "excess_risk", "vel_l2", "w2",
                      "w2_baseline", "runtime_ms"]
    assert len(rows) == 5 * 2
    assert [(int(r[0]), int(r[1])) for r in rows] \
        == [(n, t) for n in [32, 64, 128, 256, 1024] for t in range(2)]

    fit = _read_json(out / "sweep_fit.json")
    assert fit["grid"] == [32, 64, 128, 256, 1024]
    assert fit["trials"] == 2
    assert len(fit["median_excess_risk"]) == 5
    assert len(fit["median_w2_corrected"]) == 5
    assert fit["failures"] == 0

    _, fheader, frows = _read_csv(out / "sweep_failures.csv")
    assert fheader == ["n", "trial", "seed", "error", "message"]
    assert frows == []
    assert (out / "plot_sweep.py").exists()


def test_sweep_rerun_and_jobs_agree(tmp_path):
    cfg = _write_config(tmp_path, _SMALL_SWEEP)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    out_c = tmp_path / "c"
    assert main(["--config", cfg, "--out", str(out_a), "sweep"]) == EXIT_OK
    assert main(["--config", cfg, "--out", str(out_b), "sweep"]) == EXIT_OK
    assert main(["--config", cfg, "--out", str(out_c), "--jobs", "2",
                 "sweep"]) == EXIT_OK
    # runtime_ms is wall-clock noise; everything else is reproducible
    ref = _strip_runtime(out_a / "sweep.csv")
    assert _strip_runtime(out_b / "sweep.csv") == ref
    assert _strip_runtime(out_c / "sweep.csv") == ref
    assert (out_a / "sweep_fit.json").read_bytes() \
        == (out_b / "sweep_fit.json").read_bytes()
    assert (out_a / "sweep_fit.json").read_bytes() \
        == (out_c / "sweep_fit.json").read_bytes()


def test_sweep_divergent_cells_go_to_failures_csv(tmp_path, monkeypatch):
    real_train = cli.train

    def flaky_train(net, data, cfg):
        if cfg.n_samples == 64:
            raise DivergenceError("loss exceeded the divergence factor")
        return real_train(net, data, cfg)

    monkeypatch.setattr(cli, "train", flaky_train)
    cfg = _write_config(tmp_path, _SMALL_SWEEP)
    out = tmp_path / "out"
    # failed cells are recorded, not fatal
    assert main(["--config", cfg, "--out", str(out), "sweep"]) == EXIT_OK

    _, _, rows = _read_csv(out / "sweep.csv")
    assert len(rows) == 8
    assert all(int(r[0]) != 64 for r in rows)

    _, _, frows = _read_csv(out / "sweep_failures.csv")
    assert [(int(r[0]), int(r[1])) for r in frows] == [(64, 0), (64, 1)]
    assert all(r[3] == "DivergenceError" for r in frows)
    assert _read_json(out / "sweep_fit.json")["failures"] == 2


# -- bounds ------------------------------------------------------------------------

_SMALL_BOUNDS = {"P": 4, "n": 20000, "B": 0.02, "L_ell": 1.0, "mu": 1.0,
                 "L_theta": 1.0, "delta": 0.2, "epsilon": 1.5}


def test_bounds_outputs(tmp_path):
    cfg = _write_config(tmp_path, {"bounds": dict(_SMALL_BOUNDS)})
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "bounds"]) == EXIT_OK

    rep = _read_json(out / "bounds.json")
    assert rep["const_product_705_288"] == 203040
    assert rep["inputs"]["C_univ"] == 1.0
    assert rep["inputs"]["P"] == 4
    assert rep["n_required"] == 11671
    assert rep["stat_bound"] > 0.0

    _, header, rows = _read_csv(out / "bounds.csv")
    assert header == ["key", "value"]
    keys = [r[0] for r in rows]
    assert keys == sorted(keys)
    assert "inputs.C_univ" in keys
    assert any(k.startswith("truncation.") for k in keys)


def test_bounds_derives_B_from_L_theta_and_mu(tmp_path):
    blk = dict(_SMALL_BOUNDS)
    del blk["B"]
    blk["L_theta"] = 1.0
    blk["mu"] = 0.5
    cfg = _write_config(tmp_path, {"bounds": blk})
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "bounds"]) == EXIT_OK
    assert _read_json(out / "bounds.json")["inputs"]["B"] == 4.0


def test_bounds_halving_epsilon_scales_n_required(tmp_path):
    # eps^-2 scaling with log slack; the toy instance above is too small for
    # the window, so this one runs at the documented scale
    n_req = {}
    for eps in (0.3, 0.15):
        blk = {"P": 10, "n": 10 ** 6, "B": 1.0, "L_ell": 1.0, "mu": 1.0,
               "L_theta": 1.0, "delta": 0.1, "epsilon": eps}
        cfg = _write_config(tmp_path, {"bounds": blk}, name=f"b{eps}.json")
        out = tmp_path / f"out{eps}"
        assert main(["--config", cfg, "--out", str(out), "bounds"]) == EXIT_OK
        n_req[eps] = _read_json(out / "bounds.json")["n_required"]
    ratio = n_req[0.15] / n_req[0.3]
    assert 3.4 <= ratio <= 4.6


def test_bounds_invalid_inputs_exit_config(tmp_path, capsys):
    blk = dict(_SMALL_BOUNDS)
    blk["P"] = 0
    cfg = _write_config(tmp_path, {"bounds": blk})
    code = main(["--config", cfg, "--out", str(tmp_path / "out"), "bounds"])
    assert code == EXIT_CONFIG
    assert "field 'bounds'" in capsys.readouterr().err


def test_bounds_vacuous_regime_exits_numeric(tmp_path, capsys):
    # n this small leaves every localization radius vacuous
    blk = dict(_SMALL_BOUNDS)
    blk["n"] = 3
    cfg = _write_config(tmp_path, {"bounds": blk})
    code = main(["--config", cfg, "--out", str(tmp_path / "out"), "bounds"])
    assert code == EXIT_NUMERIC
    assert "numeric failure:" in capsys.readouterr().err


def test_bounds_confidence_precondition_exits_numeric(tmp_path, capsys):
    # delta this small needs 2n > e^x, far beyond n = 20000
    blk = dict(_SMALL_BOUNDS)
    blk["delta"] = 1e-10
    cfg = _write_config(tmp_path, {"bounds": blk})
    code = main(["--config", cfg, "--out", str(tmp_path / "out"), "bounds"])
    assert code == EXIT_NUMERIC
    assert "numeric failure:" in capsys.readouterr().err


# -- lowerbound --------------------------------------------------------------------


def test_lowerbound_outputs(tmp_path):
    cfg = _write_config(tmp_path, {
        "seed": 0, "lowerbound": {"R": 10.0, "epsilon": 0.1}})
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "lowerbound"]) == EXIT_OK

    summary = _read_json(out / "lowerbound_summary.json")
    assert math.isclose(summary["eta"], 1e-4, rel_tol=1e-12)
    assert summary["tv"] <= summary["eta"] + 1e-8
    # default m floors the half tv budget; eta carries one ulp from 0.1 ** 2
    assert summary["m"] == int(0.5 / summary["eta"])
    assert summary["m"] in (4999, 5000)
    assert summary["risk_floor"] > 0.0
    assert summary["separation_rms_on_interval"] >= 0.9 * 10.0

    _, header, rows = _read_csv(out / "lowerbound.csv")
    assert header == ["x", "v1", "v2", "diff", "density_pi_star"]
    assert len(rows) == 801
    x = np.array([float(r[0]) for r in rows])
    v1 = np.array([float(r[1]) for r in rows])
    v2 = np.array([float(r[2]) for r in rows])
    assert x[0] == -14.0 and x[-1] == 14.0
    # the two alternatives mirror each other through the origin
    assert np.max(np.abs(v1 + v2[::-1])) < 1e-9


def test_lowerbound_rerun_is_byte_identical(tmp_path):
    cfg = _write_config(tmp_path, {"lowerbound": {"R": 10.0, "epsilon": 0.1}})
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["--config", cfg, "--out", str(out_a), "lowerbound"]) == EXIT_OK
    assert main(["--config", cfg, "--out", str(out_b), "lowerbound"]) == EXIT_OK
    for name in ("lowerbound.csv", "lowerbound_summary.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_lowerbound_separation_requires_wide_modes(tmp_path, capsys):
    cfg = _write_config(tmp_path, {"lowerbound": {"R": 4.0, "epsilon": 0.1}})
    code = main(["--config", cfg, "--out", str(tmp_path / "out"),
                 "lowerbound"])
    assert code == EXIT_CONFIG
    assert "field 'lowerbound'" in capsys.readouterr().err


# -- global flags ------------------------------------------------------------------


def test_out_override_places_outputs(tmp_path):
    cfg = _write_config(tmp_path, {"out_dir": str(tmp_path / "from_config")})
    out = tmp_path / "elsewhere"
    assert main(["--config", cfg, "--out", str(out), "gradcheck"]) == EXIT_OK
    assert (out / "gradcheck.json").exists()
    assert not (tmp_path / "from_config").exists()


def test_seed_override_changes_train_data(tmp_path):
    cfg = _write_config(tmp_path, _SMALL_TRAIN)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["--config", cfg, "--out", str(out_a), "train"]) == EXIT_OK
    assert main(["--config", cfg, "--out", str(out_b), "--seed", "77",
                 "train"]) == EXIT_OK
    sum_a = _read_json(out_a / "train_summary.json")
    sum_b = _read_json(out_b / "train_summary.json")
    assert sum_a["seed"] == 11
    assert sum_b["seed"] == 77
    assert sum_a["final_loss"] != sum_b["final_loss"]
