"""Command-line entry point: training runs, sampling, rate sweeps, bound
tables, and the two-hypothesis construction, all driven by one JSON config.

Single-threaded BLAS is pinned before numpy loads so that identical configs
produce byte-identical outputs regardless of host core count.
"""

from __future__ import annotations

import os

for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import dataclasses
import hashlib
import json
import math
import multiprocessing
import sys
import time

import numpy as np

from . import __version__
from .bounds import BoundInputs, VacuousRegimeError, bernstein_B, full_report
from .distributions import DistributionSpec, draw_coupled
from .linalg_rng import RngStream, splitmix64
from .metrics import excess_risk, fit_rate, w2_empirical
from .network import (NetArchitecture, VelocityNet, backward,
                      finite_diff_grad, load_checkpoint, save_checkpoint)
from .oracles import (GaussianPairSpec, LowerBoundInstance, lecam_budget,
                      lowerbound_grid, tv_distance_mixtures,
                      velocity_l2_error, velocity_separation, vstar_field)
from .sampler import ReflowState, euler_integrate, reflow, straightness
from .training import DivergenceError, TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_TASKS = ("gaussian_1d", "gaussian_2d", "mixture_2d", "lowerbound")


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending field."""


# -- config ---------------------------------------------------------------------


def _field(obj: dict, name: str, default=None, required: bool = False,
           prefix: str = ""):
    if name not in obj:
        if required:
            raise ConfigError(f"missing field '{prefix}{name}'")
        return default
    return obj[name]


def _default_endpoints(task: str) -> tuple[dict, dict]:
    if task == "gaussian_1d":
        return ({"kind": "gaussian", "dim": 1, "mean": [0.0], "std": 1.0},
                {"kind": "gaussian", "dim": 1, "mean": [2.0], "std": 1.0})
    if task == "gaussian_2d":
        return ({"kind": "gaussian", "dim": 2, "mean": [0.0, 0.0], "std": 1.0},
                {"kind": "gaussian", "dim": 2, "mean": [2.0, 1.0], "std": 1.0})
    if task == "mixture_2d":
        return ({"kind": "gaussian", "dim": 2, "mean": [0.0, 0.0], "std": 1.0},
                {"kind": "gaussian_mixture", "dim": 2,
                 "components": [
                     {"weight": 0.5, "mean": [-2.0, 0.0], "std": 0.5},
                     {"weight": 0.5, "mean": [2.0, 0.0], "std": 0.5}]})
    return ({"kind": "gaussian", "dim": 1, "mean": [0.0], "std": 1.0},
            {"kind": "gaussian", "dim": 1, "mean": [0.0], "std": 1.0})


@dataclasses.dataclass
class SweepSpec:
    grid: list[int]
    trials: int
    epochs: int
    proxy_n: int
    proxy_epochs: int
    proxy_batch: int
    eval_samples: int
    euler_steps: int
    steps_exponent: float

    def __post_init__(self):
        if len(self.grid) < 5:
            raise ConfigError("field 'sweep.grid' needs >= 5 values")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ConfigError("field 'sweep.grid' must be strictly ascending")
        if math.log10(self.grid[-1] / self.grid[0]) < 1.5:
            raise ConfigError("field 'sweep.grid' must span >= 1.5 decades")
        if self.trials < 1:
            raise ConfigError("field 'sweep.trials' must be >= 1")
        for name in ("epochs", "proxy_n", "proxy_epochs", "proxy_batch",
                     "eval_samples", "euler_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"field 'sweep.{name}' must be >= 1")
        if not (1.0 <= self.steps_exponent <= 2.0):
            raise ConfigError("field 'sweep.steps_exponent' must be in [1, 2]")


def _sweep_steps(epochs: int, n: int, batch: int, exponent: float) -> int:
    # superlinear step growth keeps the optimization error decaying at least
    # as fast as the 1/n statistical term across the grid
    return max(1, int(round(epochs * (n / batch) ** exponent)))


@dataclasses.dataclass
class Experiment:
    task: str
    seed: int
    out_dir: str
    pi0: DistributionSpec
    pi1: DistributionSpec
    arch: NetArchitecture
    train_block: dict
    sweep: SweepSpec | None
    bounds_block: dict | None
    lowerbound_block: dict | None
    sha: str
    raw: dict

    def train_config(self, **overrides) -> TrainConfig:
        merged = {**self.train_block, **overrides}
        try:
            return TrainConfig(**merged)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"field 'train': {e}") from None


_DEFAULT_TRAIN = {
    "n_samples": 1024, "batch_size": 64, "steps": 480,
    "schedule": "diminishing", "eta": 0.05, "c": 4.0, "gamma": 40.0,
    "seed": 0, "record_every": 10,
}

_DEFAULT_ARCH = {"dim": 1, "hidden": [8], "activation": "tanh",
                 "l1_budget": 4.0, "act_bound": 1.0}


def load_experiment(config_path: str | None, seed_override: int | None = None,
                    out_override: str | None = None) -> Experiment:
    if config_path is None:
        raw_bytes = b"{}"
        obj = {}
    else:
        try:
            with open(config_path, "rb") as fh:
                raw_bytes = fh.read()
            obj = json.loads(raw_bytes)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigError("top-level config must be a JSON object")

    task = _field(obj, "task", default="gaussian_1d")
    if task not in _TASKS:
        raise ConfigError(f"field 'task' must be one of {_TASKS}")
    seed = seed_override if seed_override is not None else _field(obj, "seed", 0)
    if not isinstance(seed, int) or not (0 <= seed < 2 ** 64):
        raise ConfigError("field 'seed' must be an unsigned 64-bit integer")
    out_dir = out_override or _field(obj, "out_dir", "out")

    d0, d1 = _default_endpoints(task)
    try:
        pi0 = DistributionSpec.from_json(_field(obj, "pi0", d0))
        pi1 = DistributionSpec.from_json(_field(obj, "pi1", d1))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"field 'pi0'/'pi1': {e}") from None
    if pi0.dim != pi1.dim:
        raise ConfigError("field 'pi0'/'pi1': dimensions differ")

    arch_obj = {**_DEFAULT_ARCH, "dim": pi0.dim,
                **_field(obj, "arch", {})}
    try:
        arch = NetArchitecture.from_json(arch_obj)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"field 'arch': {e}") from None
    if arch.dim != pi0.dim:
        raise ConfigError("field 'arch.dim' must match the endpoint dimension")

    train_block = {**_DEFAULT_TRAIN, **_field(obj, "train", {})}
    train_block["seed"] = seed

    sweep = None
    if "sweep" in obj:
        sw = obj["sweep"]
        sweep = SweepSpec(
            grid=[int(v) for v in _field(sw, "grid", required=True, prefix="sweep.")],
            trials=int(_field(sw, "trials", 10)),
            epochs=int(_field(sw, "epochs", 30)),
            proxy_n=int(_field(sw, "proxy_n", 65536)),
            proxy_epochs=int(_field(sw, "proxy_epochs", 40)),
            proxy_batch=int(_field(sw, "proxy_batch", 512)),
            eval_samples=int(_field(sw, "eval_samples", 4096)),
            euler_steps=int(_field(sw, "euler_steps", 100)),
            steps_exponent=float(_field(sw, "steps_exponent", 1.0)))

    return Experiment(
        task=task, seed=seed, out_dir=out_dir, pi0=pi0, pi1=pi1, arch=arch,
        train_block=train_block, sweep=sweep,
        bounds_block=_field(obj, "bounds", None),
        lowerbound_block=_field(obj, "lowerbound", None),
        sha=hashlib.sha256(raw_bytes).hexdigest(), raw=obj)


# -- output helpers --------------------------------------------------------------


def _meta_line(exp: Experiment) -> str:
    return f"# config_sha256={exp.sha} version={__version__}"


def _fmt(v) -> str:
    # repr of a Python float round-trips exactly; numpy scalars must be
    # unwrapped first or their repr carries the dtype
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_csv(path: str, exp: Experiment, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_meta_line(exp) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: str, exp: Experiment, obj: dict) -> None:
    payload = {"config_sha256": exp.sha, "version": __version__, **obj}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ensure_out(exp: Experiment) -> str:
    try:
        os.makedirs(exp.out_dir, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"field 'out_dir' not writable: {e}") from None
    return exp.out_dir


# -- train -----------------------------------------------------------------------


def cmd_train(exp: Experiment, args) -> int:
    out = _ensure_out(exp)
    root = RngStream(exp.seed)
    cfg = exp.train_config()
    data = draw_coupled(root.derive(1), exp.pi0, exp.pi1, cfg.n_samples)
    net = VelocityNet.init(exp.arch, root.derive(2))
    trace = train(net, data, cfg)
    save_checkpoint(net, os.path.join(out, "checkpoint.bin"), seed=exp.seed,
                    step=cfg.steps,
                    extra={"config_sha256": exp.sha, "version": __version__})
    write_csv(os.path.join(out, "trace.csv"), exp,
              ["step", "loss", "grad_norm", "eta", "max_row_l1"],
              trace.to_csv_rows())
    write_json(os.path.join(out, "train_summary.json"), exp, {
        "task": exp.task, "seed": exp.seed, "n_samples": cfg.n_samples,
        "steps": cfg.steps, "initial_loss": trace.initial_loss,
        "final_loss": trace.final_loss,
        "param_count": exp.arch.param_count})
    print(f"train: final loss {trace.final_loss:.6g} "
          f"({cfg.steps} steps, n={cfg.n_samples})")
    return EXIT_OK


# -- sample ----------------------------------------------------------------------


def cmd_sample(exp: Experiment, args) -> int:
    out = _ensure_out(exp)
    net, header = load_checkpoint(args.checkpoint)
    root = RngStream(exp.seed)
    rounds = []
    if args.reflow > 0:
        cfg = exp.train_config()
        state = ReflowState(round_index=0, net=net)
        _, traj0 = euler_integrate(
            net, exp.pi0.sample(root.derive(3), min(args.count, 1024)),
            args.steps, record=True)
        rounds.append(straightness(traj0))
        for _ in range(args.reflow):
            state = reflow(state, exp.pi0, cfg.n_samples, cfg,
                           root.derive(4), integrate_steps=args.steps)
            _, traj = euler_integrate(
                state.net, exp.pi0.sample(root.derive(3),
                                          min(args.count, 1024)),
                args.steps, record=True)
            rounds.append(straightness(traj))
        net = state.net
    z0 = exp.pi0.sample(root.derive(5), args.count)
    z1, traj = euler_integrate(net, z0, args.steps,
                               record=args.trajectories)
    dim_cols = [f"dim_{j}" for j in range(z1.shape[1])]
    write_csv(os.path.join(out, "samples.csv"), exp, dim_cols,
              (list(row) for row in z1))
    if args.trajectories:
        rows = []
        for s in range(traj.states.shape[0]):
            for i in range(traj.states.shape[1]):
                rows.append([i, s, float(traj.times[s]),
                             *traj.states[s, i].tolist()])
        write_csv(os.path.join(out, "trajectories.csv"), exp,
                  ["sample", "step", "time", *dim_cols], rows)
    write_json(os.path.join(out, "sample_summary.json"), exp, {
        "checkpoint": os.path.basename(args.checkpoint),
        "checkpoint_seed": header.get("seed"),
        "count": args.count, "euler_steps": args.steps,
        "reflow_rounds": args.reflow,
        "straightness_per_round": rounds})
    if rounds:
        print("sample: straightness per round "
              + ", ".join(f"{v:.6g}" for v in rounds))
    print(f"sample: wrote {args.count} samples ({args.steps} steps)")
    return EXIT_OK


# -- sweep -----------------------------------------------------------------------

_CTX: dict = {}


def _cell_seed(seed: int, n: int, trial: int) -> int:
    return splitmix64(seed ^ splitmix64(n * 4096 + trial))


def _run_cell(payload):
    n, trial = payload
    exp_seed = _CTX["seed"]
    pi0 = DistributionSpec.from_json(_CTX["pi0"])
    pi1 = DistributionSpec.from_json(_CTX["pi1"])
    arch = NetArchitecture.from_json(_CTX["arch"])
    cell_seed = _cell_seed(exp_seed, n, trial)
    s = RngStream(exp_seed).derive(n).derive(trial)
    t0 = time.perf_counter()
    try:
        data = draw_coupled(s.derive(1), pi0, pi1, n)
        net = VelocityNet.init(arch, s.derive(2))
        batch = min(_CTX["batch_size"], n)
        steps = _sweep_steps(_CTX["epochs"], n, batch, _CTX["steps_exponent"])
        cfg = TrainConfig(n_samples=n, batch_size=batch, steps=steps,
                          schedule=_CTX["schedule"], eta=_CTX["eta"],
                          c=_CTX["c"], gamma=_CTX["gamma"], seed=cell_seed,
                          record_every=max(1, steps))
        train(net, data, cfg)

        proxy = VelocityNet.from_json_weights(_CTX["proxy"])
        holdout = _CTX["holdout"]
        excess = excess_risk(net, proxy, holdout)
        if _CTX["gauss_pair"] is not None:
            gp = GaussianPairSpec(**_CTX["gauss_pair"])
            vel, _ = velocity_l2_error(net, gp, _CTX["eval_samples"],
                                       s.derive(3))
        else:
            vel = float("nan")
        m = _CTX["eval_samples"]
        z0 = pi0.sample(s.derive(4), m)
        z1, _ = euler_integrate(net, z0, _CTX["euler_steps"])
        ref = pi1.sample(s.derive(5), m)
        refb = pi1.sample(s.derive(6), m)
        w2 = w2_empirical(z1, ref)
        w2_base = w2_empirical(refb, ref)
        ms = 1000.0 * (time.perf_counter() - t0)
        return ("ok", [n, trial, cell_seed, excess, vel, w2, w2_base, ms])
    except (DivergenceError, FloatingPointError) as e:
        return ("fail", [n, trial, cell_seed, type(e).__name__, str(e)])


def _init_worker(ctx):
    global _CTX
    _CTX = ctx


def _train_proxy(exp: Experiment) -> VelocityNet:
    sw = exp.sweep
    root = RngStream(exp.seed).derive(7)
    data = draw_coupled(root.derive(1), exp.pi0, exp.pi1, sw.proxy_n)
    net = VelocityNet.init(exp.arch, root.derive(2))
    batch = min(sw.proxy_batch, sw.proxy_n)
    steps = _sweep_steps(sw.proxy_epochs, sw.proxy_n, batch, sw.steps_exponent)
    cfg = exp.train_config(n_samples=sw.proxy_n, batch_size=batch,
                           steps=steps, seed=splitmix64(exp.seed ^ 0x70),
                           record_every=max(1, steps))
    train(net, data, cfg)
    return net


def cmd_sweep(exp: Experiment, args) -> int:
    if exp.sweep is None:
        raise ConfigError("missing field 'sweep'")
    out = _ensure_out(exp)
    sw = exp.sweep

    proxy = _train_proxy(exp)
    holdout = draw_coupled(RngStream(exp.seed).derive(8), exp.pi0, exp.pi1,
                           sw.eval_samples)
    gauss_pair = None
    if exp.pi0.kind == "gaussian" and exp.pi1.kind == "gaussian" \
            and abs(exp.pi0.std - exp.pi1.std) < 1e-12:
        gauss_pair = {"mu0": exp.pi0.mean_vector(), "mu1": exp.pi1.mean_vector(),
                      "std0": exp.pi0.std, "std1": exp.pi1.std}

    ctx = {
        "seed": exp.seed, "pi0": exp.pi0.to_json(), "pi1": exp.pi1.to_json(),
        "arch": exp.arch.to_json(), "proxy": proxy.to_json_weights(),
        "holdout": holdout, "gauss_pair": gauss_pair,
        "batch_size": exp.train_block["batch_size"],
        "epochs": sw.epochs, "schedule": exp.train_block["schedule"],
        "eta": exp.train_block["eta"], "c": exp.train_block["c"],
        "gamma": exp.train_block["gamma"],
        "eval_samples": sw.eval_samples, "euler_steps": sw.euler_steps,
        "steps_exponent": sw.steps_exponent,
    }
    cells = [(n, t) for n in sw.grid for t in range(sw.trials)]
    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs, initializer=_init_worker,
                                  initargs=(ctx,)) as pool:
            results = pool.map(_run_cell, cells)
    else:
        _init_worker(ctx)
        results = [_run_cell(c) for c in cells]

    rows = sorted((r for kind, r in results if kind == "ok"),
                  key=lambda r: (r[0], r[1]))
    failures = sorted((r for kind, r in results if kind == "fail"),
                      key=lambda r: (r[0], r[1]))
    write_csv(os.path.join(out, "sweep.csv"), exp,
              ["n", "trial", "seed", "excess_risk", "vel_l2", "w2",
               "w2_baseline", "runtime_ms"], rows)
    write_csv(os.path.join(out, "sweep_failures.csv"), exp,
              ["n", "trial", "seed", "error", "message"], failures)

    fits = {}
    per_n: dict[int, list] = {}
    for r in rows:
        per_n.setdefault(r[0], []).append(r)
    ns = sorted(per_n)
    med_excess = [float(np.median([r[3] for r in per_n[n]])) for n in ns]
    w2c_per_n = []
    for n in ns:
        vals = [math.sqrt(max(r[5] ** 2 - r[6] ** 2, 1e-12)) for r in per_n[n]]
        w2c_per_n.append(float(np.median(vals)))
    summary = {"grid": ns, "trials": sw.trials,
               "median_excess_risk": med_excess,
               "median_w2_corrected": w2c_per_n,
               "failures": len(failures)}
    if len(ns) >= 4 and all(v > 0 for v in med_excess):
        f = fit_rate(np.array(ns, dtype=float), np.array(med_excess))
        fits["excess_risk"] = {"slope": f.slope, "intercept": f.intercept,
                               "stderr": f.stderr, "r2": f.r2}
    if len(ns) >= 4 and all(v > 0 for v in w2c_per_n):
        f = fit_rate(np.array(ns, dtype=float), np.array(w2c_per_n))
        fits["w2_corrected"] = {"slope": f.slope, "intercept": f.intercept,
                                "stderr": f.stderr, "r2": f.r2}
    summary["fits"] = fits
    write_json(os.path.join(out, "sweep_fit.json"), exp, summary)
    _emit_plot_script(os.path.join(out, "plot_sweep.py"))
    for name, f in fits.items():
        print(f"sweep: {name} slope {f['slope']:.4f} "
              f"(stderr {f['stderr']:.4f}, r2 {f['r2']:.4f})")
    print(f"sweep: {len(rows)} rows, {len(failures)} failures")
    return EXIT_OK


_PLOT_SCRIPT = '''\
#!/usr/bin/env python3
"""Log-log rate plot for a sweep.csv produced by the sweep subcommand."""
import csv
import math
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "sweep.csv"
rows = []
with open(path) as fh:
    for line in fh:
        if not line.startswith("#"):
            break
    reader = csv.DictReader(fh.read().splitlines(),
                            fieldnames=line.strip().split(","))
    next(reader)
    rows = [r for r in reader]
rows = [r for r in rows if r.get("n")]

by_n = {}
for r in rows:
    n = int(r["n"])
    w2c = math.sqrt(max(float(r["w2"]) ** 2 - float(r["w2_baseline"]) ** 2, 1e-12))
    by_n.setdefault(n, []).append((float(r["excess_risk"]), w2c))

ns = sorted(by_n)
med = lambda xs: sorted(xs)[len(xs) // 2]
ex = [med([v[0] for v in by_n[n]]) for n in ns]
w2 = [med([v[1] for v in by_n[n]]) for n in ns]

fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for ax, ys, label, slope in ((axes[0], ex, "excess risk", -1.0),
                             (axes[1], w2, "W2 (corrected)", -0.5)):
    ax.loglog(ns, ys, "o-", label=label)
    ref = [ys[0] * (n / ns[0]) ** slope for n in ns]
    ax.loglog(ns, ref, "--", label=f"slope {slope}")
    ax.set_xlabel("n")
    ax.legend()
fig.tight_layout()
fig.savefig("sweep.png", dpi=150)
print("wrote sweep.png")
'''


def _emit_plot_script(path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_PLOT_SCRIPT)


# -- bounds ----------------------------------------------------------------------


def cmd_bounds(exp: Experiment, args) -> int:
    if exp.bounds_block is None:
        raise ConfigError("missing field 'bounds'")
    out = _ensure_out(exp)
    blk = dict(exp.bounds_block)
    sigma = float(blk.pop("sigma", 1.0))
    if "B" not in blk and "L_theta" in blk and "mu" in blk:
        blk["B"] = bernstein_B(float(blk["L_theta"]), float(blk["mu"]))
    try:
        inputs = BoundInputs(**blk)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"field 'bounds': {e}") from None
    rep = full_report(inputs, sigma=sigma)
    payload = rep.to_json()
    payload["const_product_705_288"] = 705 * 288
    write_json(os.path.join(out, "bounds.json"), exp, payload)
    flat = {**{f"inputs.{k}": v for k, v in payload["inputs"].items()},
            **{k: v for k, v in payload.items()
               if not isinstance(v, dict)},
            **{f"truncation.{k}": v for k, v in payload["truncation"].items()}}
    write_csv(os.path.join(out, "bounds.csv"), exp, ["key", "value"],
              sorted(flat.items()))
    print(f"bounds: r_star {rep.r_star:.6g}, stat {rep.stat_bound:.6g}, "
          f"n_required {rep.n_required}")
    return EXIT_OK


# -- lowerbound ------------------------------------------------------------------


def cmd_lowerbound(exp: Experiment, args) -> int:
    if exp.lowerbound_block is None:
        raise ConfigError("missing field 'lowerbound'")
    out = _ensure_out(exp)
    blk = exp.lowerbound_block
    try:
        inst = LowerBoundInstance(
            sigma=float(_field(blk, "sigma", 1.0)),
            R=float(_field(blk, "R", required=True, prefix="lowerbound.")),
            epsilon=float(_field(blk, "epsilon", required=True,
                                 prefix="lowerbound.")),
            c_interval=float(_field(blk, "c_interval", 1.0)))
    except ValueError as e:
        raise ConfigError(f"field 'lowerbound': {e}") from None
    m = int(_field(blk, "m", max(1, int(0.5 / inst.eta))))
    lo = float(_field(blk, "grid_lo", -inst.R - 4.0 * inst.sigma))
    hi = float(_field(blk, "grid_hi", inst.R + 4.0 * inst.sigma))
    n_grid = int(_field(blk, "grid_n", 801))

    tv = tv_distance_mixtures(inst)
    sep = velocity_separation(inst)
    if sep.interval_rms < 0.9 * inst.R:
        raise FloatingPointError(
            f"separation rms {sep.interval_rms:.4g} below 0.9 R")
    if tv > inst.eta + 1e-8:
        raise FloatingPointError(f"TV {tv:.4g} exceeds eta {inst.eta:.4g}")
    grid = lowerbound_grid(inst, lo, hi, n_grid)
    write_csv(os.path.join(out, "lowerbound.csv"), exp,
              ["x", "v1", "v2", "diff", "density_pi_star"],
              zip(grid["x"], grid["v1"], grid["v2"], grid["diff"],
                  grid["density_pi_star"]))
    lc = lecam_budget(inst, m)
    write_json(os.path.join(out, "lowerbound_summary.json"), exp, {
        "sigma": inst.sigma, "R": inst.R, "epsilon": inst.epsilon,
        "eta": inst.eta, "tv": tv, "m": m, "m_eta_budget": lc.tv_budget_m,
        "separation_rms_on_interval": sep.interval_rms,
        "separation_pointwise_min": sep.pointwise_min,
        "separation_l2_sq": lc.separation_sq,
        "risk_floor": lc.risk_floor, "risk_floor_ratio": lc.floor_ratio,
        "interval": list(inst.interval)})
    print(f"lowerbound: eta {inst.eta:.6g}, tv {tv:.6g}, "
          f"rms separation {sep.interval_rms:.4g} (>= 0.9 R ok)")
    return EXIT_OK


# -- gradcheck -------------------------------------------------------------------


def _gradcheck_battery(exp: Experiment) -> list[NetArchitecture]:
    archs = [exp.arch]
    base = [
        NetArchitecture(dim=1, hidden=(4,), activation="tanh", l1_budget=2.0),
        NetArchitecture(dim=2, hidden=(5, 4), activation="sigmoid",
                        l1_budget=3.0),
        NetArchitecture(dim=2, hidden=(6,), activation="softplus_clamped",
                        l1_budget=2.0, act_bound=2.0),
    ]
    archs.extend(a for a in base if a != exp.arch)
    return archs


def cmd_gradcheck(exp: Experiment, args) -> int:
    out = _ensure_out(exp)
    root = RngStream(exp.seed).derive(9)
    reports = []
    worst = 0.0
    for i, arch in enumerate(_gradcheck_battery(exp)):
        s = root.derive(i)
        net = VelocityNet.init(arch, s)
        pi = DistributionSpec(kind="gaussian", dim=arch.dim,
                              mean=np.zeros(arch.dim), std=1.0)
        data = draw_coupled(s.derive(1), pi, pi, 16)
        g = backward(net, data)
        fd = finite_diff_grad(net, data)
        denom = max(float(np.linalg.norm(fd)), 1e-12)
        rel = float(np.linalg.norm(g - fd)) / denom
        worst = max(worst, rel)
        reports.append({"activation": arch.activation, "depth": arch.depth,
                        "param_count": arch.param_count, "rel_err": rel})
        print(f"gradcheck: {arch.activation} depth {arch.depth} "
              f"P={arch.param_count} rel err {rel:.3e}")
    ok = worst <= 1e-5
    write_json(os.path.join(out, "gradcheck.json"), exp, {
        "max_rel_err": worst, "tolerance": 1e-5, "passed": ok,
        "cases": reports})
    print(f"gradcheck: max rel err {worst:.3e} "
          f"({'ok' if ok else 'FAIL'} at 1e-5)")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rflab",
        description="Rectified-flow training, sampling, rate sweeps, and "
                    "sample-complexity bound evaluation.")
    p.add_argument("--config", default=None, help="JSON config path")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes for sweeps")
    p.add_argument("--out", default=None, help="override the output directory")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", help="train one model, write checkpoint + trace")
    sp = sub.add_parser("sample", help="integrate a checkpoint to samples")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--count", type=int, default=1024)
    sp.add_argument("--reflow", type=int, default=0,
                    help="self-distillation rounds before sampling")
    sp.add_argument("--trajectories", action="store_true",
                    help="also write the full integration path")
    sub.add_parser("sweep", help="rate sweep over the n grid")
    sub.add_parser("bounds", help="evaluate the bound formulas")
    sub.add_parser("lowerbound", help="two-hypothesis construction report")
    sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    return p


_DISPATCH = {
    "train": cmd_train,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "bounds": cmd_bounds,
    "lowerbound": cmd_lowerbound,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        exp = load_experiment(args.config, seed_override=args.seed,
                              out_override=args.out)
        return _DISPATCH[args.command](exp, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, VacuousRegimeError, FloatingPointError,
            OverflowError, ValueError) as e:
        # ConfigError is caught above, so a ValueError reaching this point is a
        # runtime domain violation (vacuous regime, failed precondition), not a
        # malformed config.
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
