"""Configuration-driven experiment drivers behind the command-line interface.

Every artifact is delimited text with a config-fingerprint comment line and a
header row, so results are traceable to exact settings. All randomness derives
from the per-section seeds in the configuration.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import barrier, control, cvae, sim
from .config import ExperimentConfig, fingerprint
from .errors import BudgetExceededError, ConfigError


def out_path(config: ExperimentConfig, name: str) -> Path:
    root = Path(os.environ.get("ORIO_OUT_DIR", config.out_dir))
    root.mkdir(parents=True, exist_ok=True)
    return root / name


def _open_csv(path, config: ExperimentConfig, header: list):
    fh = open(path, "w")
    fh.write(f"# config_sha256={fingerprint(config)}\n")
    fh.write(",".join(header) + "\n")
    return fh


def build_system(config: ExperimentConfig, disturbed: bool = True):
    if config.system == "double_integrator":
        return sim.DoubleIntegrator(dt=config.dt, disturbed=disturbed)
    params = sim.QuadrotorParams(mass=config.mass, gravity=config.gravity, dt=config.dt)
    return sim.Quadrotor(params=params, disturbed=disturbed)


def build_barrier_spec(config: ExperimentConfig) -> barrier.BarrierSpec:
    A = np.array([[1.0, config.dt], [0.0, 1.0]])
    B = np.array([0.0, config.dt])
    P = barrier.dare_solve(A, B, config.barrier_dare_q * np.eye(2),
                           np.array([[config.barrier_dare_r]]))
    kind = "quadratic" if config.system == "double_integrator" else "quadrotor"
    lam_pen = 0.0 if kind == "quadratic" else config.barrier_lam_pen
    return barrier.BarrierSpec(kind=kind, P=P, C=config.barrier_c,
                               z0=config.barrier_z0, alpha=config.barrier_alpha,
                               lam_pen=lam_pen)


def build_pilot(config: ExperimentConfig, system):
    """Data-collection controller: open loop for the double integrator,
    stabilizing descent for the quadrotor. The stiff, critically damped
    gains park the drone inside the ground-effect zone quickly so the
    dataset carries its variance profile."""
    if config.system == "double_integrator":
        return lambda x, k: np.zeros(1)
    target = np.array([0.0, 0.0, config.collect_target_altitude])
    return control.make_nominal_se3(system.params, target, kp=16.0, kd=8.0)


def collection_start(config: ExperimentConfig) -> np.ndarray:
    if config.system == "double_integrator":
        return np.zeros(2)
    return sim.quad_hover_state(config.collect_start_altitude)


def verify_start(config: ExperimentConfig) -> np.ndarray:
    if config.system == "double_integrator":
        return np.array([config.barrier_z0 + config.verify_start_offset, 0.0])
    return sim.quad_hover_state(config.barrier_z0 + config.verify_start_offset)


def grid_state(config: ExperimentConfig, value: float) -> np.ndarray:
    if config.system == "double_integrator":
        return np.array([value, 0.0])
    return sim.quad_hover_state(value)


def train_config(config: ExperimentConfig) -> cvae.TrainConfig:
    return cvae.TrainConfig(
        epochs=config.train_epochs,
        batch_size=config.train_batch_size,
        lr=config.train_lr,
        lr_final=config.train_lr_final if config.train_lr_final > 0 else None,
        kl_warmup=config.train_kl_warmup,
        hidden=config.train_hidden,
        latent_dim=config.train_latent_dim,
        seed=config.train_seed,
    )


# ---------------------------------------------------------------------------
# Subcommand drivers
# ---------------------------------------------------------------------------


def run_collect(config: ExperimentConfig, dataset_path=None) -> Path:
    system = build_system(config)
    pilot = build_pilot(config, system)
    start = collection_start(config)
    ds = sim.collect_dataset(system, pilot,
                             n_traj=config.collect_trajectories,
                             duration=config.collect_duration,
                             rate=config.collect_rate,
                             seed=config.collect_seed,
                             x0_fn=lambda i: start)
    path = Path(dataset_path) if dataset_path else out_path(config, "dataset.csv")
    ds.save(path)
    print(f"collected {ds.n_rows} rows -> {path}")
    return path


def run_train(config: ExperimentConfig, dataset_path, model_path=None) -> Path:
    if not Path(dataset_path).exists():
        raise ConfigError(f"dataset not found: {dataset_path}")
    ds = cvae.ResidualDataset.load(dataset_path)
    tc = train_config(config)
    if config.train_model == "cvae":
        model, trace = cvae.train(ds, tc)
        path = Path(model_path) if model_path else out_path(config, "cvae.txt")
        cvae.save_cvae(model, path)
        final = -trace[-1]
        print(f"trained cvae on {ds.n_rows} rows; final ELBO {final:.4f} -> {path}")
    else:
        reg, trace = cvae.train_mlp_baseline(ds, tc)
        path = Path(model_path) if model_path else out_path(config, "mlp.txt")
        cvae.save_regressor(reg, path)
        print(f"trained mlp baseline on {ds.n_rows} rows; "
              f"final loss {trace[-1]:.6f} -> {path}")
    trace_path = Path(str(path).rsplit(".", 1)[0] + "_loss.csv")
    with _open_csv(trace_path, config, ["epoch", "loss"]) as fh:
        for epoch, loss in enumerate(trace):
            fh.write(f"{epoch},{loss!r}\n")
    return path


def run_estimate(config: ExperimentConfig, model_path, estimates_path=None) -> Path:
    if not Path(model_path).exists():
        raise ConfigError(f"model not found: {model_path}")
    model = cvae.load_cvae(model_path)
    system = build_system(config)
    grid = np.linspace(config.estimate_grid_lo, config.estimate_grid_hi,
                       config.estimate_grid_points)
    states = [grid_state(config, v) for v in grid]
    if states[0].shape[0] != model.state_dim:
        raise ConfigError(f"model state dim {model.state_dim} does not match "
                          f"system {config.system}")
    l = model.residual_dim
    header = (["estimator", "rep", "state_index", "grid_value",
               "err_mean", "err_cov", "seconds"]
              + [f"mean_{i}" for i in range(l)]
              + [f"cov_{i}_{j}" for i in range(l) for j in range(l)]
              + [f"true_mean_{i}" for i in range(l)]
              + [f"true_cov_{i}_{j}" for i in range(l) for j in range(l)])
    path = Path(estimates_path) if estimates_path else out_path(config, "estimates.csv")
    estimators = {"gmm": cvae.estimate_moments_gmm,
                  "sampling": cvae.estimate_moments_sampling}
    S = config.estimate_samples
    with _open_csv(path, config, header) as fh:
        for est_id, (name, fn) in enumerate(estimators.items()):
            for rep in range(config.estimate_repetitions):
                for idx, state in enumerate(states):
                    seed = np.random.SeedSequence(entropy=config.estimate_seed,
                                                  spawn_key=(est_id, rep, idx))
                    true = system.true_moments(state)
                    t0 = time.perf_counter()
                    est = fn(model, state, S, seed)
                    dt_call = time.perf_counter() - t0
                    err_mean = float(np.linalg.norm(est.mean - true.mean))
                    err_cov = float(np.linalg.norm(est.cov - true.cov, ord=2))
                    row = [name, str(rep), str(idx), repr(float(grid[idx])),
                           repr(err_mean), repr(err_cov), repr(dt_call)]
                    row += [repr(float(v)) for v in est.mean]
                    row += [repr(float(v)) for v in est.cov.ravel()]
                    row += [repr(float(v)) for v in true.mean]
                    row += [repr(float(v)) for v in true.cov.ravel()]
                    fh.write(",".join(row) + "\n")
    print(f"estimate sweep: {len(estimators)} estimators x "
          f"{config.estimate_repetitions} reps x {len(states)} states -> {path}")
    return path


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple:
    """95% score interval for a binomial proportion; valid near 0 and 1."""
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class AblationReport:
    ablation: str
    trials: int
    exits: int
    exit_rate: float
    wilson_lo: float
    wilson_hi: float
    bound: float
    infeasible_trials: int
    sec_per_step: float


def build_nominal(config: ExperimentConfig, system):
    if config.system == "double_integrator":
        A, B = system.matrices()
        return control.make_nominal_lqr(
            A, B, config.barrier_dare_q * np.eye(2),
            np.array([[config.barrier_dare_r]]),
            target=np.array([config.verify_target, 0.0]))
    return control.make_nominal_se3(
        system.params, target_pos=np.array([0.0, 0.0, config.verify_target]))


def build_ablation(config: ExperimentConfig, spec, kind: str, seed: int,
                   dataset_path=None, model_path=None, regressor_path=None):
    kwargs = {}
    if kind == "jed":
        if not dataset_path or not Path(dataset_path).exists():
            raise ConfigError(f"jed ablation needs a dataset file, got {dataset_path}")
        kwargs["dataset"] = cvae.ResidualDataset.load(dataset_path)
    elif kind == "mlp":
        if not regressor_path or not Path(regressor_path).exists():
            raise ConfigError(f"mlp ablation needs a regressor file, got {regressor_path}")
        kwargs["regressor"] = cvae.load_regressor(regressor_path)
    elif kind == "true":
        kwargs["true_moments"] = build_system(config).true_moments
    elif kind == "orio":
        if not model_path or not Path(model_path).exists():
            raise ConfigError(f"orio ablation needs a model file, got {model_path}")
        kwargs["model"] = cvae.load_cvae(model_path)
        kwargs["n_samples"] = config.verify_samples
        kwargs["seed"] = seed
    return control.make_ablation(kind, spec, **kwargs)


def build_controller(config: ExperimentConfig, spec, system, ablation):
    if config.system == "double_integrator":
        box_low = box_high = None
    else:
        box_low = np.array([0.0, -config.verify_omega_max,
                            -config.verify_omega_max, -config.verify_omega_max])
        box_high = np.array([config.verify_thrust_max, config.verify_omega_max,
                             config.verify_omega_max, config.verify_omega_max])
    return control.SafetyFilterController(
        spec=spec, system=system, nominal=build_nominal(config, system),
        ablation=ablation, input_low=box_low, input_high=box_high)


def run_verify(config: ExperimentConfig, dataset_path=None, model_path=None,
               regressor_path=None, report_path=None) -> tuple:
    spec = build_barrier_spec(config)
    system = build_system(config, disturbed=config.verify_disturbed)
    x0 = verify_start(config)
    h0 = barrier.barrier_eval(spec, x0)
    M = barrier.upper_bound(spec)
    K = config.verify_horizon
    bound = barrier.exit_prob_bound(h0, M, spec.alpha, K)
    h_fn = lambda s: barrier.barrier_eval(spec, s)
    reports = []
    for abl_idx, kind in enumerate(config.verify_ablations):
        trial_seed_root = np.random.SeedSequence(entropy=config.verify_seed,
                                                 spawn_key=(abl_idx,))
        ablation = build_ablation(config, spec, kind, seed=config.verify_seed + abl_idx,
                                  dataset_path=dataset_path, model_path=model_path,
                                  regressor_path=regressor_path)
        controller = build_controller(config, spec, system, ablation)
        exits = infeasible = 0
        steps_total = 0
        t0 = time.perf_counter()
        for trial, trial_seed in enumerate(trial_seed_root.spawn(config.verify_trials)):
            traj = sim.rollout(system, controller, x0, K, trial_seed, h_fn)
            exits += int(traj.exited)
            infeasible += int(traj.truncated)
            steps_total += max(traj.steps, 1)
        elapsed = time.perf_counter() - t0
        lo, hi = wilson_interval(exits, config.verify_trials)
        reports.append(AblationReport(
            ablation=kind, trials=config.verify_trials, exits=exits,
            exit_rate=exits / config.verify_trials, wilson_lo=lo, wilson_hi=hi,
            bound=bound, infeasible_trials=infeasible,
            sec_per_step=elapsed / steps_total))
        print(f"{kind:>9}: exits {exits}/{config.verify_trials} "
              f"(rate {exits / config.verify_trials:.2f}, "
              f"95% [{lo:.2f}, {hi:.2f}]), bound {bound:.2f}, "
              f"infeasible {infeasible}, {1e3 * elapsed / steps_total:.2f} ms/step")
    path = Path(report_path) if report_path else out_path(config, "verify.csv")
    header = ["ablation", "trials", "exits", "exit_rate", "wilson_lo", "wilson_hi",
              "bound", "infeasible_trials", "sec_per_step", "h0", "M", "alpha", "K"]
    with _open_csv(path, config, header) as fh:
        for r in reports:
            fh.write(f"{r.ablation},{r.trials},{r.exits},{r.exit_rate!r},"
                     f"{r.wilson_lo!r},{r.wilson_hi!r},{r.bound!r},"
                     f"{r.infeasible_trials},{r.sec_per_step!r},"
                     f"{h0!r},{M!r},{spec.alpha!r},{K}\n")
    budget = config.verify_infeasible_budget
    if budget >= 0:
        worst = max(r.infeasible_trials for r in reports)
        if worst > budget:
            raise BudgetExceededError(
                f"{worst} infeasible trials exceed the budget of {budget}")
    return path, reports


def run_simulate(config: ExperimentConfig, dataset_path=None, model_path=None,
                 regressor_path=None, trajectory_path=None) -> Path:
    spec = build_barrier_spec(config)
    system = build_system(config, disturbed=config.verify_disturbed)
    ablation = build_ablation(config, spec, config.simulate_ablation,
                              seed=config.simulate_seed, dataset_path=dataset_path,
                              model_path=model_path, regressor_path=regressor_path)
    controller = build_controller(config, spec, system, ablation)
    traj = sim.rollout(system, controller, verify_start(config),
                       config.simulate_steps, config.simulate_seed,
                       lambda s: barrier.barrier_eval(spec, s))
    path = Path(trajectory_path) if trajectory_path else out_path(config, "trajectory.csv")
    sim.save_trajectory(traj, path)
    print(f"simulated {traj.steps} steps ({config.simulate_ablation}); "
          f"min h {traj.min_h:.4f}, exited={traj.exited}, "
          f"truncated={traj.truncated} -> {path}")
    return path


def run_bench(config: ExperimentConfig, model_path, bench_path=None) -> Path:
    if not Path(model_path).exists():
        raise ConfigError(f"model not found: {model_path}")
    model = cvae.load_cvae(model_path)
    grid = np.linspace(config.estimate_grid_lo, config.estimate_grid_hi,
                       config.bench_grid_points)
    states = [grid_state(config, v) for v in grid]
    estimators = {"gmm": cvae.estimate_moments_gmm,
                  "sampling": cvae.estimate_moments_sampling}
    path = Path(bench_path) if bench_path else out_path(config, "bench.csv")
    rows = []
    for S in (config.bench_samples, 2 * config.bench_samples):
        S = max(S, 2)  # sampling estimator needs at least two draws
        for name, fn in estimators.items():
            for state in states[:2]:  # warm-up excluded from timing
                fn(model, state, S, seed=0)
            times = []
            for rep in range(config.bench_repeats):
                for idx, state in enumerate(states):
                    t0 = time.perf_counter()
                    fn(model, state, S, seed=rep * len(states) + idx)
                    times.append(time.perf_counter() - t0)
            times = np.sort(np.array(times))
            rows.append((name, S, len(times), float(np.median(times)),
                         float(times[int(0.95 * (len(times) - 1))])))
            print(f"bench {name:>9} S={S}: median {rows[-1][3] * 1e3:.3f} ms, "
                  f"p95 {rows[-1][4] * 1e3:.3f} ms over {len(times)} calls")
    with _open_csv(path, config, ["estimator", "samples", "calls",
                                  "median_s", "p95_s"]) as fh:
        for name, S, calls, med, p95 in rows:
            fh.write(f"{name},{S},{calls},{med!r},{p95!r}\n")
    return path
