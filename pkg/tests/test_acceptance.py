"""Acceptance criteria, one test each, at the stated tolerances."""

import math
import time

import numpy as np
import pytest

from test_gp import dense_lml, random_instance
from tactile_gplvm.dissimilarity import LabellingError, label_line
from tactile_gplvm.experiments import ExperimentSpec, run_offline_eval, run_online_experiment
from tactile_gplvm.gp import (
    KernelParams,
    LatentPoint,
    NoiseLevel,
    build_covariance,
    kernel_eval,
    lml_gradient,
    log_marginal_likelihood,
)
from tactile_gplvm.reporting import export_outputs
from tactile_gplvm.sensor import Pose2D, SensorModel, simulate_tap, theta_for_lateral
from tactile_gplvm.stimulus import stimulus_from_spec

NOISE = NoiseLevel()


def online(stimulus, step, **kw):
    spec = ExperimentSpec(stimulus=stimulus).with_overrides(step_length=float(step), **kw)
    t0 = time.perf_counter()
    res = run_online_experiment(spec)
    return res.report, time.perf_counter() - t0


def test_c1_lml_oracle(report_criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        X, Y, p = random_instance(rng)
        ours, ref = log_marginal_likelihood(X, Y, p, NOISE), dense_lml(X, Y, p, NOISE)
        worst = max(worst, abs(ours - ref) / abs(ref))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 5
    assert report_criterion("C1 likelihood oracle", ok,
                            f"worst rel err {worst:.1e} (<=1e-8), {dt:.2f} s (<5 s)")


def test_c2_gradient(report_criterion):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    h = 1e-5
    for _ in range(100):
        X, Y, p = random_instance(rng)
        g = lml_gradient(X, Y, p, NOISE)
        for idx in np.ndindex(X.shape):
            Xp, Xm = X.copy(), X.copy()
            Xp[idx] += h
            Xm[idx] -= h
            fd = (log_marginal_likelihood(Xp, Y, p, NOISE) - log_marginal_likelihood(Xm, Y, p, NOISE)) / (2 * h)
            worst = max(worst, abs(g.dX[idx] - fd) / max(abs(fd), 1e-2))
        base = p.as_array()
        for k in range(3):
            up, dn = base.copy(), base.copy()
            up[k] += h
            dn[k] -= h
            fd = (log_marginal_likelihood(X, Y, KernelParams.from_array(up), NOISE)
                  - log_marginal_likelihood(X, Y, KernelParams.from_array(dn), NOISE)) / (2 * h)
            worst = max(worst, abs(g.d_params[k] - fd) / max(abs(fd), 1e-2))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and dt < 30
    assert report_criterion("C2 gradient check", ok,
                            f"worst rel err {worst:.1e} (<=1e-4), {dt:.2f} s (<30 s)")


def test_c3_kernel_properties(report_criterion):
    rng = np.random.default_rng(3)
    sym = bounded = psd = True
    min_ratio = np.inf
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        X = np.column_stack([rng.uniform(-20, 20, n), rng.uniform(-4, 4, n)])
        p = KernelParams(*rng.uniform([0.1, 0.2, 0.1], [10, 10, 5]))
        i, j = rng.integers(0, n, 2)
        a, b = LatentPoint(*X[i]), LatentPoint(*X[j])
        k_ab = kernel_eval(a, b, p)
        sym &= k_ab == kernel_eval(b, a, p)
        bounded &= 0 <= k_ab <= p.sigma_f**2 and (i != j or k_ab == p.sigma_f**2)
        lam = np.linalg.eigvalsh(build_covariance(X, p, NOISE).K).min()
        min_ratio = min(min_ratio, lam / NOISE.sigma_n**2)
    psd = min_ratio >= 1 - 1e-6
    ok = sym and bounded and psd
    assert report_criterion("C3 kernel properties", ok,
                            f"symmetric={sym}, bounded={bounded}, "
                            f"min eig / sigma_n^2 = {min_ratio:.9f} (>=1-1e-6) over 1000 sets")


def _labelling_trials(taps, span, n_trials, seed):
    """Located edge error (mm) for lines centred a random distance off the edge."""
    rng = np.random.default_rng(seed)
    sensor = SensorModel()
    stims = [stimulus_from_spec("edge"), stimulus_from_spec("circle")]
    errors = []
    for t in range(n_trials):
        stim = stims[t % 2]
        s = stim.start_s + (rng.uniform(-0.1, 0.1) if stim.kind == "rounded_rect" else rng.uniform(0, 1))
        E, n = stim.point(s), stim.outward_normal(s)
        th = theta_for_lateral(n)
        ref = simulate_tap(Pose2D(*E, th), stim, sensor, int(rng.integers(2**63)))
        true_edge = rng.uniform(-3, 3)  # edge position in line coordinates
        offsets = np.linspace(-span / 2, span / 2, taps)
        line = [(o, simulate_tap(Pose2D(*(E + (o - true_edge) * n), th), stim, sensor,
                                 int(rng.integers(2**63)))) for o in offsets]
        try:
            errors.append(abs(label_line(line, ref).edge_offset - true_edge))
        except LabellingError:
            errors.append(np.inf)
    return np.array(errors)


def test_c4_labelling_accuracy(report_criterion):
    e21 = _labelling_trials(21, 20.0, 200, seed=21)
    e6 = _labelling_trials(6, 20.0, 200, seed=6)
    f21, f6 = np.mean(e21 <= 0.5), np.mean(e6 <= 1.0)
    ok = f21 >= 0.95 and f6 >= 0.90
    assert report_criterion("C4 labelling accuracy", ok,
                            f"21 taps {100 * f21:.1f}% within 0.5 mm (>=95%), "
                            f"6 taps {100 * f6:.1f}% within 1.0 mm (>=90%)")


def test_c5_offline_trend(report_criterion):
    t0 = time.perf_counter()
    one = run_offline_eval(ExperimentSpec(mode="offline", training_lines=1)).report
    five = run_offline_eval(ExperimentSpec(mode="offline", training_lines=5)).report
    dt = time.perf_counter() - t0
    ok = (five.mean_r_error <= one.mean_r_error and one.mean_r_error <= 2.0 and dt < 120
          and one.grid_shape == [21, 19])
    assert report_criterion(
        "C5 offline trend", ok,
        f"1 line {one.mean_r_error:.3f} mm ({one.excluded} excluded), "
        f"5 lines {five.mean_r_error:.3f} mm ({five.excluded} excluded); "
        f"(5-line <= 1-line <= 2.0 mm) {dt:.1f} s (<120 s)")


def test_c6_circle_steps(report_criterion):
    rows, ok = [], True
    for step in (5, 10, 15, 20):
        rep, dt = online("circle", step)
        good = (rep.loop_closed and rep.mean_edge_distance <= 2.0
                and rep.lines_collected <= 3 and dt < 60)
        ok &= good
        rows.append(f"step {step}: closed={rep.loop_closed} mean {rep.mean_edge_distance:.2f} mm "
                    f"lines {rep.lines_collected} {dt:.1f} s")
    assert report_criterion("C6 circle closure", ok,
                            "; ".join(rows) + " (mean<=2.0, lines<=3, <60 s)")


def test_c7_flower(report_criterion):
    rows, ok = [], True
    for step in (5, 10):
        rep, _ = online("flower", step)
        ok &= rep.loop_closed and rep.lines_collected <= 5
        rows.append(f"step {step}: closed={rep.loop_closed} lines {rep.lines_collected} "
                    f"mean {rep.mean_edge_distance:.2f} mm")
    assert report_criterion("C7 flower closure", ok, "; ".join(rows) + " (lines<=5)")


def test_c8_data_efficiency(report_criterion):
    rows, ok = [], True
    for name in ("circle", "flower", "brick", "banana"):
        rep, _ = online(name, 5)
        ok &= rep.loop_closed and rep.model_taps <= 120
        rows.append(f"{name}: closed={rep.loop_closed} model_taps {rep.model_taps}")
    assert report_criterion("C8 data efficiency", ok, "; ".join(rows) + " (<=120, step 5)")


def test_c9_determinism(report_criterion, tmp_path):
    same = True
    for mode, spec in (("online", ExperimentSpec(stimulus="flower").with_overrides(step_length=10.0)),
                       ("offline", ExperimentSpec(mode="offline", angle_step=15.0))):
        outs = []
        for rep in ("a", "b"):
            res = run_online_experiment(spec) if mode == "online" else run_offline_eval(spec)
            outs.append(export_outputs(res, spec, tmp_path / f"{mode}_{rep}"))
        for role, path in outs[0].items():
            if path.suffix in (".csv", ".json"):
                same &= path.read_bytes() == outs[1][role].read_bytes()
    assert report_criterion("C9 determinism", same, f"CSV/JSON byte-identical across repeats: {same}")


def test_c10_failsafe(report_criterion):
    spec = ExperimentSpec().with_overrides(step_length=5.0, max_steps=80)
    t0 = time.perf_counter()
    res = run_online_experiment(spec, remove_object_after=80)
    dt = time.perf_counter() - t0
    rep = res.report
    ok = (not rep.loop_closed and res.log.status == "failed" and rep.steps < 80 + 1 and dt < 60)
    assert report_criterion("C10 failsafe", ok,
                            f"status {res.log.status} after {rep.steps} steps "
                            f"(<= max_steps 80): {rep.failure_reason}")
