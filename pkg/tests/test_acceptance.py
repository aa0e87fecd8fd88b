"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL/SKIP line through the ``verdict`` fixture;
the lines are printed together at the end of the pytest run.
"""

import math
import os
import time

import numpy as np
import pytest
from oracles import sgd_oracle
from scipy import stats

from fedsim.dataio import (
    Dataset,
    find_dataset,
    gen_counterexample,
    gen_gaussian_quadratic,
    gen_logistic_classification,
    load_libsvm,
    partition_even,
)
from fedsim.experiments import cell_config, solve_fstar, speedup_sweep
from fedsim.federation import FederationConfig, aggregate, run, sample_devices
from fedsim.objectives import KINDS, Objective, measure_bounds, spectral_report
from fedsim.schedules import Schedule, three_sequence_to_mass

pytestmark = pytest.mark.acceptance

JOBS = max(1, min(4, os.cpu_count() or 1))


def nonincreasing(xs):
    return all(x is not None for x in xs) and all(a >= b for a, b in zip(xs, xs[1:]))


# ---------------------------------------------------------------- shared instances


@pytest.fixture(scope="module")
def logistic_instance():
    ds = gen_logistic_classification(4096, 30, 0)
    lam = 1 / ds.n
    fstar = solve_fstar(Objective.reg_logistic(ds, partition_even(ds, 1), lam))[0]
    return ds, lam, fstar


@pytest.fixture(scope="module")
def full_sweep(logistic_instance):
    ds, lam, fstar = logistic_instance
    start = time.perf_counter()
    res = speedup_sweep(
        ds, "reg_logistic", [1, 2, 4, 8], eps=0.01, fstar=fstar, lam=lam, E=4, T=20_000, jobs=JOBS
    )
    return res, time.perf_counter() - start


def least_squares_schedule(kind, obj, E, c=0.25):
    rep = spectral_report(obj, sample_count=10)
    common = {"E": E, "N": obj.N, "l": rep.l, "nu_max": rep.nu_max, "nu_min": rep.nu_min, "c": c}
    if kind == "overparam_const":
        return Schedule(kind, {**common, "L_or_mu": rep.mu}), rep
    return Schedule(kind, {**common, "mu": rep.mu, "kappa1": rep.kappa1, "kappa_tilde": rep.kappa_tilde}), rep


def iterations_to_relative(cfg, obj, rel):
    f0 = obj.value(np.zeros(obj.d))
    traj = run(cfg, obj, target_loss=rel * f0)
    return (traj.t[-1] if traj.stopped_early else None), traj


# ---------------------------------------------------------------- 1


@pytest.mark.criterion("1")
def test_c01_fstar_reproduction(verdict):
    path = find_dataset("w8a")
    if path is None:
        verdict(None, "w8a not found (set FEDSIM_DATA_DIR); synthetic criteria still run")
        pytest.skip("w8a dataset not available")
    ds = load_libsvm(path, n_features=300)
    part = partition_even(ds, 1)
    lines, ok = [], True
    for obj, ref in (
        (Objective.reg_logistic(ds, part, 1 / 49749), 0.126433176216545),
        (Objective.logistic(ds, part), 0.11379089057514849),
    ):
        start = time.perf_counter()
        fstar = solve_fstar(obj)[0]
        secs = time.perf_counter() - start
        ok &= abs(fstar - ref) <= 1e-6 and secs <= 300
        lines.append(f"{obj.kind} F*={fstar:.15f} (|diff|={abs(fstar - ref):.1e}, {secs:.0f}s)")
    assert verdict(ok, "; ".join(lines))


# ---------------------------------------------------------------- 2


@pytest.mark.criterion("2")
def test_c02_linear_speedup(verdict, full_sweep):
    res, secs = full_sweep
    its = res.iterations()
    ratio = its[0] / its[-1] if None not in its else 0.0
    ok = nonincreasing(its) and ratio >= 2.5 and secs <= 600
    assert verdict(ok, f"T(N=1,2,4,8)={its}, T(1)/T(8)={ratio:.2f} (need >= 2.5), {secs:.0f}s")


# ---------------------------------------------------------------- 3


@pytest.mark.criterion("3")
def test_c03_partial_participation(verdict, logistic_instance):
    ds, lam, fstar = logistic_instance
    start = time.perf_counter()
    res = speedup_sweep(
        ds, "reg_logistic", [16], active=[2, 4, 8], scheme="without_replacement",
        eps=0.01, fstar=fstar, lam=lam, E=1, T=20_000, jobs=JOBS,
    )
    secs = time.perf_counter() - start
    its = res.iterations()
    ratio = its[0] / its[-1] if None not in its else 0.0
    ok = nonincreasing(its) and ratio >= 2 and secs <= 600
    assert verdict(ok, f"N=16 T(K=2,4,8)={its}, T(2)/T(8)={ratio:.2f} (need >= 2), {secs:.0f}s")


# ---------------------------------------------------------------- 4


@pytest.mark.criterion("4")
def test_c04_geometric_convergence(verdict):
    start = time.perf_counter()
    ds = gen_gaussian_quadratic(512, 64, [1.0] * 64, 0)
    obj = Objective.least_squares(ds, partition_even(ds, 8))
    sch, _ = least_squares_schedule("overparam_const", obj, E=4)
    cfg = FederationConfig(N=8, E=4, T=50_000, schedule=sch, batch_size=1, eval_stride=4)
    t_hit, traj = iterations_to_relative(cfg, obj, 1e-10)
    secs = time.perf_counter() - start
    t = np.array(traj.t, dtype=float)
    logf = np.log10(np.maximum(traj.loss, np.finfo(float).tiny))
    r2 = stats.linregress(t, logf).rvalue ** 2
    ok = t_hit is not None and r2 >= 0.95 and secs <= 120
    assert verdict(ok, f"1e-10 relative loss at t={t_hit} (cap 50000), R^2={r2:.4f} (need >= 0.95), {secs:.0f}s")


# ---------------------------------------------------------------- 5


def mass_versus_fedavg(E, broadcast):
    ds = gen_gaussian_quadratic(512, 8, [100.0] + [1.0] * 7, 0)
    obj = Objective.least_squares(ds, partition_even(ds, 8))
    avg_sch, rep = least_squares_schedule("overparam_const", obj, E)
    mass_sch, _ = least_squares_schedule("mass_const", obj, E)
    base = FederationConfig(N=8, E=E, T=200_000, schedule=avg_sch, batch_size=1, eval_stride=E)
    t_avg, _ = iterations_to_relative(base, obj, 1e-8)
    t_mass, _ = iterations_to_relative(
        base.with_(schedule=mass_sch, rule="mass", mass_broadcast=broadcast), obj, 1e-8
    )
    return rep, t_avg, t_mass


@pytest.mark.criterion("5")
def test_c05_mass_acceleration(verdict):
    start = time.perf_counter()
    rep, t_avg, t_mass = mass_versus_fedavg(1, "local")
    secs = time.perf_counter() - start
    ratio = t_avg / t_mass if t_avg and t_mass else 0.0
    spread = rep.kappa1 / rep.kappa_tilde
    ok = spread >= 16 and ratio >= 1.3 and secs <= 300
    assert verdict(
        ok,
        f"E=1 kappa1/kappa_tilde={spread:.1f}; FedAvg {t_avg} vs FedMaSS {t_mass} iterations, "
        f"ratio {ratio:.2f} (need >= 1.3), {secs:.0f}s",
    )


@pytest.mark.criterion("5b")
def test_c05b_mass_acceleration_local_steps(verdict):
    # supplementary: E > 1 with the averaged-momentum broadcast
    start = time.perf_counter()
    rep, t_avg, t_mass = mass_versus_fedavg(4, "three_sequence")
    secs = time.perf_counter() - start
    ratio = t_avg / t_mass if t_avg and t_mass else 0.0
    ok = ratio >= 1.3 and secs <= 300
    assert verdict(ok, f"E=4 FedAvg {t_avg} vs FedMaSS {t_mass} iterations, ratio {ratio:.2f}, {secs:.0f}s")


# ---------------------------------------------------------------- 6


@pytest.mark.criterion("6a")
def test_c06a_single_device_sgd_oracle(verdict):
    ds = gen_logistic_classification(512, 10, 3)
    obj = Objective.reg_logistic(ds, partition_even(ds, 1))
    sch = Schedule("experiment_decay", {"eta0": 1.0, "n": ds.n, "c": 1 / 64})
    cfg = FederationConfig(N=1, K=1, E=1, T=1000, schedule=sch, batch_size=4, master_seed=123, store_iterates=True)
    traj = run(cfg, obj)
    ref = sgd_oracle(obj, sch, 1000, 4, 123)
    mismatched = sum(not np.array_equal(traj.iterates[t]["w"], ref[t]) for t in range(1001))
    assert verdict(mismatched == 0, f"{mismatched} of 1001 iterates differ from the SGD oracle")


@pytest.mark.criterion("6b")
def test_c06b_mass_nesterov_equivalence(verdict):
    alpha, beta = 0.2, 0.6
    a3 = (1 - beta) / (1 + beta)
    eta1, eta2, gamma = three_sequence_to_mass(a3, alpha / a3, alpha)
    worst, parts = 0.0, []
    for N in (1, 4):
        ds = gen_logistic_classification(256, 8, N)
        obj = Objective.reg_logistic(ds, partition_even(ds, N))
        common = dict(N=N, E=1, T=1000, batch_size=4, master_seed=5, store_iterates=True)
        nest = run(FederationConfig(schedule=Schedule("fixed", {"alpha": alpha, "beta": beta}), rule="nesterov", **common), obj)
        mass_sch = Schedule("fixed", {"alpha": eta1, "eta1": eta1, "eta2": eta2, "mass_gamma": gamma})
        mass = run(FederationConfig(schedule=mass_sch, rule="mass", **common), obj)
        diff = max(
            max(np.abs(mass.iterates[t]["u"] - nest.iterates[t]["w"]).max(),
                np.abs(mass.iterates[t]["w"] - nest.iterates[t]["v_prev"]).max())
            for t in nest.iterates
        )
        worst = max(worst, diff)
        parts.append(f"N={N}: {diff:.1e}")
    ok = eta2 == 0 and worst <= 1e-12
    assert verdict(ok, f"max |diff| over 1000 steps {', '.join(parts)} (need <= 1e-12)")


# ---------------------------------------------------------------- 7


@pytest.mark.criterion("7")
def test_c07_sampling_unbiased(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    N, K, M = 10, 3, 100_000
    V = rng.standard_normal((N, 5))
    p = rng.dirichlet(np.ones(N))
    vbar = aggregate("full", range(N), V, p)
    ok, parts = True, []
    for scheme in ("with_replacement", "without_replacement"):
        gen = np.random.default_rng(7)
        draws = np.array([aggregate(scheme, sample_devices(scheme, K, p, gen), V, p) for _ in range(M)])
        z = np.abs(draws.mean(axis=0) - vbar) / (draws.std(axis=0, ddof=1) / math.sqrt(M))
        ok &= bool(np.all(z <= 4))
        parts.append(f"{scheme} max z={z.max():.2f}")
    secs = time.perf_counter() - start
    ok &= secs <= 60
    assert verdict(ok, f"{'; '.join(parts)} (need <= 4), {secs:.0f}s")


# ---------------------------------------------------------------- 8


@pytest.mark.criterion("8")
def test_c08_drift_bound(verdict, full_sweep, logistic_instance):
    res, _ = full_sweep
    ds, lam, _ = logistic_instance
    worst, parts = 0.0, []
    for row, grid in zip(res.rows, res.grids):
        if grid.best is None:
            parts.append(f"N={row.n_devices}: no winning cell")
            worst = math.inf
            continue
        obj = Objective.reg_logistic(ds, partition_even(ds, row.n_devices), lam)
        cfg = cell_config(grid.base, obj, grid.best).with_(T=grid.best.iters, eval_stride=1, store_iterates=True)
        traj = run(cfg, obj)
        rounds = sorted(traj.iterates)
        probes = [np.zeros(obj.d), traj.iterates[rounds[len(rounds) // 2]]["w"], traj.final_w]
        G2, _ = measure_bounds(obj, 1000, probes, 0, batch_size=cfg.batch_size)
        E = cfg.E
        ratio = max(
            dr / (4 * E**2 * a**2 * G2) for dr, a in zip(traj.drift, traj.step_size)
        )
        worst = max(worst, ratio)
        parts.append(f"N={row.n_devices}: {ratio:.3f}")
    assert verdict(worst <= 1, f"max drift / (4 E^2 a_t^2 G^2) {', '.join(parts)} (need <= 1)")


# ---------------------------------------------------------------- 9


@pytest.mark.criterion("9")
def test_c09_condition_numbers(verdict):
    rng = np.random.default_rng(99)
    bad, worst_res = 0, math.inf
    for _ in range(100):
        n, d = int(rng.integers(2, 16)), int(rng.integers(1, 7))
        N = int(rng.integers(1, n + 1))
        X = rng.standard_normal((n, d)) * rng.uniform(0.1, 3.0, d)
        ds = Dataset(X, X @ rng.standard_normal(d))
        rep = spectral_report(Objective.least_squares(ds, partition_even(ds, N)), sample_count=2)
        bad += not (rep.kappa_tilde <= rep.kappa1 and rep.kappa <= rep.kappa1)
        worst_res = min(worst_res, rep.l_residual, rep.kappa_tilde_residual)
    one = Dataset(np.array([[0.3, -1.2, 2.0, 0.5]]), np.array([1.0]))
    single = spectral_report(Objective.least_squares(one, partition_even(one, 1)), sample_count=2)
    ok = bad == 0 and worst_res >= -1e-9 and single.kappa1 == 1.0 and single.kappa_tilde == 1.0
    assert verdict(
        ok,
        f"{bad}/100 ordering violations, min residual {worst_res:.1e}, "
        f"single sample kappa1={single.kappa1} kappa_tilde={single.kappa_tilde}",
    )


# ---------------------------------------------------------------- 10


@pytest.mark.criterion("10")
def test_c10_counterexample(verdict):
    radius = 1.0
    ds, part = gen_counterexample(4, 1, radius, d=2)
    obj = Objective.distance(ds, part)
    nonzero, products = 0, []
    for T in (100, 400, 1600):
        E = math.ceil(math.sqrt(T))
        cfg = FederationConfig(
            N=4, E=E, T=T, schedule=Schedule("fixed", {"alpha": 1.0 / T}), batch_size=None, store_iterates=True
        )
        traj = run(cfg, obj)
        nonzero += sum(bool(np.any(it["w"] != 0.0)) for it in traj.iterates.values())
        products.append(traj.comm_drift[0] * T)  # T^(2 - 2 beta) = T at beta = 1/2
    ok = nonzero == 0 and min(products) >= radius**2
    shown = ", ".join(f"{x:.3f}" for x in products)
    assert verdict(ok, f"{nonzero} nonzero averages at rounds; drift*T at T=100,400,1600: {shown} (need >= {radius**2})")


# ---------------------------------------------------------------- 11


def central_diff(f, w):
    g = np.zeros_like(w)
    for i in range(w.size):
        h = 1e-6 * (1 + abs(w[i]))
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


@pytest.mark.criterion("11")
def test_c11_gradient_correctness(verdict):
    rng = np.random.default_rng(11)
    worst = 0.0
    for probe in range(100):
        kind = KINDS[probe % len(KINDS)]
        n, d = int(rng.integers(4, 40)), int(rng.integers(1, 10))
        N = int(rng.integers(1, 4))
        if kind in ("reg_logistic", "logistic"):
            ds = gen_logistic_classification(n, d, probe)
        else:
            ds = Dataset(rng.standard_normal((n, d)), rng.standard_normal(n))
        obj = Objective(kind, ds, partition_even(ds, N), 0.03 if kind == "reg_logistic" else 0.0)
        w = rng.standard_normal(d)
        g = obj.grad(w)
        err = np.linalg.norm(g - central_diff(obj.value, w)) / max(np.linalg.norm(g), 1e-8)
        worst = max(worst, err)
    assert verdict(worst <= 1e-5, f"max relative error over 100 probes {worst:.1e} (need <= 1e-5)")
