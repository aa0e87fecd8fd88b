"""Experiment protocol: optimal values, iterations-to-accuracy, grid search and speedup sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .dataio import Dataset, partition_even
from .errors import ConvergenceFailure, DivergenceError, InvalidInput
from .federation import FULL, NESTEROV, WITHOUT_REPLACEMENT, FederationConfig, Trajectory, run
from .objectives import Objective, spectral_report
from .schedules import Schedule, experiment_grid

log = logging.getLogger(__name__)

SWEEP_HEADER = ("n_devices", "k_active", "e_local", "rule", "scheme", "eta0", "c", "seed", "iters_to_eps")
NOT_REACHED = "not reached"
PROTOCOL_SEEDS = (0, 1, 2)
NESTEROV_BETA = 0.1


# ---------------------------------------------------------------- F*


def solve_fstar(
    objective: Objective, tol: float = 1e-9, method: str = "newton", max_iter: int = 10**7
) -> tuple[float, np.ndarray, float]:
    """Minimize ``objective`` to gradient norm ``tol``; return ``(F*, w_opt, grad_norm)``.

    ``method="gd"`` is full-batch gradient descent with step ``1/L``.
    ``method="newton"`` (default) takes damped Newton steps with Armijo
    backtracking and reaches the same stopping rule in a few dozen iterations.
    """
    d = objective.d
    w = np.zeros(d)
    if method == "gd":
        L = spectral_report(objective, sample_count=1).L
        step = 1.0 / L
        for it in range(max_iter):
            g = objective.grad(w)
            gn = float(np.linalg.norm(g))
            if gn <= tol:
                return objective.value(w), w, gn
            w = w - step * g
        raise ConvergenceFailure(max_iter, gn)
    if method != "newton":
        raise InvalidInput(f"unknown method {method!r}")
    f = objective.value(w)
    for it in range(min(max_iter, 10_000)):
        g = objective.grad(w)
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return f, w, gn
        H = objective.hessian(w)
        direction = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = float(g @ direction)
        if slope >= 0:  # singular Hessian gave no descent; fall back to the gradient
            direction, slope = -g, -gn * gn
        step = 1.0
        while True:
            w_new = w + step * direction
            f_new = objective.value(w_new)
            if f_new <= f + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        if step < 1e-12 and f_new >= f:
            # at the floating-point floor: the gradient cannot shrink further
            raise ConvergenceFailure(it, gn)
        w, f = w_new, f_new
    raise ConvergenceFailure(max_iter, gn)


def load_or_solve_fstar(objective: Objective, cache_path: str | os.PathLike, tol: float = 1e-9) -> float:
    """Read ``{"f_star", "grad_norm", "tol"}`` from ``cache_path`` or solve and write it."""
    path = Path(cache_path)
    if path.is_file():
        cached = json.loads(path.read_text())
        if cached.get("tol", math.inf) <= tol:
            return float(cached["f_star"])
    fstar, _, gn = solve_fstar(objective, tol)
    path.write_text(json.dumps({"f_star": fstar, "grad_norm": gn, "tol": tol}))
    return fstar


# ---------------------------------------------------------------- accuracy


def iterations_to_accuracy(traj: Trajectory, fstar: float, eps: float) -> int | None:
    """First recorded ``t`` with ``F(w_bar_t) - F* <= eps``; ``None`` if never reached."""
    if len(traj) == 0:
        raise InvalidInput("empty trajectory")
    for t, loss in zip(traj.t, traj.loss):
        if loss - fstar <= eps:
            return t
    return None


# ---------------------------------------------------------------- grid search


@dataclass(frozen=True)
class CellResult:
    eta0: float
    c: float
    seed: int
    iters: int | None
    master_seed: int = 0


@dataclass
class GridResult:
    best: CellResult | None
    cells: list[CellResult]
    base: FederationConfig | None = None

    @property
    def iters(self) -> int | None:
        return None if self.best is None else self.best.iters


def _cell_key(cell: CellResult):
    # fewer iterations first; ties go to larger c, then larger eta0, then smaller seed
    return (cell.iters, -cell.c, -cell.eta0, cell.seed)


def cell_config(base: FederationConfig, objective: Objective, cell: CellResult) -> FederationConfig:
    """The exact run a grid cell performed, e.g. to replay the winner with more recording."""
    beta = NESTEROV_BETA if base.rule == NESTEROV else 0.0
    sched = Schedule("experiment_decay", {"eta0": cell.eta0, "n": objective.dataset.n, "c": cell.c, "beta": beta})
    return base.with_(schedule=sched, master_seed=cell.master_seed)


def _run_cell(args) -> CellResult:
    base, objective, fstar, eps, eta0, c, seed, cell_index = args
    cell = CellResult(eta0, c, seed, None, rngmod.derive_seed(seed, cell_index))
    try:
        traj = run(cell_config(base, objective, cell), objective, target_loss=fstar + eps)
    except DivergenceError:
        return cell
    return replace(cell, iters=iterations_to_accuracy(traj, fstar, eps))


def grid_search(
    base: FederationConfig,
    objective: Objective,
    fstar: float,
    eps: float,
    grid: Sequence[tuple[float, float]] | None = None,
    seeds: Sequence[int] = PROTOCOL_SEEDS,
    jobs: int = 1,
) -> GridResult:
    """Try every ``(eta0, c)`` cell under every seed and keep the fastest.

    The schedule is ``min(eta0, n c / (1 + t))``; Nesterov runs use a
    constant momentum of 0.1.  ``base.T`` caps each run.  Cells that diverge
    or never reach ``eps`` count as not reached.
    """
    grid = list(grid if grid is not None else experiment_grid())
    if not grid:
        raise InvalidInput("empty grid")
    tasks = [
        (base, objective, fstar, eps, eta0, c, seed, i)
        for i, (eta0, c) in enumerate(grid)
        for seed in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            cells = list(ex.map(_run_cell, tasks))
    else:
        cells = [_run_cell(t) for t in tasks]
    reached = [c for c in cells if c.iters is not None]
    best = min(reached, key=_cell_key) if reached else None
    return GridResult(best, cells, base)


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepRow:
    n_devices: int
    k_active: int
    e_local: int
    rule: str
    scheme: str
    eta0: float | None
    c: float | None
    seed: int | None
    iters_to_eps: int | None

    @property
    def key(self):
        return (self.n_devices, self.k_active, self.e_local, self.rule, self.scheme)

    @property
    def rounds(self) -> int | None:
        return None if self.iters_to_eps is None else math.ceil(self.iters_to_eps / self.e_local)


@dataclass
class SweepResult:
    rows: list[SweepRow]
    eps: float
    fstar: float
    grids: list[GridResult] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        keys = [r.key for r in self.rows]
        if len(set(keys)) != len(keys):
            raise InvalidInput("duplicate sweep rows")

    def iterations(self) -> list[int | None]:
        return [r.iters_to_eps for r in self.rows]

    def speedups(self) -> list[float | None]:
        """``T(first row) / T(row)`` for every row."""
        base = self.rows[0].iters_to_eps if self.rows else None
        return [
            None if base is None or r.iters_to_eps is None else base / r.iters_to_eps for r in self.rows
        ]


def speedup_sweep(
    dataset: Dataset,
    objective_kind: str,
    device_counts: Sequence[int],
    *,
    eps: float,
    fstar: float,
    lam: float = 0.0,
    active: Sequence[int] | None = None,
    participation: float = 1.0,
    rule: str = "sgd",
    scheme: str | None = None,
    E: int = 1,
    T: int = 100_000,
    batch_size: int | None = 4,
    grid: Sequence[tuple[float, float]] | None = None,
    seeds: Sequence[int] = PROTOCOL_SEEDS,
    eval_stride: int | None = None,
    jobs: int = 1,
) -> SweepResult:
    """One grid search per device setting.

    With ``active=None`` each ``N`` in ``device_counts`` runs with
    ``K = max(1, round(participation * N))``.  Passing ``active`` instead
    fixes ``N = device_counts[0]`` and sweeps ``K`` over ``active``.
    """
    if list(device_counts) != sorted(device_counts):
        raise InvalidInput("device counts must be sorted ascending")
    if active is not None:
        if len(device_counts) != 1:
            raise InvalidInput("pass a single device count when sweeping active devices")
        settings = [(device_counts[0], k) for k in active]
    else:
        settings = [(n, max(1, round(participation * n))) for n in device_counts]
    rows, grids = [], []
    for N, K in settings:
        sch = scheme or (FULL if K == N else WITHOUT_REPLACEMENT)
        part = partition_even(dataset, N)
        obj = Objective(objective_kind, dataset, part, lam)
        base = FederationConfig(
            N=N, K=K, E=E, T=T, schedule=Schedule("fixed", {"alpha": 1.0}), batch_size=batch_size,
            rule=rule, sampling=sch, eval_stride=eval_stride,
        )
        res = grid_search(base, obj, fstar, eps, grid, seeds, jobs)
        b = res.best
        rows.append(
            SweepRow(N, K, E, rule, sch, b and b.eta0, b and b.c, b and b.seed, b and b.iters)
        )
        grids.append(res)
        log.info("N=%d K=%d E=%d %s: iterations to eps = %s", N, K, E, rule, rows[-1].iters_to_eps)
    return SweepResult(rows, eps, fstar, grids)


def write_sweep_csv(result: SweepResult, path: str | os.PathLike) -> None:
    if not result.rows:
        raise InvalidInput("sweep result has no rows")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in result.rows:
            w.writerow([
                r.n_devices, r.k_active, r.e_local, r.rule, r.scheme,
                "" if r.eta0 is None else repr(r.eta0),
                "" if r.c is None else repr(r.c),
                "" if r.seed is None else r.seed,
                NOT_REACHED if r.iters_to_eps is None else r.iters_to_eps,
            ])


def read_sweep_csv(path: str | os.PathLike) -> list[SweepRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SWEEP_HEADER:
        raise InvalidInput(f"{path} is not a sweep CSV")

    def opt(s, conv):
        return None if s in ("", NOT_REACHED) else conv(s)

    return [
        SweepRow(int(r[0]), int(r[1]), int(r[2]), r[3], r[4], opt(r[5], float), opt(r[6], float),
                 opt(r[7], int), opt(r[8], int))
        for r in rows[1:]
    ]
