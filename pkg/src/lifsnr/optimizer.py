"""Constrained maximisation of the analytic SNR over (n, tau, window).

Each strategy is solved with a coarse log grid followed by a compass
(pattern) search in log space. The continuity constraint
``tau * f * M >= 10`` is a lower bound on tau at fixed (n, window), so
candidate points are projected onto it before evaluation.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .analytic import poisson_sf, snr_value

MIN_TAU_F_M = 10.0
BOUNDS = (0.5, 1000.0)
GRID_POINTS = 40
MAX_EVALS = 500
REL_TOL = 1e-6


@dataclass
class StrategyResult:
    strategy: int
    feasible: bool
    tau: float = math.nan
    window: float = math.nan
    snr: float = math.nan
    constraint_active: bool = False
    n_evals: int = 0


@dataclass
class OptimizationResult:
    rate: float
    jitter_half_width: float
    n_afferents: int
    best_strategy: int
    best_tau: float
    best_window: float
    best_snr: float
    constraint_active: bool
    per_strategy_results: list[StrategyResult] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.best_strategy > 0

    def to_dict(self) -> dict:
        return asdict(self)


def tau_lower_bound(rate, n_afferents, strategy, window):
    """Smallest tau (ms) meeting the continuity constraint at this window."""
    M = n_afferents * poisson_sf(rate * window * 1e-3, strategy)
    if M <= 0.0:
        return math.inf
    return MIN_TAU_F_M / (rate * M) * 1e3


def constraint_value(rate, n_afferents, strategy, tau, window):
    M = n_afferents * poisson_sf(rate * window * 1e-3, strategy)
    return tau * 1e-3 * rate * M


def _feasible_snr(rate, T, N, n, tau, window):
    if constraint_value(rate, N, n, tau, window) < MIN_TAU_F_M:
        return -math.inf
    return snr_value(N, rate, T, n, tau, window)


def _solve_strategy(rate, T, N, n, bounds=BOUNDS, grid_points=GRID_POINTS,
                    max_evals=MAX_EVALS, rel_tol=REL_TOL) -> StrategyResult:
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    grid = np.exp(np.linspace(lo, hi, grid_points))

    best = (-math.inf, math.nan, math.nan)
    evals = 0
    for window in grid:
        tau_min = tau_lower_bound(rate, N, n, window)
        for tau in grid:
            # the grid point is projected rather than discarded so that
            # optima sitting on the constraint are reachable from the grid
            tau_p = max(tau, tau_min)
            if tau_p > bounds[1]:
                continue
            val = snr_value(N, rate, T, n, tau_p, window)
            evals += 1
            if val > best[0]:
                best = (val, tau_p, window)
    if not math.isfinite(best[0]):
        return StrategyResult(n, False, n_evals=evals)

    def objective(x):
        window = math.exp(min(max(x[1], lo), hi))
        tau = math.exp(min(max(x[0], lo), hi))
        tau = max(tau, tau_lower_bound(rate, N, n, window))
        if tau > bounds[1]:
            return -math.inf, tau, window
        return snr_value(N, rate, T, n, tau, window), tau, window

    x = [math.log(best[1]), math.log(best[2])]
    f_best, tau_b, win_b = best
    step = (hi - lo) / (grid_points - 1)
    directions = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))
    search_budget = max_evals
    while step > 1e-9 and search_budget > 0:
        improved = False
        for d0, d1 in directions:
            cand = [x[0] + d0 * step, x[1] + d1 * step]
            val, tau_c, win_c = objective(cand)
            search_budget -= 1
            evals += 1
            if val > f_best * (1.0 + rel_tol * 1e-3):
                gain = (val - f_best) / max(abs(f_best), 1e-300)
                x = [math.log(tau_c), math.log(win_c)]
                f_best, tau_b, win_b = val, tau_c, win_c
                improved = True
                if gain < rel_tol:
                    step *= 0.5
                break
            if search_budget <= 0:
                break
        if not improved:
            step *= 0.5

    active = tau_b <= tau_lower_bound(rate, N, n, win_b) * (1.0 + 1e-9)
    return StrategyResult(n, True, tau_b, win_b, f_best, active, evals)


def optimize(rate: float, jitter_half_width: float, n_afferents: int = 10_000,
             max_strategy: int = 5) -> OptimizationResult:
    """Best (n, tau, window) for the given firing rate and jitter."""
    if not rate > 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    if not jitter_half_width >= 0:
        raise ValueError(f"jitter_half_width must be >= 0, got {jitter_half_width}")
    if max_strategy < 1:
        raise ValueError(f"max_strategy must be >= 1, got {max_strategy}")

    per = [_solve_strategy(rate, jitter_half_width, n_afferents, n)
           for n in range(1, max_strategy + 1)]
    best = None
    for res in per:
        # strict comparison keeps the smaller n on ties
        if res.feasible and (best is None or res.snr > best.snr):
            best = res
    if best is None:
        return OptimizationResult(rate, jitter_half_width, n_afferents, 0, math.nan,
                                  math.nan, math.nan, False, per)
    return OptimizationResult(rate, jitter_half_width, n_afferents, best.strategy,
                              best.tau, best.window, best.snr, best.constraint_active, per)


def dense_grid_best(rate, jitter_half_width, n_afferents, strategy,
                    points=200, bounds=(1.0, 500.0)):
    """Brute-force feasible maximum on a log grid (no projection, no refinement)."""
    taus = np.geomspace(bounds[0], bounds[1], points)
    windows = np.geomspace(bounds[0], bounds[1], points)
    best = (-math.inf, math.nan, math.nan)
    for window in windows:
        for tau in taus:
            val = _feasible_snr(rate, jitter_half_width, n_afferents, strategy, tau, window)
            if val > best[0]:
                best = (val, tau, window)
    return best


def verify_optimum(result: OptimizationResult, rate=None, jitter_half_width=None,
                   n_afferents=None, points=21, span=0.2) -> bool:
    """True iff no feasible point on a local grid around the optimum beats it.

    Neighbours violating the constraint are projected onto it before
    comparison.
    """
    rate = result.rate if rate is None else rate
    T = result.jitter_half_width if jitter_half_width is None else jitter_half_width
    N = result.n_afferents if n_afferents is None else n_afferents
    if not result.feasible:
        return False
    n = result.best_strategy
    ref = snr_value(N, rate, T, n, result.best_tau, result.best_window)
    if constraint_value(rate, N, n, result.best_tau, result.best_window) < MIN_TAU_F_M - 1e-6:
        return False
    factors = np.linspace(1.0 - span, 1.0 + span, points)
    for fw in factors:
        window = result.best_window * fw
        tau_min = tau_lower_bound(rate, N, n, window)
        for ft in factors:
            tau = max(result.best_tau * ft, tau_min)
            if snr_value(N, rate, T, n, tau, window) > ref * (1.0 + 1e-9):
                return False
    return True


@dataclass
class PlaneSweep:
    f_grid: list[float]
    T_grid: list[float]
    n_afferents: int
    max_strategy: int
    cells: list[list[OptimizationResult]]

    def matrix(self, key: str) -> np.ndarray:
        """Panel matrix indexed [f_index, T_index].

        ``key`` is one of ``n``, ``tau``, ``window``, ``window_over_tau``,
        ``snr``, ``constraint_active``.
        """
        getters = {
            "n": lambda c: c.best_strategy,
            "tau": lambda c: c.best_tau,
            "window": lambda c: c.best_window,
            "window_over_tau": lambda c: c.best_window / c.best_tau,
            "snr": lambda c: c.best_snr,
            "constraint_active": lambda c: float(c.constraint_active),
        }
        get = getters[key]
        return np.array([[get(c) for c in row] for row in self.cells], dtype=float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["f", "T", "n", "tau", "dt", "snr", "constraint_active"])
            for row in self.cells:
                for c in row:
                    w.writerow([repr(c.rate), repr(c.jitter_half_width), c.best_strategy,
                                repr(c.best_tau), repr(c.best_window), repr(c.best_snr),
                                int(c.constraint_active)])

    def write_json(self, path) -> None:
        payload = {
            "f_grid": self.f_grid,
            "T_grid": self.T_grid,
            "n_afferents": self.n_afferents,
            "max_strategy": self.max_strategy,
            "cells": [[c.to_dict() for c in row] for row in self.cells],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    def write_gnuplot(self, path, key: str) -> None:
        """Blocks of ``f T value`` separated by blank lines (gnuplot pm3d layout)."""
        mat = self.matrix(key)
        with open(path, "w", newline="") as fh:
            for i, f in enumerate(self.f_grid):
                for j, T in enumerate(self.T_grid):
                    fh.write(f"{f!r} {T!r} {mat[i, j]!r}\n")
                fh.write("\n")


def _solve_cell(args):
    f, T, N, max_strategy = args
    return optimize(f, T, N, max_strategy)


def sweep_plane(f_grid, T_grid, n_afferents: int = 10_000, max_strategy: int = 5,
                jobs: int | None = 1) -> PlaneSweep:
    """Optimise every (f, T) cell; rows follow ``f_grid``, columns ``T_grid``."""
    f_grid = [float(x) for x in f_grid]
    T_grid = [float(x) for x in T_grid]
    if not f_grid or not T_grid:
        raise ValueError("grids must be non-empty")
    for g in (f_grid, T_grid):
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("grids must be strictly increasing")
    tasks = [(f, T, n_afferents, max_strategy) for f in f_grid for T in T_grid]
    jobs = jobs or os.cpu_count() or 1
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flat = list(pool.map(_solve_cell, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        flat = [_solve_cell(t) for t in tasks]
    nT = len(T_grid)
    cells = [flat[i * nT:(i + 1) * nT] for i in range(len(f_grid))]
    return PlaneSweep(f_grid, T_grid, n_afferents, max_strategy, cells)


def default_grid(lo=0.1, hi=100.0, points=25):
    return list(np.geomspace(lo, hi, points))
