"""Unsupervised pattern learning with additive STDP and homeostatic depression.

Per time bin the order is: decay the potential and the presynaptic traces,
deliver presynaptic spikes (``V += w_i``, ``A_i += dA``), test the
threshold, and on a postsynaptic spike apply ``w_i += A_i + w_out`` to every
synapse, clip to [0, 1] and reset the potential. Traces are kept lazily as
(value, last-update bin) pairs; their Euler decay ``(1 - dt/tau_pre)^k`` is
applied only when a trace is read.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .lifsim import LifConfig, spike_bins
from .io import write_f32
from .spikegen import FrozenPattern, JitterConfig, PoissonConfig, build_stream, freeze_pattern

BINARY_LOW = 0.05
BINARY_HIGH = 0.95
BINARIZED_MAX_FRACTION = 0.01
DIVERGENCE_RATE_HZ = 500.0
MODE_WINDOW = 50


@dataclass(frozen=True)
class StdpConfig:
    w_out: float
    threshold: float
    trace_increment: float = 0.01
    trace_tau: float = 20.0
    initial_weight: float | None = None  # None: derived from the threshold

    def __post_init__(self):
        if not self.trace_increment > 0:
            raise ValueError("trace_increment must be > 0")
        if not self.trace_tau > 0:
            raise ValueError("trace_tau must be > 0")
        if not self.w_out < 0:
            raise ValueError("w_out must be < 0")
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if self.initial_weight is not None and not 0 <= self.initial_weight <= 1:
            raise ValueError("initial_weight must lie in [0, 1]")


@dataclass(frozen=True)
class StreamProtocol:
    """Input statistics shared by every learning run (defaults: f = T = 3.2, the reference operating point)."""

    n_afferents: int = 10_000
    rate: float = 3.2
    jitter_half_width: float = 3.2
    pattern_duration: float = 100.0
    period: float = 400.0


@dataclass
class LearningOutcome:
    final_weights: np.ndarray = field(repr=False)
    binarized: bool
    reinforced_set: np.ndarray = field(repr=False)
    post_spikes_per_presentation: float
    noise_rate_hz: float
    divergent: bool
    n_presentations: int
    is_optimal: bool = False
    matched_window: tuple[float, float] | None = None
    window_mismatch: int | None = None  # smallest symmetric difference to any admissible window
    mode: int | None = None
    post_counts: np.ndarray = field(default=None, repr=False)
    post_spike_times: np.ndarray = field(default=None, repr=False)
    snapshots: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "binarized": self.binarized,
            "is_optimal": self.is_optimal,
            "mode": self.mode,
            "matched_window": list(self.matched_window) if self.matched_window else None,
            "window_mismatch": self.window_mismatch,
            "post_spikes_per_presentation": self.post_spikes_per_presentation,
            "noise_rate_hz": self.noise_rate_hz,
            "divergent": self.divergent,
            "n_presentations": self.n_presentations,
            "n_reinforced": int(self.reinforced_set.size),
            "reinforced_set": self.reinforced_set.tolist(),
            "intermediate_fraction": intermediate_fraction(self.final_weights),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def intermediate_fraction(weights) -> float:
    w = np.asarray(weights)
    return float(np.mean((w > BINARY_LOW) & (w < BINARY_HIGH)))


def initial_weight_for(theta: float, lif_config: LifConfig, n_afferents: int, rate: float) -> float:
    """Uniform weight placing the mean noise potential at theta + 2 sigma."""
    if not theta > 0:
        raise ValueError("theta must be > 0")
    load = lif_config.tau * 1e-3 * rate * n_afferents
    denom = load - 2.0 * math.sqrt(load / 2.0)
    if denom <= 0:
        raise ValueError("no uniform weight reaches theta + 2 sigma")
    w0 = theta / denom
    if w0 > 1.0:
        raise ValueError(f"required initial weight {w0:.3f} exceeds 1")
    return w0


def post_spike_update(weights, a_pre, w_out: float) -> np.ndarray:
    """Reference form of the update applied to every synapse at a post spike."""
    return np.clip(np.asarray(weights, dtype=float) + np.asarray(a_pre, dtype=float) + w_out,
                   0.0, 1.0)


@numba.njit(cache=True)
def _learn_kernel(bins, afferents, weights, n_bins, decay_v, decay_pre, threshold,
                  reset, d_a, w_out, guard_bins, guard_spikes, snapshot_bins):
    n = weights.size
    a_val = np.zeros(n)
    a_last = np.zeros(n, dtype=np.int64)
    log_q = math.log(decay_pre)
    n_snap = snapshot_bins.size
    snaps = np.empty((n_snap, n), dtype=np.float32)
    si = 0
    post = np.empty(1024, dtype=np.int64)
    n_post = 0
    guard_start = 0
    guard_count = 0
    divergent = False
    v = 0.0
    j = 0
    n_spikes = bins.size
    b = 0
    while b < n_bins:
        v *= decay_v
        while j < n_spikes and bins[j] == b:
            i = afferents[j]
            v += weights[i]
            a_val[i] = a_val[i] * math.exp((b - a_last[i]) * log_q) + d_a
            a_last[i] = b
            j += 1
        if v >= threshold:
            for i in range(n):
                x = (b - a_last[i]) * log_q
                a = a_val[i] * math.exp(x) if x > -60.0 else 0.0
                w = weights[i] + a + w_out
                if w < 0.0:
                    w = 0.0
                elif w > 1.0:
                    w = 1.0
                weights[i] = w
            v = reset
            if n_post == post.size:
                grown = np.empty(post.size * 2, dtype=np.int64)
                grown[:n_post] = post[:n_post]
                post = grown
            post[n_post] = b
            n_post += 1
            if b - guard_start >= guard_bins:
                guard_start = b
                guard_count = 0
            guard_count += 1
            if guard_count > guard_spikes:
                divergent = True
                break
        while si < n_snap and snapshot_bins[si] == b:
            snaps[si, :] = weights
            si += 1
        b += 1
    return post[:n_post], divergent, snaps[:si], b


def run_learning(pattern: FrozenPattern, protocol: StreamProtocol, lif_config: LifConfig,
                 stdp_config: StdpConfig, n_presentations: int = 500,
                 noise_seed: int = 1, jitter_seed: int = 2,
                 snapshot_every: int | None = None,
                 optimal_window: float | None = 23.0, margin: float = 0.1) -> LearningOutcome:
    """Present ``pattern`` repeatedly in Poisson noise and let the synapses learn.

    When ``optimal_window`` is given the outcome is also classified against it.
    """
    if n_presentations < 1:
        raise ValueError("n_presentations must be >= 1")
    N = pattern.n_afferents
    stream = build_stream(pattern, PoissonConfig(N, protocol.rate, noise_seed),
                          JitterConfig(protocol.jitter_half_width, jitter_seed),
                          protocol.period, n_presentations)
    w0 = stdp_config.initial_weight
    if w0 is None:
        w0 = initial_weight_for(stdp_config.threshold, lif_config, N, protocol.rate)
    weights = np.full(N, w0, dtype=np.float64)

    dt = lif_config.dt_bin
    n_bins = int(math.ceil(stream.total_duration / dt - 1e-9))
    period_bins = int(round(protocol.period / dt))
    if snapshot_every:
        snapshot_bins = np.arange(1, n_presentations // snapshot_every + 1, dtype=np.int64) \
            * snapshot_every * period_bins - 1
    else:
        snapshot_bins = np.empty(0, dtype=np.int64)
    guard_bins = period_bins
    guard_spikes = int(DIVERGENCE_RATE_HZ * protocol.period * 1e-3)

    bins = spike_bins(stream.spikes.times, dt)
    post_bins, divergent, snaps, _ = _learn_kernel(
        bins, stream.spikes.afferents, weights, n_bins, lif_config.decay,
        1.0 - dt / stdp_config.trace_tau, float(stdp_config.threshold),
        float(lif_config.reset_potential), float(stdp_config.trace_increment),
        float(stdp_config.w_out), guard_bins, guard_spikes, snapshot_bins)
    post_times = (post_bins + 1) * dt

    T, L = protocol.jitter_half_width, protocol.pattern_duration
    lo = stream.pattern_onsets - T
    hi = stream.pattern_onsets + L + T
    idx = np.searchsorted(lo, post_times, side="right") - 1
    in_window = (idx >= 0) & (post_times < hi[np.clip(idx, 0, None)])
    counts = np.bincount(idx[in_window], minlength=n_presentations)

    last = min(MODE_WINDOW, n_presentations)
    recent = counts[-last:]
    start_t = (n_presentations - last) * protocol.period
    outside = post_times[(~in_window) & (post_times >= start_t)]
    outside_time = last * (protocol.period - L - 2 * T) * 1e-3
    noise_rate = outside.size / outside_time if outside_time > 0 else math.nan

    binarized = (not divergent) and intermediate_fraction(weights) < BINARIZED_MAX_FRACTION
    outcome = LearningOutcome(
        final_weights=weights,
        binarized=binarized,
        reinforced_set=np.flatnonzero(weights > BINARY_HIGH),
        post_spikes_per_presentation=float(np.median(recent)),
        noise_rate_hz=float(noise_rate),
        divergent=bool(divergent),
        n_presentations=n_presentations,
        post_counts=counts,
        post_spike_times=post_times,
        snapshots=snaps if snapshot_every else None,
    )
    med = outcome.post_spikes_per_presentation
    outcome.mode = int(med) if binarized and med in (1.0, 2.0) else None
    if optimal_window is not None and binarized:
        outcome.is_optimal, outcome.matched_window = classify_optimality(
            outcome, pattern, optimal_window, margin)
        outcome.window_mismatch = window_mismatch(
            pattern, outcome.reinforced_set, (1 - margin) * optimal_window,
            (1 + margin) * optimal_window)[0]
    return outcome


class ClassificationError(ValueError):
    pass


def classify_optimality(outcome: LearningOutcome, pattern: FrozenPattern,
                        optimal_window: float, margin: float = 0.1):
    """Does the reinforced set equal the Strategy-#1 set of some pattern window?

    The window ``[t0, t0 + d]`` must lie in ``[0, L]`` with
    ``d`` within ``margin`` of ``optimal_window``. Windows are searched
    exactly over the pattern's spike times rather than on a time grid.
    Returns ``(is_optimal, (t0, d) or None)``.
    """
    if not outcome.binarized:
        raise ClassificationError("outcome is not binarized")
    reinforced = np.asarray(outcome.reinforced_set)
    d_lo = (1.0 - margin) * optimal_window
    d_hi = (1.0 + margin) * optimal_window
    return _match_window(pattern, reinforced, d_lo, d_hi)


def _match_window(pattern: FrozenPattern, reinforced: np.ndarray, d_lo: float, d_hi: float):
    if reinforced.size == 0:
        return False, None
    L = pattern.duration
    t = pattern.spikes.times
    aff = pattern.spikes.afferents
    member = np.zeros(pattern.n_afferents, dtype=bool)
    member[reinforced] = True
    # every reinforced afferent must fire somewhere in the pattern
    if np.unique(aff[member[aff]]).size != reinforced.size:
        return False, None

    good = member[aff]
    # maximal runs of consecutive reinforced-afferent spikes
    bad_idx = np.flatnonzero(~good)
    bounds = np.concatenate([[-1], bad_idx, [t.size]])
    n_target = reinforced.size
    for k in range(bounds.size - 1):
        s, e = bounds[k] + 1, bounds[k + 1]  # run = spikes s..e-1
        if e - s < n_target:
            continue
        span_lo = t[bounds[k]] if bounds[k] >= 0 else 0.0
        span_hi = t[bounds[k + 1]] if bounds[k + 1] < t.size else L
        left_open = bounds[k] >= 0
        right_open = bounds[k + 1] < t.size
        cover = _min_cover(aff[s:e], t[s:e], n_target)
        if cover is None:
            continue
        a, b = cover
        d = max(d_lo, b - a)
        if d > d_hi:
            continue
        # t0 must satisfy t0 <= a, t0 + d >= b, and stay strictly clear of the
        # neighbouring non-member spikes (or inside [0, L] at the pattern edges)
        # min() guards b - (b - a) rounding one ulp above a
        lower = max(min(b - d, a), span_lo)
        upper = min(a, span_hi - d)
        lower_strict = left_open and lower == span_lo
        upper_strict = right_open and upper == span_hi - d
        if lower > upper or (lower == upper and (lower_strict or upper_strict)):
            continue
        t0 = lower if not lower_strict else (upper if not upper_strict else 0.5 * (lower + upper))
        return True, (float(t0), float(d))
    return False, None


def _min_cover(aff: np.ndarray, t: np.ndarray, n_target: int):
    """Shortest time interval [t_i, t_j] whose spikes cover all distinct afferents."""
    counts: dict[int, int] = {}
    have = 0
    best = None
    lo = 0
    for hi in range(aff.size):
        a = int(aff[hi])
        c = counts.get(a, 0)
        if c == 0:
            have += 1
        counts[a] = c + 1
        while have == n_target:
            length = t[hi] - t[lo]
            if best is None or length < best[1] - best[0]:
                best = (float(t[lo]), float(t[hi]))
            al = int(aff[lo])
            counts[al] -= 1
            if counts[al] == 0:
                have -= 1
            lo += 1
    return best


@numba.njit(cache=True)
def _mismatch_kernel(t, aff, member, n_member, L, d_lo, d_hi):
    # A closed window [t0, e] holds spikes i..j. With i the first spike at or
    # after t0, t0 ranges over (t[i-1], t[i]], so e ranges over
    # (t[i-1] + d_lo, min(t[i] + d_hi, L)]; every j whose gap [t[j], t[j+1])
    # meets that range is achievable.
    n = member.size
    counts = np.zeros(n, dtype=np.int64)
    S = t.size
    best = n + 1
    best_t0 = 0.0
    best_d = 0.0
    for i in range(S + 1):
        if i > 0 and i < S and t[i] == t[i - 1]:
            continue
        prev = t[i - 1] if i > 0 else -1.0
        t_first = t[i] if i < S else L
        e_hi = min(t_first + d_hi, L)
        e_lo = prev + d_lo if i > 0 else d_lo
        if e_lo > e_hi or (i > 0 and e_lo == e_hi):
            continue
        inside = 0
        hits = 0
        j = i - 1  # last included spike
        while True:
            nxt = t[j + 1] if j + 1 < S else math.inf
            tie = j + 1 < S and j >= i and t[j + 1] == t[j]
            if not tie and nxt > e_lo and (j < i or t[j] <= e_hi):
                diff = n_member + inside - 2 * hits
                if diff < best:
                    e = max(e_lo, t[j]) if j >= i else e_lo
                    if i > 0 and e == e_lo:
                        e = min(e_lo + 0.5 * (min(nxt, e_hi) - e_lo), e_hi)
                    t0 = max(e - d_lo, prev if i > 0 else 0.0)
                    t0 = min(t0, t_first)
                    best, best_t0, best_d = diff, t0, e - t0
            if j + 1 >= S or t[j + 1] > e_hi:
                break
            j += 1
            q = aff[j]
            if counts[q] == 0:
                inside += 1
                if member[q]:
                    hits += 1
            counts[q] += 1
        for q in range(i, j + 1):
            counts[aff[q]] = 0
    return best, best_t0, best_d


def window_mismatch(pattern: FrozenPattern, reinforced, d_lo: float, d_hi: float):
    """Smallest symmetric difference between ``reinforced`` and any window's set.

    Windows are closed, lie in ``[0, L]`` and have duration in
    ``[d_lo, d_hi]``. Returns ``(mismatch, (t0, d))`` with one witness
    window. A zero mismatch means an exactly matching window exists.
    """
    member = np.zeros(pattern.n_afferents, dtype=np.bool_)
    member[np.asarray(reinforced, dtype=np.int64)] = True
    best, t0, d = _mismatch_kernel(pattern.spikes.times, pattern.spikes.afferents, member,
                                   int(member.sum()), float(pattern.duration),
                                   float(d_lo), float(d_hi))
    return int(best), (float(t0), float(d))


@dataclass(frozen=True)
class SweepExternals:
    """Everything held fixed across a theta x w_out sweep."""

    protocol: StreamProtocol = StreamProtocol()
    tau: float = 18.0
    dt_bin: float = 0.1
    trace_increment: float = 0.01
    trace_tau: float = 20.0
    n_presentations: int = 500
    optimal_window: float = 23.0
    margin: float = 0.1
    master_seed: int = 0
    snapshot_every: int | None = None


@dataclass
class ModeSweepResult:
    theta_grid: list[float]
    w_out_grid: list[float]
    p_matrix: np.ndarray  # [theta_index, w_out_index]
    n_runs: int
    n_divergent: np.ndarray
    modes: list[list[int | None]]
    outcomes: list[list[list[LearningOutcome]]] = field(default=None, repr=False)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "w_out", "p", "mode", "n_runs", "n_divergent"])
            for a, theta in enumerate(self.theta_grid):
                for b, w_out in enumerate(self.w_out_grid):
                    mode = self.modes[a][b]
                    w.writerow([repr(theta), repr(w_out), repr(float(self.p_matrix[a, b])),
                                "none" if mode is None else mode, self.n_runs,
                                int(self.n_divergent[a, b])])


def geometric_grid(lo: float, hi: float, ratio: float = 1.1) -> list[float]:
    """``lo * ratio**k`` for every k keeping the magnitude within ``[lo, hi]``.

    Works for negative ranges too (``w_out``): magnitudes grow away from zero.
    """
    if lo == 0 or hi == 0 or (lo > 0) != (hi > 0):
        raise ValueError("grid bounds must be non-zero and of the same sign")
    if ratio <= 1:
        raise ValueError("ratio must be > 1")
    sign = 1.0 if lo > 0 else -1.0
    a, b = sorted((abs(lo), abs(hi)))
    k = int(math.floor(math.log(b / a) / math.log(ratio) + 1e-9))
    return [sign * a * ratio ** i for i in range(k + 1)]


def run_seeds(master_seed: int, run_index: int) -> tuple[int, int, int]:
    """(pattern, noise, jitter) seeds of one run; independent of the grid cell."""
    s = np.random.SeedSequence(master_seed, spawn_key=(run_index,)).generate_state(3)
    return int(s[0]), int(s[1]), int(s[2])


def seeded_run(theta: float, w_out: float, run_index: int,
               externals: SweepExternals = SweepExternals()) -> LearningOutcome:
    """One learning run with a fresh random pattern drawn from the run's seeds."""
    pr = externals.protocol
    p_seed, n_seed, j_seed = run_seeds(externals.master_seed, run_index)
    pattern = freeze_pattern(PoissonConfig(pr.n_afferents, pr.rate, p_seed), pr.pattern_duration)
    lif = LifConfig(externals.tau, externals.dt_bin, threshold=theta)
    cfg = StdpConfig(w_out, theta, externals.trace_increment, externals.trace_tau)
    return run_learning(pattern, pr, lif, cfg, externals.n_presentations, n_seed, j_seed,
                        snapshot_every=externals.snapshot_every,
                        optimal_window=externals.optimal_window, margin=externals.margin)


def _sweep_task(args):
    theta, w_out, run_index, externals, out_dir = args
    outcome = seeded_run(theta, w_out, run_index, externals)
    if out_dir is not None:
        stem = os.path.join(out_dir, f"theta{theta:.6g}_wout{w_out:.6g}_run{run_index:03d}")
        outcome.write_json(stem + ".json")
        if outcome.snapshots is not None:
            write_f32(outcome.snapshots, stem + "_snapshots.f32")
    # the parent only needs the summary; dropping the traces keeps IPC small
    outcome.post_spike_times = None
    outcome.snapshots = None
    return outcome


def cell_mode(outcomes) -> int | None:
    """Mode label of a cell: median post spikes per presentation over usable runs."""
    vals = [o.post_spikes_per_presentation for o in outcomes if not o.divergent]
    if not vals:
        return None
    med = float(np.median(vals))
    return int(med) if med in (1.0, 2.0) else None


def sweep_modes(theta_range, w_out_range, n_runs: int = 50,
                externals: SweepExternals = SweepExternals(), jobs: int | None = 1,
                out_dir=None, progress=None) -> ModeSweepResult:
    """Proportion of optimal runs on a geometric theta x w_out grid.

    ``theta_range`` and ``w_out_range`` are ``(lo, hi)`` pairs or explicit
    grid lists. Run k of every cell uses the same pattern and stream seeds,
    so cells differ only by their parameters.
    """
    thetas = _as_grid(theta_range)
    w_outs = _as_grid(w_out_range)
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    tasks = [(th, wo, k, externals, out_dir) for th in thetas for wo in w_outs
             for k in range(n_runs)]
    jobs = jobs or os.cpu_count() or 1
    flat = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for out in pool.map(_sweep_task, tasks):
                flat.append(out)
                if progress:
                    progress(len(flat), len(tasks))
    else:
        for t in tasks:
            flat.append(_sweep_task(t))
            if progress:
                progress(len(flat), len(tasks))

    nt, nw = len(thetas), len(w_outs)
    p = np.zeros((nt, nw))
    n_div = np.zeros((nt, nw), dtype=np.int64)
    modes: list[list[int | None]] = [[None] * nw for _ in range(nt)]
    grouped = [[None] * nw for _ in range(nt)]
    for a in range(nt):
        for b in range(nw):
            start = (a * nw + b) * n_runs
            cell = flat[start:start + n_runs]
            grouped[a][b] = cell
            p[a, b] = sum(o.is_optimal for o in cell) / n_runs
            n_div[a, b] = sum(o.divergent for o in cell)
            modes[a][b] = cell_mode(cell)
    return ModeSweepResult(thetas, w_outs, p, n_runs, n_div, modes, grouped)


def _as_grid(spec) -> list[float]:
    values = [float(x) for x in spec]
    if len(values) == 2 and values[0] != values[1]:
        grid = geometric_grid(values[0], values[1])
    else:
        grid = values
    if not grid:
        raise ValueError("empty grid")
    mags = [abs(x) for x in grid]
    if any(b <= a for a, b in zip(mags, mags[1:])):
        raise ValueError("grid must be strictly monotone")
    return grid
