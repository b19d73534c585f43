"""Clock-driven LIF with instantaneous synapses (forward Euler).

Per bin: the potential decays by ``1 - dt/tau``, every spike in the bin
adds its synaptic weight, then the threshold (if any) is tested and the
potential reset on crossing. Input spike times are snapped to the bin that
contains them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .spikegen import (FrozenPattern, InputStream, JitterConfig, PoissonConfig,
                       SpikeList, build_stream)

MIN_NOISE_BINS = 10_000
RESPONSE_TAIL_TAUS = 3.0
NOISE_GUARD_TAUS = 5.0


class MeasurementError(ValueError):
    """The stream does not support a well-defined SNR measurement."""


@dataclass(frozen=True)
class LifConfig:
    tau: float  # ms
    dt_bin: float = 0.1
    threshold: float | None = None
    reset_potential: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.dt_bin > 0:
            raise ValueError(f"dt_bin must be > 0, got {self.dt_bin}")
        if self.dt_bin > self.tau / 10 * (1 + 1e-12):
            raise ValueError(f"dt_bin={self.dt_bin} exceeds tau/10={self.tau / 10}")

    @property
    def decay(self) -> float:
        return 1.0 - self.dt_bin / self.tau


@dataclass
class LifState:
    potential: float
    weights: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("weights must lie in [0, 1]")


def step(state: LifState, config: LifConfig, incoming=()) -> tuple[LifState, bool]:
    """Advance one bin. ``incoming`` holds afferent indices spiking in the bin.

    Returns the new state and whether a postsynaptic spike was emitted.
    """
    v = state.potential * config.decay
    for i in incoming:
        v += state.weights[i]
    fired = config.threshold is not None and v >= config.threshold
    if fired:
        v = config.reset_potential
    return LifState(v, state.weights, state.time + config.dt_bin), fired


def spike_bins(times: np.ndarray, dt_bin: float) -> np.ndarray:
    return np.floor(times / dt_bin).astype(np.int64)


@numba.njit(cache=True)
def _run_kernel(bins, afferents, weights, n_bins, decay, v0, threshold, reset,
                use_threshold, record):
    trace = np.empty(n_bins if record else 0, dtype=np.float64)
    post = np.empty(16, dtype=np.int64)
    n_post = 0
    injected = 0.0
    v = v0
    j = 0
    n_spikes = bins.size
    for b in range(n_bins):
        v *= decay
        while j < n_spikes and bins[j] == b:
            w = weights[afferents[j]]
            v += w
            injected += w
            j += 1
        if use_threshold and v >= threshold:
            if n_post == post.size:
                grown = np.empty(post.size * 2, dtype=np.int64)
                grown[:n_post] = post[:n_post]
                post = grown
            post[n_post] = b
            n_post += 1
            v = reset
        if record:
            trace[b] = v
    return trace, post[:n_post], injected, v


@dataclass
class RunResult:
    trace: np.ndarray  # potential at the end of each bin
    post_spike_times: np.ndarray  # ms, end of the bin that fired
    injected: float
    final_potential: float


def run(spikes: SpikeList, weights, config: LifConfig, duration: float,
        v0: float = 0.0, record: bool = True) -> RunResult:
    """Integrate ``spikes`` (time-sorted) through static ``weights``."""
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    n_bins = int(math.ceil(duration / config.dt_bin - 1e-9))
    bins = spike_bins(spikes.times, config.dt_bin)
    if bins.size and (bins[0] < 0 or np.any(np.diff(bins) < 0)):
        raise ValueError("spikes must be time-sorted and non-negative")
    use_thr = config.threshold is not None
    trace, post, injected, v = _run_kernel(
        bins, np.ascontiguousarray(spikes.afferents), weights, n_bins, config.decay,
        float(v0), float(config.threshold) if use_thr else 0.0,
        float(config.reset_potential), use_thr, record)
    return RunResult(trace, (post + 1) * config.dt_bin, injected, v)


@dataclass(frozen=True)
class SnrProtocol:
    n_presentations: int = 1000
    period: float = 400.0
    rate: float = 5.0
    jitter_half_width: float = 0.0
    noise_seed: int = 1
    jitter_seed: int = 2


@dataclass
class SnrMeasurement:
    v_max_mean: float
    v_noise_mean: float
    v_noise_std: float
    snr: float
    n_presentations: int
    n_noise_bins: int
    v_max_per_presentation: np.ndarray = field(repr=False)

    def write_vmax_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["presentation_index", "v_max"])
            for k, v in enumerate(self.v_max_per_presentation.tolist()):
                w.writerow([k, repr(v)])


def measurement_masks(stream: InputStream, config: LifConfig, n_bins: int):
    """Per-presentation response windows and the noise-bin mask.

    Response window of presentation k: ``[onset - T, onset + L + T + 3 tau]``.
    Noise bins: at least ``5 tau`` after the last jittered pattern spike of a
    presentation and before the first jittered spike of the next one.
    """
    dt = config.dt_bin
    tau = config.tau
    L, T = stream.pattern_duration, stream.jitter_half_width
    t_end = (np.arange(n_bins) + 1) * dt
    windows = []
    noise = np.ones(n_bins, dtype=bool)
    for onset in stream.pattern_onsets:
        lo = int(math.floor((onset - T) / dt))
        hi = int(math.ceil((onset + L + T + RESPONSE_TAIL_TAUS * tau) / dt))
        windows.append((max(lo, 0), min(hi, n_bins)))
        noise &= ~((t_end > onset - T) & (t_end < onset + L + T + NOISE_GUARD_TAUS * tau))
    return windows, noise


def measure_snr(pattern: FrozenPattern, detector_weights, config: LifConfig,
                protocol: SnrProtocol = SnrProtocol(),
                stream: InputStream | None = None) -> SnrMeasurement:
    """Threshold-free SNR of a static detector for repeated presentations.

    A prebuilt ``stream`` may be passed to share one input realisation
    across several detectors.
    """
    if config.threshold is not None:
        raise ValueError("measure_snr requires a threshold-free LifConfig")
    weights = np.asarray(detector_weights, dtype=np.float64)
    if not np.all((weights == 0) | (weights == 1)):
        raise ValueError("detector weights must be binary")
    if stream is None:
        if protocol.n_presentations < 1:
            raise MeasurementError("no pattern presentation: v_max undefined")
        stream = build_stream(pattern,
                              PoissonConfig(pattern.n_afferents, protocol.rate, protocol.noise_seed),
                              JitterConfig(protocol.jitter_half_width, protocol.jitter_seed),
                              protocol.period, protocol.n_presentations)
    if len(stream.pattern_onsets) == 0:
        raise MeasurementError("no pattern presentation: v_max undefined")
    # start at the expected noise mean so early presentations are not biased
    v0 = config.tau * 1e-3 * protocol.rate * weights.sum()
    res = run(stream.spikes, weights, config, stream.total_duration, v0=v0)
    trace = res.trace
    windows, noise = measurement_masks(stream, config, trace.size)
    n_noise = int(noise.sum())
    if n_noise < MIN_NOISE_BINS:
        raise MeasurementError(f"only {n_noise} noise bins (< {MIN_NOISE_BINS})")
    noise_v = trace[noise]
    mu = float(noise_v.mean())
    sd = float(noise_v.std())
    if not sd > 0:
        raise MeasurementError("noise potential has zero variance")
    vmax = np.array([trace[lo:hi].max() for lo, hi in windows])
    vm = float(vmax.mean())
    return SnrMeasurement(vm, mu, sd, (vm - mu) / sd, len(windows), n_noise, vmax)


def select_afferents(pattern: FrozenPattern, strategy: int, window_start: float,
                     window: float) -> np.ndarray:
    """Binary weights: 1 for afferents with >= ``strategy`` spikes in the window."""
    if strategy < 1:
        raise ValueError("strategy must be >= 1")
    if window_start < 0 or window_start + window > pattern.duration * (1 + 1e-12):
        raise ValueError("window must lie inside the pattern")
    t = pattern.spikes.times
    inside = (t >= window_start) & (t < window_start + window)
    counts = np.bincount(pattern.spikes.afferents[inside], minlength=pattern.n_afferents)
    return (counts >= strategy).astype(np.float64)
