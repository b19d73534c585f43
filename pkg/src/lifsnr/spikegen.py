"""Seeded Poisson spike trains, frozen patterns, jitter and input streams.

Every afferent draws from its own RNG substream keyed on ``(seed, tag,
afferent)``, so the train of afferent ``i`` does not depend on how many
afferents are generated. Spike times are exact (exponential inter-spike
intervals); snapping to a simulation grid happens in the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_NOISE_TAG = 0
_JITTER_TAG = 1


@dataclass(frozen=True)
class PoissonConfig:
    n_afferents: int
    rate: float  # Hz
    seed: int = 0

    def __post_init__(self):
        if self.n_afferents < 1:
            raise ValueError(f"n_afferents must be >= 1, got {self.n_afferents}")
        if not self.rate > 0:
            raise ValueError(f"rate must be > 0, got {self.rate}")


@dataclass(frozen=True)
class JitterConfig:
    half_width: float  # ms
    seed: int = 0

    def __post_init__(self):
        if not self.half_width >= 0:
            raise ValueError(f"half_width must be >= 0, got {self.half_width}")


@dataclass
class SpikeList:
    """Parallel arrays of afferent indices and spike times (ms), time-sorted."""

    afferents: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        self.afferents = np.asarray(self.afferents, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.afferents.shape != self.times.shape:
            raise ValueError("afferents and times must have the same length")

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpikeList):
            return NotImplemented
        return (np.array_equal(self.afferents, other.afferents)
                and np.array_equal(self.times, other.times))

    @classmethod
    def empty(cls) -> "SpikeList":
        return cls(np.empty(0, np.int64), np.empty(0, np.float64))

    @classmethod
    def from_unsorted(cls, afferents, times) -> "SpikeList":
        times = np.asarray(times, dtype=np.float64)
        order = np.argsort(times, kind="stable")
        return cls(np.asarray(afferents)[order], times[order])

    def shifted(self, offset: float) -> "SpikeList":
        return SpikeList(self.afferents.copy(), self.times + offset)


@dataclass
class FrozenPattern:
    duration: float  # ms
    n_afferents: int
    spikes: SpikeList

    def __len__(self) -> int:
        return len(self.spikes)


@dataclass
class InputStream:
    total_duration: float
    period: float
    pattern_onsets: np.ndarray
    pattern_duration: float
    jitter_half_width: float
    n_afferents: int
    spikes: SpikeList


def _rng(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(tag, index))))


def _afferent_train(rng: np.random.Generator, rate_per_ms: float, duration: float) -> np.ndarray:
    mean_count = rate_per_ms * duration
    chunk = int(mean_count + 5.0 * np.sqrt(mean_count) + 10)
    times = np.cumsum(rng.exponential(1.0 / rate_per_ms, size=chunk))
    while times[-1] < duration:
        more = np.cumsum(rng.exponential(1.0 / rate_per_ms, size=chunk)) + times[-1]
        times = np.concatenate([times, more])
    return times[: np.searchsorted(times, duration, side="left")]


def generate_poisson(config: PoissonConfig, duration: float) -> SpikeList:
    """Homogeneous Poisson trains on ``[0, duration)`` for every afferent."""
    afferents, times = _poisson_unsorted(config, duration)
    return SpikeList.from_unsorted(afferents, times)


def _poisson_unsorted(config: PoissonConfig, duration: float):
    if not duration > 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    rate_per_ms = config.rate * 1e-3
    trains = []
    for i in range(config.n_afferents):
        trains.append(_afferent_train(_rng(config.seed, _NOISE_TAG, i), rate_per_ms, duration))
    counts = np.fromiter((t.size for t in trains), dtype=np.int64, count=len(trains))
    afferents = np.repeat(np.arange(config.n_afferents, dtype=np.int64), counts)
    times = np.concatenate(trains) if trains else np.empty(0)
    return afferents, times


def freeze_pattern(config: PoissonConfig, duration: float) -> FrozenPattern:
    """One fixed Poisson realisation of length ``duration`` (frozen noise)."""
    return FrozenPattern(duration, config.n_afferents, generate_poisson(config, duration))


def _jitter_draws(seed: int, presentation: int, half_width: float, size: int) -> np.ndarray:
    return _rng(seed, _JITTER_TAG, presentation).uniform(-half_width, half_width, size=size)


def jitter_pattern(pattern: FrozenPattern, jitter: JitterConfig, presentation: int = 0) -> SpikeList:
    """Shift each pattern spike by an independent uniform draw in [-T, T].

    ``presentation`` selects the jitter substream, so repeated presentations
    get i.i.d. jitter. Shifted spikes may leave ``[0, L)``.
    """
    spikes = pattern.spikes
    if jitter.half_width == 0 or len(spikes) == 0:
        return SpikeList(spikes.afferents.copy(), spikes.times.copy())
    shifts = _jitter_draws(jitter.seed, presentation, jitter.half_width, len(spikes))
    return SpikeList.from_unsorted(spikes.afferents, spikes.times + shifts)


def pattern_onsets(n_presentations: int, period: float, jitter_half_width: float) -> np.ndarray:
    # offset by T so the earliest jittered spike of slot k lands at k * period
    return np.arange(n_presentations, dtype=np.float64) * period + jitter_half_width


def build_stream(pattern: FrozenPattern, noise: PoissonConfig, jitter: JitterConfig,
                 period: float, n_presentations: int,
                 total_duration: float | None = None) -> InputStream:
    """Poisson noise with a jittered copy of ``pattern`` once per period.

    Presentation ``k`` replaces the noise on ``[onset_k, onset_k + L)`` with
    the pattern, where ``onset_k = k * period + T``. ``total_duration``
    defaults to ``n_presentations * period`` and is required when there are
    no presentations.
    """
    L = pattern.duration
    T = jitter.half_width
    if period < L + 2 * T:
        raise ValueError(f"period {period} shorter than pattern duration + 2T = {L + 2 * T}")
    if n_presentations < 0:
        raise ValueError("n_presentations must be >= 0")
    if noise.n_afferents != pattern.n_afferents:
        raise ValueError("noise and pattern must involve the same afferents")
    if total_duration is None:
        if n_presentations == 0:
            raise ValueError("total_duration is required for a stream without presentations")
        total_duration = n_presentations * period
    if total_duration < n_presentations * period:
        raise ValueError("total_duration too short for the requested presentations")

    onsets = pattern_onsets(n_presentations, period, T)
    bg_aff, bg_t = _poisson_unsorted(noise, total_duration)
    if n_presentations:
        k = np.floor((bg_t - T) / period)
        keep = ~((k >= 0) & (k < n_presentations) & (bg_t - (k * period + T) < L))
        bg_aff, bg_t = bg_aff[keep], bg_t[keep]

    aff_parts = [bg_aff]
    t_parts = [bg_t]
    base_aff = pattern.spikes.afferents
    base_t = pattern.spikes.times
    for kk, onset in enumerate(onsets):
        aff_parts.append(base_aff)
        if T > 0 and base_t.size:
            t_parts.append(base_t + _jitter_draws(jitter.seed, kk, T, base_t.size) + onset)
        else:
            t_parts.append(base_t + onset)
    afferents = np.concatenate(aff_parts)
    times = np.concatenate(t_parts)
    # introsort is deterministic; exact time ties have probability zero
    order = np.argsort(times)
    return InputStream(float(total_duration), float(period), onsets, float(L), float(T),
                       pattern.n_afferents, SpikeList(afferents[order], times[order]))
