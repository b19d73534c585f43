"""Closed-form SNR of a LIF coincidence detector for a jittered frozen pattern.

Units: times in ms, rates in Hz. Potentials are expressed for unitary
synaptic weights, so the mean noise potential is ``tau * f * M`` (with tau
converted to seconds).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

_CLAMP_TOL = 1e-9


@dataclass(frozen=True)
class DetectorParams:
    n_afferents: int
    rate: float
    jitter_half_width: float
    strategy: int
    tau: float
    window: float

    def __post_init__(self):
        if self.n_afferents < 1:
            raise ValueError(f"n_afferents must be >= 1, got {self.n_afferents}")
        if not self.rate > 0:
            raise ValueError(f"rate must be > 0, got {self.rate}")
        if not self.jitter_half_width >= 0:
            raise ValueError(f"jitter_half_width must be >= 0, got {self.jitter_half_width}")
        if self.strategy < 1:
            raise ValueError(f"strategy must be >= 1, got {self.strategy}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.window > 0:
            raise ValueError(f"window must be > 0, got {self.window}")

    @property
    def lam(self) -> float:
        """Expected spike count of one afferent inside the window."""
        return self.rate * self.window * 1e-3


@dataclass(frozen=True)
class TrapezoidCurrent:
    t1: float
    t2: float
    t3: float
    h: float

    @property
    def area(self) -> float:
        return self.t1 * self.h / 2 + self.t2 * self.h + self.t3 * self.h / 2


@dataclass(frozen=True)
class AnalyticReport:
    params: DetectorParams
    M: float
    r: float
    v1: float
    v2: float
    t_max: float
    v_max: float
    V_noise_mean: float
    V_noise_std: float
    V_inf: float
    snr: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticReport":
        d = dict(d)
        d["params"] = DetectorParams(**d["params"])
        return cls(**d)


def poisson_cdf(lam: float, upto: int) -> float:
    """P(K <= upto) for K ~ Poisson(lam); 0 when ``upto < 0``.

    Terms are built by iterative multiplication so large ``upto`` never
    touches a factorial.
    """
    if upto < 0:
        return 0.0
    term = math.exp(-lam)
    total = term
    for k in range(1, upto + 1):
        term *= lam / k
        total += term
    return min(total, 1.0)


def poisson_sf(lam: float, n: int) -> float:
    """P(K >= n) for K ~ Poisson(lam), summed directly in the upper tail."""
    if n <= 0:
        return 1.0
    if n - 1 < lam:
        return max(1.0 - poisson_cdf(lam, n - 1), 0.0)
    term = poisson_pmf(lam, n)
    total = term
    k = n
    while term > total * 1e-17:
        k += 1
        term *= lam / k
        total += term
    return total


def poisson_pmf(lam: float, k: int) -> float:
    term = math.exp(-lam)
    for j in range(1, k + 1):
        term *= lam / j
    return term


def selected_count(params: DetectorParams) -> float:
    """Expected number of afferents with at least ``n`` spikes in the window."""
    return params.n_afferents * poisson_sf(params.lam, params.strategy)


def effective_rate(params: DetectorParams) -> float:
    """Summed input rate (Hz) of the selected afferents during the window."""
    return params.n_afferents * params.rate * poisson_sf(params.lam, params.strategy - 1)


def trapezoid(window: float, jitter_half_width: float) -> TrapezoidCurrent:
    """Geometry of the normalised input current for a jittered window."""
    if not window > 0:
        raise ValueError(f"window must be > 0, got {window}")
    if not jitter_half_width >= 0:
        raise ValueError(f"jitter_half_width must be >= 0, got {jitter_half_width}")
    two_t = 2.0 * jitter_half_width
    if two_t == 0.0:
        return TrapezoidCurrent(0.0, window, 0.0, 1.0)
    edge = min(window, two_t)
    return TrapezoidCurrent(edge, abs(window - two_t), edge, min(1.0, window / two_t))


def v_max(params: DetectorParams) -> tuple[float, float, float, float]:
    """Transient response to the trapezoid current.

    Returns ``(v1, v2, t_max, v_max)`` where ``t_max`` is measured from the
    start of the trapezoid's rising edge.
    """
    tau = params.tau
    dt = params.window
    two_t = 2.0 * params.jitter_half_width
    tr = trapezoid(dt, params.jitter_half_width)

    # below this the trapezoid correction is O(T/tau) < 1e-12: rectangle limit
    if two_t <= 1e-12 * min(tau, dt):
        vm = -math.expm1(-dt / tau)
        return 0.0, vm, dt, _clamp(vm)

    v1 = (tr.t1 + tau * math.expm1(-tr.t1 / tau)) / two_t
    v2 = tr.h + (v1 - tr.h) * math.exp(-tr.t2 / tau)
    t_fall = tau * math.log1p(two_t * (tr.h - v2) / tau)
    t_max = tr.t1 + tr.t2 + t_fall

    # log(1 - e^{-max/tau} + e^{-|dt-2T|/tau}) rewritten as
    # log1p(e^{-max/tau} * expm1(min/tau)) to stay accurate as T -> 0
    lo, hi = min(dt, two_t), max(dt, two_t)
    vm = tr.h - (tau / two_t) * math.log1p(math.exp(-hi / tau) * math.expm1(lo / tau))
    return v1, v2, t_max, _clamp(vm)


def _clamp(v: float) -> float:
    if not (-_CLAMP_TOL <= v <= 1.0 + _CLAMP_TOL):
        raise FloatingPointError(f"v_max={v!r} left [0, 1] beyond tolerance")
    return min(max(v, 0.0), 1.0)


def snr(params: DetectorParams) -> AnalyticReport:
    """Signal-to-noise ratio of the detector, with all intermediates."""
    lam = params.lam
    n = params.strategy
    tau_s = params.tau * 1e-3
    M = selected_count(params)
    r = effective_rate(params)
    v1, v2, t_max, vm = v_max(params)

    noise_mean = tau_s * params.rate * M
    noise_std = math.sqrt(noise_mean / 2.0)
    tail = poisson_sf(lam, n)
    if tail <= 0.0:
        value = 0.0
    else:
        value = vm * poisson_pmf(lam, n - 1) * math.sqrt(
            2.0 * tau_s * params.n_afferents * params.rate / tail
        )
    return AnalyticReport(
        params=params,
        M=M,
        r=r,
        v1=v1,
        v2=v2,
        t_max=t_max,
        v_max=vm,
        V_noise_mean=noise_mean,
        V_noise_std=noise_std,
        V_inf=tau_s * r,
        snr=value,
    )


def snr_value(n_afferents, rate, jitter_half_width, strategy, tau, window) -> float:
    """Scalar SNR without building a report; used in tight optimisation loops."""
    lam = rate * window * 1e-3
    tail = poisson_sf(lam, strategy)
    if tail <= 0.0:
        return 0.0
    p = DetectorParams(n_afferents, rate, jitter_half_width, strategy, tau, window)
    vm = v_max(p)[3]
    return vm * poisson_pmf(lam, strategy - 1) * math.sqrt(
        2.0 * tau * 1e-3 * n_afferents * rate / tail
    )
