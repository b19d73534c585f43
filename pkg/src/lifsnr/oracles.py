"""Independent numerical references used to check the closed forms."""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp


def trapezoid_current(t, window, T):
    """i(t) for a unit rectangle of length ``window`` blurred by U[-T, T] jitter.

    Built from the convolution definition (fraction of jittered spikes
    active at ``t``), not from the trapezoid parameters.
    """
    t = np.asarray(t, dtype=float)
    if T == 0:
        return ((t >= 0) & (t < window)).astype(float)
    # density of a rectangle [2T-shifted] convolved with U[-T, T], origin at the rise
    s = t - T
    lo = np.clip(s - T, 0.0, window)
    hi = np.clip(s + T, 0.0, window)
    return (hi - lo) / (2 * T)


def integrate_trapezoid_response(tau, window, T, rtol=1e-11, atol=1e-13):
    """Peak of ``tau dv/dt = -v + i(t)`` with v(0) = 0, by adaptive RK (DOP853).

    Integrated piecewise between the current's kinks; the maximum is taken
    from a dense evaluation refined around the best sample.
    """
    kinks = sorted({0.0, min(window, 2 * T), abs(window - 2 * T), max(window, 2 * T),
                    window + 2 * T})
    end = window + 2 * T
    kinks = [k for k in kinks if k <= end] + [end + 5 * tau]

    def rhs(t, v):
        return (-v + trapezoid_current(t, window, T)) / tau

    v0 = 0.0
    best = 0.0
    for a, b in zip(kinks[:-1], kinks[1:]):
        if b <= a:
            continue
        sol = solve_ivp(rhs, (a, b), [v0], method="DOP853", rtol=rtol, atol=atol,
                        dense_output=True)
        ts = np.linspace(a, b, 2001)
        vs = sol.sol(ts)[0]
        k = int(np.argmax(vs))
        lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, ts.size - 1)]
        fine = np.linspace(lo, hi, 2001)
        best = max(best, float(sol.sol(fine)[0].max()))
        v0 = float(sol.y[0, -1])
    return best


def exact_potential_after_spikes(times, tau, v0=0.0, t0=0.0):
    """Continuous-time LIF potential right after each input spike (unit weights)."""
    times = np.asarray(times, dtype=float)
    out = np.empty(times.size)
    v, last = v0, t0
    for k, t in enumerate(times):
        v = v * np.exp(-(t - last) / tau) + 1.0
        last = t
        out[k] = v
    return out
