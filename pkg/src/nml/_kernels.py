"""Hot loops over long per-step series.

Each kernel has a numba version and a numpy/scipy version with identical
semantics. The numba path is used for the recurrences when numba imports and
``NML_DISABLE_JIT`` is not set to a truthy value; both stay importable for
tests and benchmarks.
"""
from __future__ import annotations

import os

import numpy as np
from scipy.signal import lfilter


def _jit_disabled() -> bool:
    return os.environ.get("NML_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    numba = None
    HAVE_NUMBA = False


# ------------------------------------------------------------------ numpy


class numpy_impl:
    @staticmethod
    def decayed_cumsum(values: np.ndarray, r: float, scale: float) -> np.ndarray:
        """``out[0] = 0``, ``out[k+1] = r*out[k] + scale*values[k]``; length n+1."""
        v = np.asarray(values, dtype=np.float64)
        out = np.zeros(v.size + 1)
        if v.size:
            out[1:] = lfilter([scale], [1.0, -r], v)
        return out

    @staticmethod
    def trapz_decay_conv(values: np.ndarray, dt: float, rate: float) -> np.ndarray:
        """Trapezoid ∫₀^{t_k} e^{-rate (t_k-τ)} f(τ) dτ at every node t_k = k dt."""
        f = np.asarray(values, dtype=np.float64)
        out = np.zeros(f.size)
        if f.size > 1:
            q = np.exp(-rate * dt)
            u = 0.5 * dt * (q * f[:-1] + f[1:])
            out[1:] = lfilter([1.0], [1.0, -q], u)
        return out

    @staticmethod
    def green_conv(kernel: np.ndarray, values: np.ndarray, dt: float, trapezoid: bool = True) -> np.ndarray:
        """Discrete ∫₀^{t_k} G(t_k-τ) f(τ) dτ at every node, G and f sampled on one grid."""
        G = np.asarray(kernel, dtype=np.float64)
        f = np.asarray(values, dtype=np.float64)
        n = f.size
        if n == 0:
            return np.zeros(0)
        full = np.convolve(G[:n], f)[:n] * dt
        if trapezoid:
            full -= 0.5 * dt * (G[:n] * f[0] + G[0] * f)
        else:
            full -= dt * G[0] * f
        full[0] = 0.0
        return full


# ------------------------------------------------------------------ numba

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _decayed_cumsum(v, r, scale):
        out = np.zeros(v.size + 1)
        acc = 0.0
        for k in range(v.size):
            acc = r * acc + scale * v[k]
            out[k + 1] = acc
        return out

    @numba.njit(cache=True)
    def _trapz_decay_conv(f, dt, rate):
        out = np.zeros(f.size)
        q = np.exp(-rate * dt)
        acc = 0.0
        for k in range(1, f.size):
            acc = q * acc + 0.5 * dt * (q * f[k - 1] + f[k])
            out[k] = acc
        return out

    @numba.njit(cache=True)
    def _green_conv(G, f, dt, trapezoid):
        n = f.size
        out = np.zeros(n)
        for k in range(1, n):
            if trapezoid:
                s = 0.5 * (G[k] * f[0] + G[0] * f[k])
            else:
                s = G[k] * f[0]
            for i in range(1, k):
                s += G[k - i] * f[i]
            out[k] = s * dt
        return out

    class jit_impl:
        @staticmethod
        def decayed_cumsum(values, r, scale):
            return _decayed_cumsum(np.ascontiguousarray(values, dtype=np.float64), float(r), float(scale))

        @staticmethod
        def trapz_decay_conv(values, dt, rate):
            return _trapz_decay_conv(np.ascontiguousarray(values, dtype=np.float64), float(dt), float(rate))

        @staticmethod
        def green_conv(kernel, values, dt, trapezoid=True):
            return _green_conv(
                np.ascontiguousarray(kernel, dtype=np.float64),
                np.ascontiguousarray(values, dtype=np.float64),
                float(dt),
                bool(trapezoid),
            )

else:  # pragma: no cover
    jit_impl = None


def backend():
    """The implementation namespace currently in effect."""
    if HAVE_NUMBA and not _jit_disabled():
        return jit_impl
    return numpy_impl


def decayed_cumsum(values, r, scale):
    return backend().decayed_cumsum(values, r, scale)


def trapz_decay_conv(values, dt, rate):
    return backend().trapz_decay_conv(values, dt, rate)


def green_conv(kernel, values, dt, trapezoid=True):
    # np.convolve outruns the compiled double loop at every size we benchmarked,
    # so the jitted version is kept only for the benchmark and agreement tests
    return numpy_impl.green_conv(kernel, values, dt, trapezoid)
