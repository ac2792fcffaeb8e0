import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nml import _kernels as K

jit = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")
series = arrays(np.float64, st.integers(0, 60), elements=st.floats(-10, 10))


def test_env_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv("NML_DISABLE_JIT", "1")
    assert K.backend() is K.numpy_impl
    monkeypatch.setenv("NML_DISABLE_JIT", "0")
    assert K.backend() is (K.jit_impl if K.HAVE_NUMBA else K.numpy_impl)


def test_decayed_cumsum_against_loop():
    v = np.arange(1.0, 6.0)
    acc, out = 0.0, [0.0]
    for x in v:
        acc = 0.5 * acc + 2.0 * x
        out.append(acc)
    np.testing.assert_allclose(K.numpy_impl.decayed_cumsum(v, 0.5, 2.0), out, rtol=1e-15)


def test_green_conv_against_direct_sum():
    rng = np.random.default_rng(0)
    G, f = rng.normal(size=30), rng.normal(size=30)
    k = 17
    w = np.full(k + 1, 1.0)
    w[0] = w[-1] = 0.5
    expected = 0.1 * sum(w[i] * G[k - i] * f[i] for i in range(k + 1))
    assert K.numpy_impl.green_conv(G, f, 0.1)[k] == pytest.approx(expected, rel=1e-13)


@jit
@given(series, st.floats(0, 1), st.floats(-3, 3))
def test_decayed_cumsum_paths_agree(v, r, scale):
    a = K.numpy_impl.decayed_cumsum(v, r, scale)
    b = K.jit_impl.decayed_cumsum(v, r, scale)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


@jit
@given(series, st.floats(1e-3, 1), st.floats(0, 5))
def test_trapz_decay_paths_agree(v, dt, rate):
    np.testing.assert_allclose(K.numpy_impl.trapz_decay_conv(v, dt, rate), K.jit_impl.trapz_decay_conv(v, dt, rate), rtol=1e-10, atol=1e-10)


@jit
@given(series, st.booleans())
def test_green_conv_paths_agree(v, trapezoid):
    G = np.sin(np.arange(v.size) * 0.3)
    a = K.numpy_impl.green_conv(G, v, 0.05, trapezoid)
    b = K.jit_impl.green_conv(G, v, 0.05, trapezoid)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)
