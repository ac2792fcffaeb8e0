import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from nml import net, symmetry
from nml import tensor as T
from nml.flows import FlowDivergence, FlowKind, FlowSpec, integrate, quadratic_exact, rotation_demo
from nml.harness import data, demos
from nml.optim import HyperParams
from nml.symmetry import Kind

DIAG = np.diag([1.0, 2.0])


def quad_flow(kind, A, hyper, h, horizon, w0=(1.0, 1.0), integrator="rk4"):
    spec = FlowSpec(kind, hyper, h, horizon, integrator)
    return integrate(T.quadratic_graph(A), None, spec, theta0=np.array(w0))


def test_gradient_flow_on_diagonal_quadratic():
    traj = quad_flow("gradient", DIAG, HyperParams(0.1), 0.01, 1.0)
    np.testing.assert_allclose(traj.states[-1], [np.exp(-1), np.exp(-2)], atol=1e-8)
    assert np.all(np.diff(traj.times) > 0)


def test_modified_loss_flow_example():
    hyper = HyperParams(0.1)
    expected = [np.exp(-1.05), np.exp(-2.2)]
    np.testing.assert_allclose(quadratic_exact(DIAG, [1, 1], hyper, 1.0, "modified-loss"), expected, rtol=1e-14)
    np.testing.assert_allclose(quad_flow("modified-loss", DIAG, hyper, 0.01, 1.0).states[-1], expected, atol=1e-8)


def test_demo_matrix_eigenvalues():
    # roots of x² − 4.5x + 2.75
    disc = np.sqrt(4.5**2 - 4 * 2.75)
    np.testing.assert_allclose(np.linalg.eigvalsh(demos.DEMO_MATRIX), [(4.5 - disc) / 2, (4.5 + disc) / 2], rtol=1e-14)
    assert (4.5 + disc) / 2 == pytest.approx(3.7707, abs=1e-4)
    assert (4.5 - disc) / 2 == pytest.approx(0.7293, abs=1e-4)


@pytest.mark.parametrize("model", ["gd", "gradient", "modified-loss", "momentum", "modified-momentum"])
def test_quadratic_exact_at_time_zero(model):
    w0 = np.array([0.3, -1.2])
    np.testing.assert_allclose(quadratic_exact(demos.DEMO_MATRIX, w0, HyperParams(0.1, beta=0.5), 0.0, model), w0, atol=1e-15)


def test_gd_model_is_the_discrete_iterate():
    hyper = HyperParams(0.1, lam=0.05)
    w = np.array([1.0, 1.0])
    for _ in range(7):
        w = w - hyper.eta * (demos.DEMO_MATRIX @ w + hyper.lam * w)
    np.testing.assert_allclose(quadratic_exact(demos.DEMO_MATRIX, [1, 1], hyper, 0.75, "gd"), w, rtol=1e-13)


@pytest.mark.parametrize("eta", [0.01, 0.05, 0.1, 0.2, 0.3])
def test_gd_closer_to_modified_flow(eta):
    hyper = HyperParams(eta)
    t = 20 * eta
    gd = quadratic_exact(demos.DEMO_MATRIX, demos.DEMO_W0, hyper, t, "gd")
    flow = quadratic_exact(demos.DEMO_MATRIX, demos.DEMO_W0, hyper, t, "gradient")
    mod = quadratic_exact(demos.DEMO_MATRIX, demos.DEMO_W0, hyper, t, "modified-loss")
    assert np.linalg.norm(gd - mod) < np.linalg.norm(gd - flow)


def test_momentum_flow_is_rescaled_gradient_flow():
    hyper = HyperParams(0.1, beta=0.5)
    for t in (0.3, 1.0, 2.5):
        a = quadratic_exact(demos.DEMO_MATRIX, [1, 1], hyper, t, "momentum")
        b = quadratic_exact(demos.DEMO_MATRIX, [1, 1], hyper, t / 0.5, "gradient")
        np.testing.assert_allclose(a, b, atol=1e-14)
    traj = quad_flow("momentum", DIAG, hyper, 0.0025, 1.0)
    np.testing.assert_allclose(traj.states[-1], quadratic_exact(DIAG, [1, 1], hyper, 1.0, "momentum"), atol=1e-8)


def test_modified_momentum_integration_matches_oscillators():
    hyper = HyperParams(0.1, lam=0.02, beta=0.5)
    traj = quad_flow("modified-momentum", demos.DEMO_MATRIX, hyper, 0.005, 2.0)
    for t, s in zip(traj.times[::50], traj.states[::50]):
        np.testing.assert_allclose(s, quadratic_exact(demos.DEMO_MATRIX, [1, 1], hyper, t, "modified-momentum"), atol=1e-7)


def test_modified_equation_reduces_to_modified_loss_without_decay():
    a = quad_flow("modified-equation", DIAG, HyperParams(0.1), 0.01, 1.0)
    b = quad_flow("modified-loss", DIAG, HyperParams(0.1), 0.01, 1.0)
    np.testing.assert_allclose(a.states, b.states, rtol=1e-14)


def test_euler_integrator_is_first_order():
    errs = []
    for h in (0.02, 0.01):
        s = quad_flow("gradient", DIAG, HyperParams(0.1), h, 1.0, integrator="euler").states[-1]
        errs.append(np.linalg.norm(s - [np.exp(-1), np.exp(-2)]))
    assert 1.8 <= errs[0] / errs[1] <= 2.2


@pytest.fixture(scope="module")
def smooth():
    # identity activations keep the loss smooth so RK4 shows its full order
    network = net.build(net.mlp_spec([10, 12, 12, 10], activation="linear", batchnorm=True), seed=5, bias_std=0.1)
    X, y = data.synthetic(10, 10, 256, seed=1)
    return network, (X, y)


def drift(network, batch, h, horizon=5.0):
    ds = symmetry.enumerate_groups(network)
    traj = integrate(network, batch, FlowSpec("gradient", HyperParams(0.1), h, horizon), ds, sample_every=10)
    mags = np.array([symmetry.magnitude(d, network.theta) for d in ds])
    rel = np.max(np.abs(traj.conserved - traj.conserved[0]), axis=0) / mags
    kinds = np.array([d.kind.value for d in ds])
    return {k: rel[kinds == k.value].max() for k in Kind}


def test_gradient_flow_conservation_and_order(smooth):
    network, batch = smooth
    coarse, fine = drift(network, batch, 0.05), drift(network, batch, 0.025)
    for k in Kind:
        assert fine[k] <= 1e-7, k
    for k in (Kind.SCALE, Kind.RESCALE):
        assert 12 <= coarse[k] / fine[k] <= 20, (k, coarse[k] / fine[k])


def test_relu_rescale_drift_is_first_order(relu_net, batch):
    # activation kinks crossed mid-step cap fixed-step RK4 at first order here
    ds = [d for d in symmetry.enumerate_groups(relu_net) if d.kind is Kind.RESCALE]
    out = []
    for h in (0.05, 0.025):
        traj = integrate(relu_net, batch, FlowSpec("gradient", HyperParams(0.1), h, 5.0), ds, sample_every=20)
        out.append(np.max(np.abs(traj.conserved - traj.conserved[0])))
    assert out[1] < 1e-4
    assert 1.5 <= out[0] / out[1] <= 6


def test_weight_decay_flow_translation_decay(relu_net, batch):
    lam = 0.2
    ds = [d for d in symmetry.enumerate_groups(relu_net) if d.kind is Kind.TRANSLATION]
    traj = integrate(relu_net, batch, FlowSpec("weight-decay", HyperParams(0.1, lam=lam), 0.05, 2.0), ds, sample_every=8)
    expected = traj.conserved[0] * np.exp(-lam * traj.times)[:, None]
    scale = np.array([symmetry.magnitude(d, relu_net.theta) for d in ds])
    assert np.max(np.abs(traj.conserved - expected) / scale) <= 1e-8


def test_divergence_reports_time():
    with pytest.raises(FlowDivergence) as exc:
        quad_flow("gradient", -100 * np.eye(2), HyperParams(0.1), 0.01, 20.0)
    assert 0 < exc.value.time <= 20.0


def test_spec_and_input_errors():
    hyper = HyperParams(0.1)
    with pytest.raises(ValueError):
        FlowSpec("gradient", hyper, 0.0, 1.0)
    with pytest.raises(ValueError):
        FlowSpec("gradient", hyper, 0.1, 0.05)
    with pytest.raises(ValueError):
        FlowSpec("gradient", hyper, 0.3, 1.0).n_steps
    with pytest.raises(ValueError):
        FlowSpec("leapfrog", hyper, 0.1, 1.0)
    with pytest.raises(ValueError):
        integrate(T.quadratic_graph(DIAG), None, FlowSpec("gradient", hyper, 0.1, 1.0))
    with pytest.raises(ValueError):
        quadratic_exact(np.diag([1.0, -1.0]), [1, 1], hyper, 1.0)
    with pytest.raises(ValueError):
        quadratic_exact(np.array([[1.0, 0.5], [0.0, 1.0]]), [1, 1], hyper, 1.0)
    assert FlowKind("modified-momentum") is FlowKind.MODIFIED_MOMENTUM


def test_rotation_example():
    d, f, m = rotation_demo(0.1, 100)
    assert d == pytest.approx(1.01**50, abs=1e-10)
    assert d == pytest.approx(1.6446, abs=1e-4)
    assert f == pytest.approx(1.0, abs=1e-12)
    assert m == pytest.approx(np.exp(0.5), abs=1e-10)
    assert rotation_demo(0.3, 0) == (1.0, 1.0, 1.0)
    for bad in (0.0, 0.6):
        with pytest.raises(ValueError):
            rotation_demo(bad, 3)


@given(st.floats(0.01, 0.5), st.integers(1, 200))
def test_rotation_closed_forms(eta, n):
    d, f, m = rotation_demo(eta, n)
    assert d == pytest.approx((1 + eta**2) ** (n / 2), rel=1e-10)
    assert m == pytest.approx(np.exp(eta**2 * n / 2), rel=1e-10)
    # the ordering flips once eta²n grows past roughly 13
    assume(eta**2 * n <= 10)
    assert abs(d - m) < abs(d - f)
