import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swinmamba import s6
from swinmamba.nn import Tensor, grad_check, ops
from swinmamba.nn.rng import Rng
from swinmamba.s6 import S6Config, S6Inputs


def random_inputs(rng, L, D, N):
    return S6Inputs(
        x=rng.standard_normal((L, D)),
        delta=rng.uniform(0.01, 0.5, (L, D)),
        B=rng.standard_normal((L, N)),
        C=rng.standard_normal((L, N)),
        A=-rng.uniform(0.1, 2.0, (D, N)),
        D_skip=rng.standard_normal(D),
    )


def unrolled_mp(inp, dps=50):
    """Direct high-precision evaluation of the recurrence."""
    mpmath.mp.dps = dps
    L, D = inp.x.shape
    N = inp.A.shape[1]
    mp = mpmath.mpf
    h = [[mp(0)] * N for _ in range(D)]
    y = np.zeros((L, D))
    for t in range(L):
        for d in range(D):
            dt, xv = mp(inp.delta[t, d]), mp(inp.x[t, d])
            acc = mp(0)
            for n in range(N):
                h[d][n] = mpmath.exp(dt * mp(inp.A[d, n])) * h[d][n] + dt * mp(inp.B[t, n]) * xv
                acc += mp(inp.C[t, n]) * h[d][n]
            y[t, d] = float(acc + mp(inp.D_skip[d]) * xv)
    return y


# -- config and discretization -------------------------------------------------------

def test_config_validation():
    S6Config(4, 8)
    with pytest.raises(ValueError):
        S6Config(0)
    with pytest.raises(ValueError):
        S6Config(4, dt_min=0.1, dt_max=0.01)


def test_discretize_limits_and_closed_form():
    A = -np.ones((1, 1))
    Abar, Bbar = s6.discretize(np.full((1, 1), 1e-12), A, np.ones((1, 1)))
    assert Abar[0, 0, 0] == pytest.approx(1.0, abs=1e-11) and abs(Bbar[0, 0, 0]) <= 1e-11
    Abar, _ = s6.discretize(np.full((1, 1), np.log(2.0)), A, np.ones((1, 1)))
    assert Abar[0, 0, 0] == pytest.approx(0.5, abs=1e-15)
    d = np.array([[0.3, 0.7]])
    B = np.array([[1.5, -2.0, 0.25]])
    _, b1 = s6.discretize(d, -np.ones((2, 3)), B)
    _, b2 = s6.discretize(2 * d, -np.ones((2, 3)), B)
    np.testing.assert_array_equal(b2, 2 * b1)
    with pytest.raises(ValueError):
        s6.discretize(np.zeros((1, 1)), A, np.ones((1, 1)))


# -- sequential forward -------------------------------------------------------------

def test_zero_c_is_skip_only():
    inp = random_inputs(np.random.default_rng(0), 6, 3, 4)
    inp.C[:] = 0.0
    np.testing.assert_array_equal(s6.s6_sequential(inp), inp.x * inp.D_skip)


def test_single_step_closed_form():
    inp = random_inputs(np.random.default_rng(1), 1, 3, 5)
    want = (inp.C[0] * inp.B[0]).sum() * inp.delta[0] * inp.x[0] + inp.D_skip * inp.x[0]
    np.testing.assert_allclose(s6.s6_sequential(inp)[0], want, rtol=1e-13)


def test_matches_high_precision_unroll():
    inp = random_inputs(np.random.default_rng(2), 3, 2, 4)
    ref = unrolled_mp(inp)
    got = s6.s6_sequential(inp)
    assert np.max(np.abs(got - ref) / np.abs(ref)) <= 1e-12


def test_rejects_bad_inputs():
    inp = random_inputs(np.random.default_rng(3), 4, 2, 3)
    bad = random_inputs(np.random.default_rng(3), 4, 2, 3)
    bad.delta[1, 1] = 0.0
    with pytest.raises(ValueError):
        s6.s6_sequential(bad)
    bad = random_inputs(np.random.default_rng(3), 4, 2, 3)
    bad.A[0, 0] = 0.5
    with pytest.raises(ValueError):
        s6.s6_sequential(bad)
    with pytest.raises(s6.ShapeError):
        s6.s6_sequential(S6Inputs(inp.x[:0], inp.delta[:0], inp.B[:0], inp.C[:0], inp.A, inp.D_skip))
    with pytest.raises(s6.ShapeError):
        s6.s6_sequential(S6Inputs(inp.x, inp.delta, inp.B[:, :2], inp.C, inp.A, inp.D_skip))


def test_long_sequence_stays_bounded():
    rng = np.random.default_rng(4)
    L, D, N = 10_000, 2, 4
    inp = S6Inputs(
        x=rng.uniform(-1, 1, (L, D)), delta=rng.uniform(0.01, 0.1, (L, D)),
        B=rng.uniform(-1, 1, (L, N)), C=np.ones((L, N)) / N,
        A=-np.ones((D, N)), D_skip=np.zeros(D),
    )
    y = s6.s6_sequential(inp)
    # |h| <= max|Bbar x| / (1 - max Abar): geometric bound
    bound = 0.1 / (1 - np.exp(-0.01))
    assert np.all(np.isfinite(y)) and np.abs(y).max() <= bound


# -- parallel scan ------------------------------------------------------------------

def test_parallel_length_one_and_unit_decay():
    inp = random_inputs(np.random.default_rng(5), 1, 3, 2)
    np.testing.assert_array_equal(s6.s6_parallel_scan(inp), s6.s6_sequential(inp))
    a = np.ones((1, 7, 2))
    b = np.random.default_rng(6).standard_normal((1, 7, 2))
    _, h = s6.blelloch_scan(a, b, axis=1)
    np.testing.assert_allclose(h, np.cumsum(b, axis=1), atol=1e-13)


@given(st.integers(2, 257), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_parallel_matches_sequential(L, D, N, seed):
    inp = random_inputs(np.random.default_rng(seed), L, D, N)
    assert np.max(np.abs(s6.s6_parallel_scan(inp) - s6.s6_sequential(inp))) <= 1e-10


def test_blelloch_matches_running_affine_composition():
    rng = np.random.default_rng(7)
    for L in (1, 2, 3, 5, 8, 13, 64, 100):
        a = rng.uniform(0.2, 1.0, (L, 3))
        b = rng.standard_normal((L, 3))
        ca, cb = s6.blelloch_scan(a, b, axis=0)
        ra, rb = np.ones(3), np.zeros(3)
        for t in range(L):
            ra, rb = ra * a[t], a[t] * rb + b[t]
            np.testing.assert_allclose(ca[t], ra, rtol=1e-13)
            np.testing.assert_allclose(cb[t], rb, rtol=1e-12, atol=1e-13)


# -- superposition -------------------------------------------------------------------

@given(st.integers(1, 64), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_linear_in_x(L, alpha, beta, seed):
    rng = np.random.default_rng(seed)
    base = random_inputs(rng, L, 3, 4)
    x1, x2 = rng.standard_normal((2, L, 3))

    def run(x):
        return s6.s6_sequential(S6Inputs(x, base.delta, base.B, base.C, base.A, base.D_skip))

    lhs = run(alpha * x1 + beta * x2)
    rhs = alpha * run(x1) + beta * run(x2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


# -- backward ------------------------------------------------------------------------

def test_backward_zero_cotangent():
    inp = random_inputs(np.random.default_rng(8), 5, 2, 3)
    grads = s6.s6_backward(inp, np.zeros_like(inp.x))
    for g in grads.values():
        np.testing.assert_array_equal(g, 0.0)


def test_backward_skip_only_path():
    inp = random_inputs(np.random.default_rng(9), 5, 3, 2)
    inp.C[:] = 0.0
    dy = np.random.default_rng(10).standard_normal(inp.x.shape)
    np.testing.assert_allclose(s6.s6_backward(inp, dy)["x"], dy * inp.D_skip, rtol=1e-14)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    inp = random_inputs(rng, 7, 3, 4)
    dy = rng.standard_normal(inp.x.shape)
    grads = s6.s6_backward(inp, dy)
    h = 1e-6
    for name in ("x", "delta", "B", "C", "A", "D_skip"):
        arr = getattr(inp, name)
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = np.sum(s6.s6_sequential(inp) * dy)
            arr[idx] = old - h
            fm = np.sum(s6.s6_sequential(inp) * dy)
            arr[idx] = old
            num[idx] = (fp - fm) / (2 * h)
        rel = np.abs(grads[name] - num) / np.maximum(np.maximum(np.abs(grads[name]), np.abs(num)), 1e-8)
        assert rel.max() <= 1e-4, name


def test_backward_rejects_wrong_cotangent():
    inp = random_inputs(np.random.default_rng(12), 4, 2, 3)
    with pytest.raises(s6.ShapeError):
        s6.s6_backward(inp, np.zeros((4, 3)))


def test_batched_groups_select_parameters():
    rng = np.random.default_rng(13)
    a, b = random_inputs(rng, 6, 2, 3), random_inputs(rng, 6, 2, 3)
    A = np.stack([a.A, b.A])
    Dk = np.stack([a.D_skip, b.D_skip])
    y = s6.scan_sequential(
        np.stack([a.x, b.x]), np.stack([a.delta, b.delta]), np.stack([a.B, b.B]),
        np.stack([a.C, b.C]), A, Dk, np.array([0, 1]),
    )
    np.testing.assert_array_equal(y[0], s6.s6_sequential(a))
    np.testing.assert_array_equal(y[1], s6.s6_sequential(b))


# -- projection and the tape op -----------------------------------------------------

def test_projection_zero_weights():
    G, S, L, D, N = 2, 1, 5, 3, 4
    b = np.array([[-1.0, 0.0, 2.0], [0.5, 0.5, 0.5]])
    delta, Bm, Cm = s6.selective_projection(
        Tensor(np.random.default_rng(14).standard_normal((G, S, L, D))),
        Tensor(np.zeros((G, D, D))), Tensor(b), Tensor(np.zeros((G, D, N))), Tensor(np.zeros((G, D, N))),
    )
    np.testing.assert_allclose(delta.data, np.broadcast_to(ops.softplus_np(b)[:, None, None, :], delta.shape))
    np.testing.assert_array_equal(Bm.data, 0.0)
    np.testing.assert_array_equal(Cm.data, 0.0)


def test_softplus_always_positive():
    v = np.random.default_rng(15).standard_normal(10_000) * 30
    assert np.all(ops.softplus_np(v) > 0)


@pytest.mark.parametrize("method", ["sequential", "parallel"])
def test_projection_scan_chain_grad_check(method):
    rng = np.random.default_rng(16)
    G, S, L, D, N = 2, 2, 5, 3, 2

    def chain(x, wd, bd, wb, wc, a_log, dk):
        delta, Bm, Cm = s6.selective_projection(x, wd, bd, wb, wc)
        A = ops.scale(ops.exp(a_log), -1.0)
        y = s6.selective_scan(
            ops.reshape(x, (G * S, L, D)), ops.reshape(delta, (G * S, L, D)),
            ops.reshape(Bm, (G * S, L, N)), ops.reshape(Cm, (G * S, L, N)),
            A, dk, np.repeat(np.arange(G), S), method=method,
        )
        return y

    inputs = [
        Tensor(rng.standard_normal((G, S, L, D))), Tensor(rng.standard_normal((G, D, D)) * 0.5),
        Tensor(rng.standard_normal((G, D))), Tensor(rng.standard_normal((G, D, N))),
        Tensor(rng.standard_normal((G, D, N))), Tensor(rng.standard_normal((G, D, N)) * 0.3),
        Tensor(rng.standard_normal((G, D))),
    ]
    assert grad_check(chain, inputs, name="s6-chain").max_rel_error <= 1e-4


def test_initialisers():
    a_log = s6.init_a_log(3, 4)
    np.testing.assert_allclose(-np.exp(a_log), -np.tile(np.arange(1.0, 5.0), (3, 1)), rtol=1e-15)
    bias = s6.init_delta_bias(Rng(0), 1000, 1e-3, 1e-1)
    dt = ops.softplus_np(bias)
    assert dt.min() >= 1e-3 * (1 - 1e-9) and dt.max() <= 1e-1 * (1 + 1e-9)
