import math

import numpy as np
import pytest

from ctrlsched.dynamics import (
    LinkState, PendulumParams, PlantModel, PlantState, SynthesisError, control_weight,
    control_weight_table, discretize_zoh, error_covariance, estimate_state, expected_cost,
    linearize_pendulum, lqr_synthesize, solve_dare, step_plant, update_counter,
)

from conftest import random_stable_model


def cartpole_accel(state, u, M, m, ell, g):
    """Nonlinear frictionless cart with a point-mass pole, theta=0 upright."""
    _, _, th, thd = state
    # (M+m) xdd + m ell cos(th) thdd = u + m ell thd^2 sin(th)
    # cos(th) xdd + ell thdd = g sin(th)
    lhs = np.array([[M + m, m * ell * math.cos(th)], [math.cos(th), ell]])
    rhs = np.array([u + m * ell * thd ** 2 * math.sin(th), g * math.sin(th)])
    xdd, thdd = np.linalg.solve(lhs, rhs)
    return np.array([state[1], xdd, thd, thdd])


def numerical_jacobian(params, eps=1e-6):
    args = (params.cart_mass, params.pole_mass, params.pole_length, params.gravity)
    A = np.zeros((4, 4))
    for j in range(4):
        d = np.zeros(4)
        d[j] = eps
        A[:, j] = (cartpole_accel(d, 0.0, *args) - cartpole_accel(-d, 0.0, *args)) / (2 * eps)
    B = ((cartpole_accel(np.zeros(4), eps, *args)
          - cartpole_accel(np.zeros(4), -eps, *args)) / (2 * eps))[:, None]
    return A, B


def expm_taylor(M, terms=30):
    """Scaling-and-squaring matrix exponential with a truncated Taylor series."""
    norm = np.abs(M).sum(axis=1).max()
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    X = M / 2 ** s
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ X / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


# estimate_state ----------------------------------------------------------

def test_estimate_scalar():
    model = PlantModel(A=[[0.5]], B=[[0.0]], K=[[0.0]], W=[[1.0]], P=[[1.0]])
    np.testing.assert_allclose(estimate_state(model, LinkState(np.array([4.0]), 2)), [1.0])


def test_estimate_identity_closed_loop():
    p = 3
    model = PlantModel(A=np.eye(p), B=np.zeros((p, 1)), K=np.zeros((1, p)),
                       W=np.eye(p), P=np.eye(p))
    v = np.array([1.0, -2.0, 3.5])
    np.testing.assert_array_equal(estimate_state(model, LinkState(v, 7)), v)


def test_estimate_pendulum_matches_repeated_products(pendulum):
    e1 = np.eye(4)[0]
    expected = pendulum.Ac @ (pendulum.Ac @ (pendulum.Ac @ e1))
    np.testing.assert_allclose(estimate_state(pendulum, LinkState(e1, 3)), expected,
                               rtol=1e-13, atol=1e-15)


def test_estimate_rejects_dimension_mismatch(pendulum):
    with pytest.raises(ValueError):
        estimate_state(pendulum, LinkState(np.zeros(3), 1))


# step_plant --------------------------------------------------------------

def test_step_received(scalar_model):
    out = step_plant(scalar_model, PlantState(np.array([1.0]), 4), True, None, np.zeros(1))
    np.testing.assert_allclose(out.x, [0.5])
    assert out.k == 5


def test_step_dropped_with_zero_estimate(scalar_model):
    out = step_plant(scalar_model, PlantState(np.array([1.0])), False, np.zeros(1), np.zeros(1))
    np.testing.assert_allclose(out.x, [2.0])


def test_step_branches_coincide_on_perfect_estimate(pendulum):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=4)
        w = rng.normal(size=4) * 1e-3
        a = step_plant(pendulum, PlantState(x), True, None, w).x
        b = step_plant(pendulum, PlantState(x), False, x, w).x
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_step_branches_bitwise_on_scalar(scalar_model):
    x = np.array([0.75])
    a = step_plant(scalar_model, PlantState(x), True, None, np.zeros(1)).x
    b = step_plant(scalar_model, PlantState(x), False, x, np.zeros(1)).x
    assert a.tobytes() == b.tobytes()


# update_counter ----------------------------------------------------------

@pytest.mark.parametrize("before, received, after", [(3, True, 1), (3, False, 4), (1, False, 2)])
def test_update_counter(before, received, after):
    link = LinkState(np.zeros(2), before)
    x_now = np.array([1.0, 2.0])
    new = update_counter(link, received, x_now)
    assert new.counter == after
    if received:
        np.testing.assert_array_equal(new.last_rx, x_now)
    else:
        np.testing.assert_array_equal(new.last_rx, link.last_rx)


def test_counter_never_below_one():
    with pytest.raises(ValueError):
        LinkState(np.zeros(1), 0)


# error covariance --------------------------------------------------------

def test_error_covariance_l1_is_W(pendulum):
    np.testing.assert_array_equal(error_covariance(pendulum, 1), pendulum.W)


def test_error_covariance_scalar(scalar_model):
    assert error_covariance(scalar_model, 2)[0, 0] == pytest.approx(1.25)


def test_error_covariance_geometric_limit(scalar_model):
    # partial sums of 0.25^j converge to 4/3
    partial = 0.0
    for j in range(200):
        partial += 0.25 ** j
    assert error_covariance(scalar_model, 200)[0, 0] == pytest.approx(partial, rel=1e-14)
    assert partial == pytest.approx(4 / 3, rel=1e-14)


def test_error_covariance_increment_is_psd():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        model = random_stable_model(rng)
        l = int(rng.integers(1, 30))
        inc = error_covariance(model, l + 1) - error_covariance(model, l)
        Al = np.linalg.matrix_power(model.Ac, l)
        np.testing.assert_allclose(inc, Al @ model.W @ Al.T, atol=1e-12)
        assert np.linalg.eigvalsh(0.5 * (inc + inc.T)).min() > -1e-12


# control weight ----------------------------------------------------------

def mc_drop_minus_success(model, l, n, rng, xhat):
    """Sample ``L(drop branch) - L(success branch)`` with paired noise."""
    p = model.dim
    vals, vecs = np.linalg.eigh(model.W)
    F = vecs * np.sqrt(np.clip(vals, 0, None))
    e = np.zeros((n, p))
    Aj = np.eye(p)
    for _ in range(l):
        e += rng.standard_normal((n, p)) @ F.T @ Aj.T
        Aj = model.Ac @ Aj
    x = xhat + e
    w = rng.standard_normal((n, p)) @ F.T
    drop = x @ model.A.T + xhat @ (model.B @ model.K).T + w
    succ = x @ model.Ac.T + w
    d = np.einsum("ij,jk,ik->i", drop, model.P, drop) - np.einsum("ij,jk,ik->i", succ, model.P, succ)
    return d.mean(), d.std(ddof=1) / math.sqrt(n)


def test_control_weight_scalar_values(scalar_model):
    assert control_weight(scalar_model, 1) == pytest.approx(3.75, rel=1e-14)
    assert control_weight(scalar_model, 2) == pytest.approx(4.6875, rel=1e-14)


def test_control_weight_zero_without_feedback():
    model = PlantModel(A=[[1.1, 0.2], [0.0, 0.9]], B=[[1.0], [0.0]], K=[[0.0, 0.0]],
                       W=np.eye(2), P=np.eye(2))
    assert all(control_weight(model, l) == 0.0 for l in (1, 5, 40))


def test_control_weight_nondecreasing_on_pendulum(pendulum):
    table = control_weight_table(pendulum, 50)
    assert np.all(np.diff(table) >= 0)
    D = pendulum.A.T @ pendulum.P @ pendulum.A - pendulum.Ac.T @ pendulum.P @ pendulum.Ac
    assert np.linalg.eigvalsh(0.5 * (D + D.T)).min() > -1e-9 * np.abs(D).max()


def test_control_weight_table_matches_pointwise(pendulum):
    table = control_weight_table(pendulum, 12)
    for l in range(1, 13):
        assert table[l - 1] == pytest.approx(control_weight(pendulum, l), rel=1e-12)


def test_control_weight_matches_monte_carlo_on_random_models():
    rng = np.random.default_rng(11)
    for _ in range(10):
        model = random_stable_model(rng)
        l = int(rng.integers(1, 8))
        xhat = rng.normal(size=model.dim)
        mean, se = mc_drop_minus_success(model, l, 200_000, rng, xhat)
        assert abs(mean - control_weight(model, l)) <= 3 * se


def test_expected_cost_endpoints_and_monte_carlo(scalar_model):
    xhat = np.array([1.0])
    base = expected_cost(scalar_model, xhat, 1, 0.0)
    # success only: L(0.5) + Tr(PW) + Tr(Ac'PAc W) = 0.25 + 1 + 0.25
    assert base == pytest.approx(1.5)
    # drop only: E[(2 x - 1.5 xhat + w)^2] with x = xhat + e -> 0.25 + 4 + 1
    assert expected_cost(scalar_model, xhat, 1, 1.0) == pytest.approx(5.25)

    rng = np.random.default_rng(5)
    n = 1_000_000
    e = rng.standard_normal(n)
    w = rng.standard_normal(n)
    x = xhat[0] + e
    drop = rng.random(n) < 0.5
    nxt = np.where(drop, 2 * x - 1.5 * xhat[0] + w, 0.5 * x + w)
    cost = nxt ** 2
    se = cost.std(ddof=1) / math.sqrt(n)
    assert abs(cost.mean() - expected_cost(scalar_model, xhat, 1, 0.5)) <= 3 * se


# pendulum model ----------------------------------------------------------

def test_linearization_matches_numerical_jacobian():
    params = PendulumParams(1.0, 0.1, 0.5, 9.81)
    A_c, B_c = linearize_pendulum(params)
    assert A_c[3, 2] == pytest.approx(21.582, abs=1e-9)
    np.testing.assert_array_equal(A_c[0], [0, 1, 0, 0])
    A_num, B_num = numerical_jacobian(params)
    np.testing.assert_allclose(A_c, A_num, atol=1e-9)
    np.testing.assert_allclose(B_c, B_num, atol=1e-9)


def test_linearization_without_gravity():
    A_c, _ = linearize_pendulum(PendulumParams(gravity=1e-300))
    assert A_c[3, 2] == pytest.approx(0.0, abs=1e-290)


def test_zoh_integrator():
    A, B = discretize_zoh([[0.0]], [[1.0]], 0.01)
    assert A[0, 0] == pytest.approx(1.0)
    assert B[0, 0] == pytest.approx(0.01, rel=1e-14)


def test_zoh_small_step_series():
    A_c, B_c = linearize_pendulum(PendulumParams())
    T = 1e-6
    A, _ = discretize_zoh(A_c, B_c, T)
    assert np.abs(A - (np.eye(4) + A_c * T)).max() <= np.abs(A_c @ A_c).max() * T ** 2


def test_zoh_second_order_consistency():
    A_c, B_c = linearize_pendulum(PendulumParams())
    Ts = [1e-3, 1e-4, 1e-5]
    errs = [np.linalg.norm(discretize_zoh(A_c, B_c, T)[0] - (np.eye(4) + A_c * T)) for T in Ts]
    orders = [math.log10(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9
    assert max(e / T ** 2 for e, T in zip(errs, Ts)) < 1e3


def test_zoh_matches_taylor_oracle():
    A_c, B_c = linearize_pendulum(PendulumParams())
    A, B = discretize_zoh(A_c, B_c, 0.01)
    aug = np.zeros((5, 5))
    aug[:4, :4] = A_c
    aug[:4, 4:] = B_c
    E = expm_taylor(aug * 0.01)
    np.testing.assert_allclose(A, E[:4, :4], rtol=0, atol=1e-9)
    np.testing.assert_allclose(B, E[:4, 4:], rtol=0, atol=1e-9)


# LQR ---------------------------------------------------------------------

def test_scalar_dare_closed_form():
    K, P = lqr_synthesize(2.0, 1.0, 1.0, 1.0)
    assert P[0, 0] == pytest.approx(2 + math.sqrt(5), abs=1e-9)
    assert P[0, 0] ** 2 - 4 * P[0, 0] - 1 == pytest.approx(0, abs=1e-8)
    assert K[0, 0] == pytest.approx(-1.618034, abs=1e-6)
    assert 2 + K[0, 0] == pytest.approx(0.381966, abs=1e-6)


def test_stable_plant_zero_cost():
    K, P = lqr_synthesize([[0.5, 0.1], [0.0, 0.3]], [[1.0], [0.5]], np.zeros((2, 2)), [[1.0]])
    np.testing.assert_array_equal(P, 0)
    np.testing.assert_array_equal(K, 0)


def test_pendulum_lqr_stable(pendulum):
    assert np.abs(np.linalg.eigvals(pendulum.Ac)).max() < 1


def test_pendulum_noiseless_convergence(pendulum):
    # 5 s at 10 ms; the slow cart mode sets the envelope
    x = np.array([0.0, 0.0, 0.05, 0.0])
    norms = []
    for _ in range(500):
        x = pendulum.Ac @ x
        norms.append(np.linalg.norm(x))
    assert norms[-1] < 0.1 * max(norms)
    assert abs(x[2]) < 0.05 * 0.05
    for _ in range(1500):
        x = pendulum.Ac @ x
    assert np.linalg.norm(x) < 1e-6


def test_riccati_nonconvergence_raises():
    # unstabilizable: an unstable mode the input cannot reach
    with pytest.raises(SynthesisError):
        solve_dare([[1.5, 0.0], [0.0, 0.5]], [[0.0], [1.0]], np.eye(2), [[1.0]], max_iter=500)


def test_plant_model_validates_matrices():
    with pytest.raises(ValueError):
        PlantModel(A=[[1.0]], B=[[1.0]], K=[[0.0]], W=[[-1.0]], P=[[1.0]])
    with pytest.raises(ValueError):
        PlantModel(A=[[1.0]], B=[[1.0]], K=[[0.0]], W=[[1.0]], P=[[0.0]])
    model = PlantModel(A=[[2.0]], B=[[1.0]], K=[[-1.5]], W=[[1.0]], P=[[1.0]])
    assert model.Ac[0, 0] == 0.5
