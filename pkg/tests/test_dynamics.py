import math

import numpy as np
import pytest

from cgnn import memtrack
from cgnn.closed_form import (
    analytic_limit_no_weight,
    analytic_solution_no_weight,
    discrete_propagate,
)
from cgnn.dynamics import (
    NodeStates,
    NumericsError,
    OdeSpec,
    SolverConfig,
    adjoint_backward,
    augment,
    augment_spec,
    deaugment,
    integrate,
    rhs,
    rk4_fixed,
)
from cgnn.spectral import WeightSpec, materialize_weight, random_orthogonal

from graph_fixtures import random_operator, scalar_operator


def test_rhs_scalar():
    op = scalar_operator(0.5)
    a_eff = float(op.to_dense()[0, 0])
    spec = OdeSpec(op, np.array([[1.0]]))
    out = rhs(spec, NodeStates(np.array([[1.0]])))
    assert np.allclose(out, (a_eff - 1.0) * 1.0 + 1.0)


def test_rhs_fixed_point(rng):
    op = random_operator(12, rng)
    e = rng.standard_normal((12, 3))
    h_star = analytic_limit_no_weight(op.to_dense(), e)
    out = rhs(OdeSpec(op, e), NodeStates(h_star))
    assert np.max(np.abs(out)) < 1e-10


def test_rhs_with_weight_scalar():
    # (a-1) h + h (w-1) + e with a = w = 0.5, h = e = 1 -> 0
    op = scalar_operator(0.5)
    w = WeightSpec(basis=np.eye(1), eigen_params=np.array([0.5]))
    spec = OdeSpec(op, np.array([[1.0]]), weight=w)
    out = rhs(spec, NodeStates(np.array([[1.0]])))
    a_eff = float(op.to_dense()[0, 0])
    assert np.allclose(out, (a_eff - 1.0) + (0.5 - 1.0) + 1.0)


def test_rhs_dimension_mismatch(rng):
    op = random_operator(4, rng)
    spec = OdeSpec(op, np.zeros((4, 2)))
    with pytest.raises(ValueError):
        rhs(spec, NodeStates(np.zeros((4, 3))))


def test_integrate_scalar_closed_form():
    # dH/dt = (a-1)H + 1 from H(0)=1: H(t) = (e^{bt}-1)/b + e^{bt}, b = a-1
    op = scalar_operator(0.5)
    b = float(op.to_dense()[0, 0]) - 1.0
    spec = OdeSpec(op, np.array([[1.0]]))
    out = integrate(spec, NodeStates(np.array([[1.0]])), SolverConfig(t1=2.0))
    exact = (math.exp(2 * b) - 1) / b + math.exp(2 * b)
    assert abs(out.h[0, 0] - exact) < 1e-8
    assert abs(exact - (2 - math.exp(-1.0))) < 1e-12  # spec's stated value


def test_constant_derivative_grows_linearly():
    c = np.array([[3.0, -1.0]])

    def f(y):
        return (np.broadcast_to(c, y[0].shape).copy(),)

    (out,) = rk4_fixed(f, (np.ones((1, 2)),), 5.0, 20)
    assert np.allclose(out, 1.0 + 5.0 * c)


def test_integrate_t1_zero_is_identity(rng):
    op = random_operator(5, rng)
    e = rng.standard_normal((5, 2))
    out = integrate(OdeSpec(op, e), NodeStates(e.copy()), SolverConfig(t1=0.0))
    assert np.array_equal(out.h, e)


def test_integrate_matches_closed_form(rng):
    op = random_operator(15, rng)
    e = rng.standard_normal((15, 4))
    spec = OdeSpec(op, e)
    got = integrate(spec, NodeStates(e.copy()), SolverConfig(t1=5.0)).h
    exact = analytic_solution_no_weight(op.to_dense(), e, 5.0)
    rel = np.max(np.abs(got - exact)) / np.max(np.abs(exact))
    assert rel <= 1e-6


def test_integrate_requires_time_zero(rng):
    op = random_operator(3, rng)
    e = np.zeros((3, 1))
    with pytest.raises(ValueError):
        integrate(OdeSpec(op, e), NodeStates(e, time=1.0), SolverConfig(t1=1.0))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="euler").validate()
    with pytest.raises(ValueError):
        SolverConfig(t1=-1.0).validate()
    with pytest.raises(ValueError):
        SolverConfig(t1=10.0, step=0.1, max_steps=50).validate()


def test_solver_order(rng):
    op = random_operator(10, rng, alpha=0.9)
    e = rng.standard_normal((10, 2))
    spec = OdeSpec(op, e)
    exact = analytic_solution_no_weight(op.to_dense(), e, 4.0)
    errs = []
    for steps in (8, 16):
        got = integrate(spec, NodeStates(e.copy()), SolverConfig(t1=4.0, step=4.0 / steps)).h
        errs.append(np.max(np.abs(got - exact)))
    assert errs[0] / errs[1] >= 8.0


def test_fixed_point_stability(rng):
    op = random_operator(10, rng)
    e = rng.standard_normal((10, 2))
    h_star = analytic_limit_no_weight(op.to_dense(), e)
    for t1 in (1.0, 10.0, 50.0):
        out = integrate(OdeSpec(op, e), NodeStates(h_star.copy()), SolverConfig(t1=t1)).h
        assert np.max(np.abs(out - h_star)) <= 1e-8


def test_long_time_limit_by_integration(rng):
    op = random_operator(10, rng, alpha=0.95)
    e = rng.standard_normal((10, 2))
    limit = analytic_limit_no_weight(op.to_dense(), e)
    got = integrate(
        OdeSpec(op, e), NodeStates(e.copy()), SolverConfig(t1=300.0, step=0.25)
    ).h
    assert np.max(np.abs(got - limit)) / np.linalg.norm(limit, np.inf) <= 1e-5


def test_no_restart_matches_homogeneous_solution(rng):
    from cgnn.spectral import matrix_exp_action

    op = random_operator(10, rng)
    h0 = rng.standard_normal((10, 3))
    spec = OdeSpec(op, np.zeros_like(h0), use_restart=False)
    got = integrate(spec, NodeStates(h0.copy()), SolverConfig(t1=3.0)).h
    exact = matrix_exp_action(op.to_dense() - np.eye(10), 3.0, h0)
    rel = np.max(np.abs(got - exact)) / np.max(np.abs(exact))
    assert rel <= 1e-6


def test_adaptive_matches_closed_form(rng):
    op = random_operator(8, rng)
    e = rng.standard_normal((8, 2))
    spec = OdeSpec(op, e)
    cfg = SolverConfig(method="adaptive-rk45", t1=5.0, rtol=1e-8, atol=1e-10)
    got = integrate(spec, NodeStates(e.copy()), cfg).h
    exact = analytic_solution_no_weight(op.to_dense(), e, 5.0)
    assert np.max(np.abs(got - exact)) / np.max(np.abs(exact)) <= 1e-7


def test_adaptive_max_steps_exceeded(rng):
    op = random_operator(4, rng)
    e = rng.standard_normal((4, 1))
    cfg = SolverConfig(method="adaptive-rk45", t1=50.0, rtol=1e-12, atol=1e-14, max_steps=5)
    with pytest.raises(NumericsError, match="max_steps"):
        integrate(OdeSpec(op, e), NodeStates(e.copy()), cfg)


def test_nonfinite_guard_reports_step():
    # grossly unstable fixed grid: |R(h*lambda)| >> 1 overflows to inf
    op = scalar_operator(0.5)
    spec = OdeSpec(op, np.array([[1.0]]))
    with pytest.raises(NumericsError, match="non-finite state at t="):
        integrate(spec, NodeStates(np.array([[1.0]])), SolverConfig(t1=20000.0))


def test_augment_deaugment_identity(rng):
    h = NodeStates(rng.standard_normal((6, 3)))
    assert np.array_equal(deaugment(augment(h)).h, h.h)
    with pytest.raises(ValueError):
        deaugment(NodeStates(np.zeros((4, 3))))


def test_augmented_aux_block_stays_zero(rng):
    op = random_operator(9, rng)
    e = rng.standard_normal((9, 2))
    spec = OdeSpec(op, e)
    wide = integrate(augment_spec(spec), augment(NodeStates(e.copy())), SolverConfig(t1=4.0))
    assert np.max(np.abs(wide.h[:, 2:])) == 0.0


def test_augmentation_equivalence(rng):
    op = random_operator(9, rng)
    e = rng.standard_normal((9, 2))
    spec = OdeSpec(op, e)
    cfg = SolverConfig(t1=4.0)
    plain = integrate(spec, NodeStates(e.copy()), cfg).h
    wide = integrate(augment_spec(spec), augment(NodeStates(e.copy())), cfg)
    assert np.max(np.abs(deaugment(wide).h - plain)) <= 1e-10


def test_adjoint_scalar_parts_and_sum():
    op = scalar_operator(0.5)
    b = float(op.to_dense()[0, 0]) - 1.0
    spec = OdeSpec(op, np.array([[1.0]]))
    grads = adjoint_backward(
        spec, NodeStates(np.array([[1.0]])), SolverConfig(t1=1.0), np.array([[1.0]])
    )
    d_restart_exact = (math.exp(b) - 1.0) / b
    d_initial_exact = math.exp(b)
    assert abs(grads.d_restart[0, 0] - d_restart_exact) < 1e-8
    assert abs(grads.d_initial[0, 0] - d_initial_exact) < 1e-8
    total = grads.d_restart[0, 0] + grads.d_initial[0, 0]
    assert abs(total - (2.0 - math.exp(-0.5))) < 1e-8


def test_adjoint_zero_grad_out(rng):
    op = random_operator(6, rng)
    e = rng.standard_normal((6, 2))
    w = WeightSpec(basis=random_orthogonal(2, rng), eigen_params=np.array([0.4, 0.7]))
    spec = OdeSpec(op, e, weight=w)
    grads = adjoint_backward(spec, NodeStates(e.copy()), SolverConfig(t1=2.0), np.zeros((6, 2)))
    assert np.max(np.abs(grads.d_restart)) == 0.0
    assert np.max(np.abs(grads.d_initial)) == 0.0
    assert np.max(np.abs(grads.d_alpha)) == 0.0
    assert np.max(np.abs(grads.d_basis)) == 0.0
    assert np.max(np.abs(grads.d_eigen_params)) == 0.0


def test_adjoint_matches_finite_differences(rng):
    """Loss = sum(H(t1) * R): each gradient vs central differences."""
    n, d = 7, 2
    op = random_operator(n, rng, alpha=0.9)
    e = rng.standard_normal((n, d))
    h0 = rng.standard_normal((n, d))
    w = WeightSpec(basis=random_orthogonal(d, rng), eigen_params=np.array([0.35, 0.65]))
    r = rng.standard_normal((n, d))
    cfg = SolverConfig(t1=1.5)

    def loss_for(e_=None, h0_=None, alpha_=None, basis_=None, eigen_=None):
        op_ = op
        if alpha_ is not None:
            from cgnn.graph import PropagationOperator

            op_ = PropagationOperator(base=op.base, alpha=alpha_, gamma=op.gamma)
        w_ = WeightSpec(
            basis=basis_ if basis_ is not None else w.basis,
            eigen_params=eigen_ if eigen_ is not None else w.eigen_params,
        )
        spec_ = OdeSpec(op_, e_ if e_ is not None else e, weight=w_)
        out = integrate(spec_, NodeStates((h0_ if h0_ is not None else h0).copy()), cfg)
        return float(np.sum(out.h * r))

    spec = OdeSpec(op, e, weight=w)
    grads = adjoint_backward(spec, NodeStates(h0.copy()), cfg, r)

    delta = 1e-6

    def fd(base_arr, kw):
        out = np.zeros_like(base_arr)
        flat, out_flat = base_arr.reshape(-1), out.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + delta
            up = loss_for(**{kw: base_arr})
            flat[i] = orig - delta
            down = loss_for(**{kw: base_arr})
            flat[i] = orig
            out_flat[i] = (up - down) / (2 * delta)
        return out

    for got, arr, kw in (
        (grads.d_restart, e.copy(), "e_"),
        (grads.d_initial, h0.copy(), "h0_"),
        (grads.d_alpha, op.alpha.copy(), "alpha_"),
        (grads.d_basis, w.basis.copy(), "basis_"),
        (grads.d_eigen_params, w.eigen_params.copy(), "eigen_"),
    ):
        expected = fd(arr, kw)
        rel = np.linalg.norm(got - expected) / max(np.linalg.norm(expected), 1e-300)
        assert rel <= 1e-4, f"{kw}: rel err {rel}"


def test_adjoint_memory_constant_in_steps(rng):
    op = random_operator(12, rng)
    e = rng.standard_normal((12, 3))
    spec = OdeSpec(op, e)
    peaks = []
    for steps in (5, 20, 80):
        with memtrack.tracking() as tracker:
            adjoint_backward(
                spec, NodeStates(e.copy()), SolverConfig(t1=4.0, step=4.0 / steps), e
            )
        peaks.append(tracker.peak)
    assert max(peaks) - min(peaks) <= 1


def test_discrete_trajectory_memory_grows(rng):
    op = random_operator(12, rng)
    e = rng.standard_normal((12, 3))
    peaks = []
    for n in (5, 20, 80):
        with memtrack.tracking() as tracker:
            discrete_propagate(op, e, n=n, collect=True)
        peaks.append(tracker.peak)
    assert peaks[0] < peaks[1] < peaks[2]
    assert peaks[2] - peaks[1] == 60
