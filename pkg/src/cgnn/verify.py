"""The oracle suite: every closed-form identity checked against an independent
numeric route, reported as CSV rows. This is the CI gate for the numeric core.

All instances are small (at most 20 nodes), seeded, and deterministic; the
whole suite runs single-threaded in well under two minutes.
"""

from __future__ import annotations

import numpy as np

from cgnn.closed_form import (
    OracleReport,
    analytic_limit_no_weight,
    analytic_limit_with_weight,
    analytic_solution_no_weight,
    analytic_solution_with_weight,
    bilinear_power_integral_check,
    discrete_closed_form,
    discrete_propagate,
    log_ode_consistency_check,
    make_report,
    sylvester_quadrature_solution,
)
from cgnn.datasets import SbmSpec, generate_sbm
from cgnn.dynamics import (
    NodeStates,
    OdeSpec,
    SolverConfig,
    augment,
    augment_spec,
    deaugment,
    integrate,
)
from cgnn.graph import Graph, PropagationOperator, build_sym_norm
from cgnn.model import TrainConfig, forward, gradients, init_params, loss, prepare_features
from cgnn.spectral import WeightSpec, materialize_weight, random_orthogonal


def _random_graph(n: int, p: float, rng: np.random.Generator) -> Graph:
    edges = []
    for u in range(n):
        hits = np.flatnonzero(rng.random(n - u - 1) < p)
        edges.extend((u, int(u + 1 + k)) for k in hits)
    return Graph(num_nodes=n, edges=edges)


def _random_operator(
    n: int, rng: np.random.Generator, *, alpha: float = 0.95, gamma: float = 0.5, p: float = 0.25
) -> PropagationOperator:
    graph = _random_graph(n, p, rng)
    return PropagationOperator(
        base=build_sym_norm(graph), alpha=np.full(n, alpha), gamma=gamma
    )


def _symmetric_with_spectrum(
    d: int, low: float, high: float, rng: np.random.Generator
) -> np.ndarray:
    q = random_orthogonal(d, rng)
    lam = rng.uniform(low, high, d)
    return (q * lam) @ q.T


def check_ode_vs_closed_form(seed: int = 0) -> OracleReport:
    """Fixed 40-step solver against the analytic solution on 20-node instances."""
    rng = np.random.default_rng(seed)
    worst_abs = worst_rel = 0.0
    for _ in range(3):
        op = _random_operator(20, rng)
        a = op.to_dense()
        e = rng.standard_normal((20, 4))
        spec = OdeSpec(op, e)
        for t1 in (1.0, 5.0, 12.0):
            got = integrate(spec, NodeStates(e.copy()), SolverConfig(t1=t1)).h
            exact = analytic_solution_no_weight(a, e, t1)
            rep = make_report("", got, exact, 0.0)
            worst_abs = max(worst_abs, rep.max_abs_err)
            worst_rel = max(worst_rel, rep.max_rel_err)
    return OracleReport("ode_vs_closed_form", worst_abs, worst_rel, 1e-6)


def check_long_time_fixed_point(seed: int = 1) -> OracleReport:
    """Analytic solution at t=300 against the geometric-series limit."""
    rng = np.random.default_rng(seed)
    worst_abs = worst_rel = 0.0
    for _ in range(3):
        op = _random_operator(15, rng, alpha=0.95)
        a = op.to_dense()
        e = rng.standard_normal((15, 3))
        rep = make_report(
            "", analytic_solution_no_weight(a, e, 300.0), analytic_limit_no_weight(a, e), 0.0
        )
        worst_abs = max(worst_abs, rep.max_abs_err)
        worst_rel = max(worst_rel, rep.max_rel_err)
    return OracleReport("long_time_fixed_point", worst_abs, worst_rel, 1e-5)


def check_discrete_recursion_vs_formula(seed: int = 2) -> OracleReport:
    """Step recursion against its geometric-sum form for n up to 64."""
    rng = np.random.default_rng(seed)
    op = _random_operator(10, rng)
    a = op.to_dense()
    e = rng.standard_normal((10, 3))
    worst_abs = worst_rel = 0.0
    for n in (1, 2, 4, 8, 16, 32, 64):
        rep = make_report("", discrete_propagate(a, e, n=n), discrete_closed_form(a, e, n), 0.0)
        worst_abs = max(worst_abs, rep.max_abs_err)
        worst_rel = max(worst_rel, rep.max_rel_err)
    return OracleReport("discrete_recursion_vs_formula", worst_abs, worst_rel, 1e-9)


def check_log_ode(seed: int = 3) -> OracleReport:
    """Log-dynamics solution against the exact power integral, n in {1, 2, 5}."""
    rng = np.random.default_rng(seed)
    worst_abs = worst_rel = 0.0
    for n in (1, 2, 5):
        a = _symmetric_with_spectrum(6, 0.25, 0.9, rng)
        e = rng.standard_normal((6, 2))
        rep = log_ode_consistency_check(a, e, n)
        worst_abs = max(worst_abs, rep.max_abs_err)
        worst_rel = max(worst_rel, rep.max_rel_err)
    return OracleReport("log_ode_vs_exact_integral", worst_abs, worst_rel, 1e-6)


def check_mixing_integral(seed: int = 4) -> OracleReport:
    """Closed form of the bilinear power integral against Simpson quadrature."""
    rng = np.random.default_rng(seed)
    a = _symmetric_with_spectrum(6, 0.25, 0.9, rng)
    w = _symmetric_with_spectrum(3, 0.25, 0.9, rng)
    e = rng.standard_normal((6, 3))
    rep = bilinear_power_integral_check(a, e, w)
    return OracleReport("mixing_integral_vs_quadrature", rep.max_abs_err, rep.max_rel_err, 1e-8)


def _mixing_instance(seed: int):
    rng = np.random.default_rng(seed)
    op = _random_operator(8, rng, alpha=0.9)
    a = op.to_dense()
    w_spec = WeightSpec(
        basis=random_orthogonal(3, rng), eigen_params=rng.uniform(0.2, 0.8, 3)
    )
    w = materialize_weight(w_spec)
    e = rng.standard_normal((8, 3))
    return op, a, w_spec, w, e


def check_sylvester_vs_ode(seed: int = 5) -> OracleReport:
    """Mixing-dynamics closed form against the numeric integrator."""
    op, a, w_spec, w, e = _mixing_instance(seed)
    spec = OdeSpec(op, e, weight=w_spec)
    got = integrate(spec, NodeStates(e.copy()), SolverConfig(t1=5.0)).h
    exact = analytic_solution_with_weight(a, w, e, 5.0)
    rep = make_report("", got, exact, 0.0)
    return OracleReport("sylvester_vs_ode", rep.max_abs_err, rep.max_rel_err, 1e-6)


def check_sylvester_long_time_limit(seed: int = 5) -> OracleReport:
    _, a, _, w, e = _mixing_instance(seed)
    rep = make_report(
        "", analytic_solution_with_weight(a, w, e, 300.0), analytic_limit_with_weight(a, w, e), 0.0
    )
    return OracleReport("sylvester_long_time_limit", rep.max_abs_err, rep.max_rel_err, 1e-5)


def check_sylvester_identity_reduction(seed: int = 6) -> OracleReport:
    """Mixing solution with W = I must equal the no-mixing solution."""
    rng = np.random.default_rng(seed)
    op = _random_operator(8, rng, alpha=0.9)
    a = op.to_dense()
    e = rng.standard_normal((8, 3))
    got = analytic_solution_with_weight(a, np.eye(3), e, 4.0)
    exact = analytic_solution_no_weight(a, e, 4.0)
    rep = make_report("", got, exact, 0.0)
    return OracleReport("sylvester_identity_reduction", rep.max_abs_err, rep.max_rel_err, 1e-10)


def check_sylvester_vs_quadrature(seed: int = 5) -> OracleReport:
    """Closed form against the integrating-factor form evaluated by quadrature."""
    _, a, _, w, e = _mixing_instance(seed)
    got = analytic_solution_with_weight(a, w, e, 2.0)
    exact = sylvester_quadrature_solution(a, w, e, 2.0)
    rep = make_report("", got, exact, 0.0)
    return OracleReport("sylvester_vs_quadrature", rep.max_abs_err, rep.max_rel_err, 1e-8)


_FD_INSTANCE = SbmSpec(
    blocks=2, nodes_per_block=5, p_in=0.6, p_out=0.2, feature_dim=4, signal=0.8, seed=3
)


def _finite_difference_check(variant: str, seed: int = 7) -> OracleReport:
    """Adjoint/backprop gradients against central finite differences (step 1e-5),
    covering every trainable parameter class of the full pipeline."""
    data = generate_sbm(_FD_INSTANCE)
    cfg = TrainConfig(
        variant=variant, dropout=0.0, weight_decay=5e-4, t1=1.5,
        hidden_dim=3, epochs=1, seed=seed,
    )
    rng = np.random.default_rng(seed)
    params = init_params(data.num_nodes, data.num_features, data.num_classes, cfg, rng)
    x = prepare_features(data, cfg)
    _, grads = gradients(params, data, cfg, x=x)

    def loss_fn() -> float:
        probs = forward(params, data, cfg, x=x)
        return loss(probs, data.labels, data.mask("train"), params, cfg.weight_decay)

    delta = 1e-5
    worst_abs = worst_rel = 0.0
    for name, arr in params.named_arrays().items():
        if name not in grads:
            continue
        fd = np.zeros_like(arr)
        flat, fd_flat = arr.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + delta
            up = loss_fn()
            flat[i] = orig - delta
            down = loss_fn()
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * delta)
        diff = float(np.max(np.abs(grads[name] - fd)))
        denom = float(np.linalg.norm(fd))
        rel = float(np.linalg.norm(grads[name] - fd)) / denom if denom > 0 else diff
        worst_abs = max(worst_abs, diff)
        worst_rel = max(worst_rel, rel)
    return OracleReport(f"adjoint_vs_fd_{variant.replace('-', '_')}", worst_abs, worst_rel, 1e-4)


def check_adjoint_fd_plain() -> OracleReport:
    return _finite_difference_check("cgnn")


def check_adjoint_fd_mixing() -> OracleReport:
    return _finite_difference_check("cgnn-weight")


def check_augmentation_equivalence(seed: int = 8) -> OracleReport:
    """Doubling the width with a zero block must not change the solved state."""
    rng = np.random.default_rng(seed)
    op = _random_operator(12, rng)
    e = rng.standard_normal((12, 3))
    spec = OdeSpec(op, e)
    cfg = SolverConfig(t1=6.0)
    plain = integrate(spec, NodeStates(e.copy()), cfg).h
    wide = integrate(augment_spec(spec), augment(NodeStates(e.copy())), cfg)
    rep = make_report("", deaugment(wide).h, plain, 0.0)
    aux = np.max(np.abs(wide.h[:, 3:]))
    return OracleReport(
        "augmentation_equivalence", max(rep.max_abs_err, float(aux)), rep.max_rel_err, 1e-10
    )


def check_solver_order(seed: int = 9) -> OracleReport:
    """Halving the fixed step must shrink the error at least 8x (4th order).

    Reported metric is 8 * err(h/2) / err(h); at most 1 when the order holds.
    max_abs_err records the raw improvement ratio.
    """
    rng = np.random.default_rng(seed)
    op = _random_operator(12, rng, alpha=0.9)
    a = op.to_dense()
    e = rng.standard_normal((12, 3))
    spec = OdeSpec(op, e)
    t1 = 4.0
    exact = analytic_solution_no_weight(a, e, t1)
    errs = []
    for steps in (8, 16):
        got = integrate(spec, NodeStates(e.copy()), SolverConfig(t1=t1, step=t1 / steps)).h
        errs.append(float(np.max(np.abs(got - exact))))
    ratio = errs[0] / errs[1]
    return OracleReport("solver_order_halving", ratio, 8.0 / ratio, 1.0)


ALL_CHECKS = (
    check_ode_vs_closed_form,
    check_long_time_fixed_point,
    check_discrete_recursion_vs_formula,
    check_log_ode,
    check_mixing_integral,
    check_sylvester_vs_ode,
    check_sylvester_long_time_limit,
    check_sylvester_identity_reduction,
    check_sylvester_vs_quadrature,
    check_adjoint_fd_plain,
    check_adjoint_fd_mixing,
    check_augmentation_equivalence,
    check_solver_order,
)


def run_all(zero_tolerance: bool = False) -> list[OracleReport]:
    """Run every oracle check; zero_tolerance forces every check to fail
    (fault-injection self-test of the gate)."""
    reports = [check() for check in ALL_CHECKS]
    if zero_tolerance:
        reports = [
            OracleReport(r.name, r.max_abs_err, r.max_rel_err, 0.0) for r in reports
        ]
    return reports
