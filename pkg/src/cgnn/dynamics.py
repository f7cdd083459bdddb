"""Continuous node-representation dynamics and their gradients.

Two right-hand sides: dH/dt = (A - I) H + E (independent channels) and
dH/dt = (A - I) H + H (W - I) + E (interacting channels). Both are affine
in H, so the adjoint state evolves independently of the trajectory and the
backward pass can re-integrate H jointly with it — no stored trajectory,
memory independent of the step count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cgnn import memtrack
from cgnn.graph import PropagationOperator
from cgnn.spectral import WeightSpec, materialize_weight


class NumericsError(RuntimeError):
    """Non-finite state or exhausted step budget during integration."""


@dataclass
class NodeStates:
    """num_nodes x width representation matrix at a given time."""

    h: np.ndarray
    time: float = 0.0


@dataclass
class OdeSpec:
    """One right-hand side: operator, restart matrix E, optional channel mixing."""

    operator: PropagationOperator
    restart: np.ndarray
    weight: WeightSpec | None = None
    use_restart: bool = True

    def validate(self) -> None:
        n = self.operator.num_nodes
        if self.restart.ndim != 2 or self.restart.shape[0] != n:
            raise ValueError(
                f"restart has shape {self.restart.shape}, expected ({n}, width)"
            )
        if self.weight is not None and self.weight.dim != self.restart.shape[1]:
            raise ValueError(
                f"weight dim {self.weight.dim} does not match state width "
                f"{self.restart.shape[1]}"
            )

    @property
    def width(self) -> int:
        return self.restart.shape[1]


@dataclass
class SolverConfig:
    """Integrator selection and step control.

    step=None means the fixed solver takes exactly 40 equal steps; otherwise
    it takes ceil(t1/step) equal steps.
    """

    method: str = "fixed-rk4"
    t1: float = 1.0
    step: float | None = None
    rtol: float = 1e-3
    atol: float = 1e-4
    max_steps: int = 1_000_000

    DEFAULT_FIXED_STEPS = 40

    def validate(self) -> None:
        if self.method not in ("fixed-rk4", "adaptive-rk45"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.t1 < 0:
            raise ValueError(f"t1 must be nonnegative, got {self.t1}")
        if self.step is not None and self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.method == "fixed-rk4" and self.max_steps < self.n_fixed_steps():
            raise ValueError(
                f"max_steps {self.max_steps} below the {self.n_fixed_steps()} "
                "steps the fixed grid requires"
            )

    def n_fixed_steps(self) -> int:
        if self.t1 == 0:
            return 0
        if self.step is None:
            return self.DEFAULT_FIXED_STEPS
        return max(1, math.ceil(self.t1 / self.step))


def rhs(spec: OdeSpec, state: NodeStates) -> np.ndarray:
    """Time derivative of the node states under `spec`."""
    spec.validate()
    if state.h.shape != spec.restart.shape:
        raise ValueError(
            f"state shape {state.h.shape} does not match restart shape "
            f"{spec.restart.shape}"
        )
    w_mat = materialize_weight(spec.weight) if spec.weight is not None else None
    return _rhs_array(spec, w_mat, state.h)


def _rhs_array(spec: OdeSpec, w_mat: np.ndarray | None, h: np.ndarray) -> np.ndarray:
    out = spec.operator.apply(h) - h
    if w_mat is not None:
        out += h @ w_mat - h
    if spec.use_restart:
        out += spec.restart
    return out


# -- generic fixed/adaptive steppers over tuples of arrays ---------------------


def _tree_axpy(y: tuple, k: tuple, c: float) -> tuple:
    return tuple(a + c * b for a, b in zip(y, k))


def _rk4_step(f, y: tuple, h: float) -> tuple:
    k1 = f(y)
    k2 = f(_tree_axpy(y, k1, h / 2.0))
    k3 = f(_tree_axpy(y, k2, h / 2.0))
    k4 = f(_tree_axpy(y, k3, h))
    return tuple(
        a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
    )


def _check_finite(y: tuple, t: float, step_index: int) -> None:
    for a in y:
        if not np.all(np.isfinite(a)):
            raise NumericsError(
                f"non-finite state at t={t:.6g} (step {step_index})"
            )


def rk4_fixed(f, y0: tuple, t1: float, n_steps: int) -> tuple:
    """Classic fourth-order Runge-Kutta with n_steps equal steps on a tuple state."""
    if t1 == 0 or n_steps == 0:
        return tuple(a.copy() for a in y0)
    h = t1 / n_steps
    y = y0
    # overflow surfaces as the explicit non-finite guard, not a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            y = _rk4_step(f, y, h)
            for a in y:
                memtrack.note(a)
            _check_finite(y, (i + 1) * h, i)
    return y


# Dormand-Prince 5(4) tableau.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_E = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


def rk45_adaptive(
    f, y0: tuple, t1: float, rtol: float, atol: float, max_steps: int
) -> tuple:
    """Dormand-Prince 5(4) with standard step control on a tuple state."""
    if t1 == 0:
        return tuple(a.copy() for a in y0)
    t = 0.0
    y = tuple(a.copy() for a in y0)
    h = t1 / 100.0
    for step_index in range(max_steps):
        if t >= t1:
            return y
        h = min(h, t1 - t)
        ks = []
        for stage in range(7):
            yi = y
            for j, coef in enumerate(_DP_A[stage]):
                if coef != 0.0:
                    yi = _tree_axpy(yi, ks[j], h * coef)
            ks.append(f(yi))
        y_new = y
        for j, coef in enumerate(_DP_B):
            if coef != 0.0:
                y_new = _tree_axpy(y_new, ks[j], h * coef)
        # weighted rms of the embedded 4th/5th order difference
        err_sq = 0.0
        count = 0
        for idx, (a, a_new) in enumerate(zip(y, y_new)):
            err = np.zeros_like(a)
            for j, coef in enumerate(_DP_E):
                if coef != 0.0:
                    err += (h * coef) * ks[j][idx]
            scale = atol + rtol * np.maximum(np.abs(a), np.abs(a_new))
            err_sq += float(np.sum((err / scale) ** 2))
            count += a.size
        err_norm = math.sqrt(err_sq / max(count, 1))
        if err_norm <= 1.0:
            t += h
            y = y_new
            for a in y:
                memtrack.note(a)
            _check_finite(y, t, step_index)
        factor = 0.9 * (err_norm ** -0.2) if err_norm > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
        if h <= 0 or not math.isfinite(h):
            raise NumericsError(f"degenerate step size at t={t:.6g} (step {step_index})")
    raise NumericsError(f"max_steps={max_steps} exceeded at t={t:.6g}")


def _solve(f, y0: tuple, cfg: SolverConfig) -> tuple:
    if cfg.method == "fixed-rk4":
        return rk4_fixed(f, y0, cfg.t1, cfg.n_fixed_steps())
    return rk45_adaptive(f, y0, cfg.t1, cfg.rtol, cfg.atol, cfg.max_steps)


# -- public entry points --------------------------------------------------------


def integrate(spec: OdeSpec, h0: NodeStates, cfg: SolverConfig) -> NodeStates:
    """Evolve the node states from time 0 to cfg.t1."""
    spec.validate()
    cfg.validate()
    if h0.time != 0.0:
        raise ValueError(f"initial states must be at time 0, got {h0.time}")
    if h0.h.shape != spec.restart.shape:
        raise ValueError(
            f"initial state shape {h0.h.shape} does not match restart shape "
            f"{spec.restart.shape}"
        )
    w_mat = materialize_weight(spec.weight) if spec.weight is not None else None

    def f(y: tuple) -> tuple:
        return (_rhs_array(spec, w_mat, y[0]),)

    (h_final,) = _solve(f, (h0.h,), cfg)
    return NodeStates(h=h_final, time=cfg.t1)


def augment(state: NodeStates) -> NodeStates:
    """Append one zero column block of the same width (training stabilizer)."""
    h = state.h
    return NodeStates(h=np.hstack([h, np.zeros_like(h)]), time=state.time)


def deaugment(state: NodeStates) -> NodeStates:
    """Keep the first half of the columns, dropping the auxiliary block."""
    width = state.h.shape[1]
    if width % 2 != 0:
        raise ValueError(f"cannot deaugment odd width {width}")
    return NodeStates(h=state.h[:, : width // 2].copy(), time=state.time)


def augment_spec(spec: OdeSpec) -> OdeSpec:
    """Zero-extend the restart matrix to the doubled width (no-weight dynamics)."""
    if spec.weight is not None:
        raise ValueError("augment_spec supports only the no-weight dynamics; "
                         "build the widened mixing matrix explicitly instead")
    e = spec.restart
    return OdeSpec(
        operator=spec.operator,
        restart=np.hstack([e, np.zeros_like(e)]),
        weight=None,
        use_restart=spec.use_restart,
    )


@dataclass
class AdjointGradients:
    """Gradients of a scalar loss through integrate.

    d_restart and d_initial are separate: when the caller feeds the same
    matrix as both the restart term and the initial state, the total
    derivative is their sum.
    """

    d_restart: np.ndarray
    d_initial: np.ndarray
    d_alpha: np.ndarray
    d_basis: np.ndarray | None = None
    d_eigen_params: np.ndarray | None = None


def adjoint_backward(
    spec: OdeSpec, h0: NodeStates, cfg: SolverConfig, grad_out: np.ndarray
) -> AdjointGradients:
    """Exact-loss gradients via the adjoint ODE, memory independent of step count.

    Solves the state jointly with the adjoint and the parameter accumulators
    backward from t1 to 0; nothing from the forward solve is stored beyond
    H(t1) itself.
    """
    spec.validate()
    cfg.validate()
    if grad_out.shape != spec.restart.shape:
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match state shape "
            f"{spec.restart.shape}"
        )
    n = spec.operator.num_nodes
    width = spec.width
    w_mat = materialize_weight(spec.weight) if spec.weight is not None else None

    h_final = integrate(spec, h0, cfg).h

    mix_shape = (width, width) if w_mat is not None else (1, 1)
    zero_mix = np.zeros(mix_shape)

    # Backward time tau = t1 - t; state = (h, a, acc_restart, acc_mix, acc_alpha).
    def f(y: tuple) -> tuple:
        h, a = y[0], y[1]
        dh = -_rhs_array(spec, w_mat, h)
        da = spec.operator.apply_transpose(a) - a
        if w_mat is not None:
            da += a @ w_mat.T - a
        d_acc_restart = a if spec.use_restart else np.zeros_like(a)
        d_acc_mix = h.T @ a if w_mat is not None else zero_mix
        d_acc_alpha = (a * spec.operator.neighbor_mix(h)).sum(axis=1)
        return (dh, da, d_acc_restart, d_acc_mix, d_acc_alpha)

    y0 = (
        h_final,
        grad_out.copy(),
        np.zeros((n, width)),
        np.zeros(mix_shape),
        np.zeros(n),
    )
    _, a0, acc_restart, acc_mix, acc_alpha = _solve(f, y0, cfg)

    d_basis = None
    d_eigen = None
    if spec.weight is not None:
        g = acc_mix
        u = spec.weight.basis
        d_basis = (g + g.T) @ u @ np.diag(spec.weight.clamped_eigs())
        d_eigen = np.diag(u.T @ g @ u).copy()

    return AdjointGradients(
        d_restart=acc_restart,
        d_initial=a0,
        d_alpha=acc_alpha,
        d_basis=d_basis,
        d_eigen_params=d_eigen,
    )
