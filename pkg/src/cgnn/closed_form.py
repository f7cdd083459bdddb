"""Closed-form solutions of the propagation dynamics and oracle checks.

Dense-matrix formulas used to verify the numeric paths and to drive the
discrete-propagation baseline: the step recursion and its geometric-sum
form, the analytic ODE solutions with and without channel mixing, their
long-time limits, and the exact integrals behind the log-dynamics.
Everything here targets instances of at most a few hundred nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cgnn import memtrack
from cgnn.dynamics import rk4_fixed
from cgnn.graph import PropagationOperator
from cgnn.spectral import LOG_FLOOR, eig_any, matrix_exp_action, matrix_log

RESONANCE_GUARD = 1e-12


class OracleError(ValueError):
    """Closed-form preconditions violated (singularity, resonance, ...)."""


@dataclass
class OracleReport:
    """Outcome of one verification check; passed iff max_rel_err <= tolerance."""

    name: str
    max_abs_err: float
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def csv_row(self) -> str:
        return (
            f"{self.name},{self.max_abs_err:.10g},{self.max_rel_err:.10g},"
            f"{self.tolerance:.10g},{'pass' if self.passed else 'fail'}"
        )

    CSV_HEADER = "name,max_abs_err,max_rel_err,tolerance,pass"


def make_report(name: str, approx: np.ndarray, exact: np.ndarray, tolerance: float) -> OracleReport:
    diff = float(np.max(np.abs(np.asarray(approx) - np.asarray(exact))))
    scale = float(np.max(np.abs(exact)))
    rel = diff / scale if scale > 0 else diff
    return OracleReport(name=name, max_abs_err=diff, max_rel_err=rel, tolerance=tolerance)


def _matmul(a, h: np.ndarray) -> np.ndarray:
    if isinstance(a, PropagationOperator):
        return a.apply(h)
    return np.asarray(a) @ h


def discrete_propagate(
    a,
    e: np.ndarray,
    w: np.ndarray | None = None,
    n: int = 0,
    collect: bool = False,
):
    """H_n from the recursion H_{k+1} = A H_k W + H_0 with H_0 = E (W = I when absent).

    `a` may be a dense matrix or a PropagationOperator. With collect=True the
    full trajectory [H_0, ..., H_n] is returned as a second value (the stored
    states back the discrete model's backward pass and its memory profile).
    """
    if n < 0:
        raise OracleError(f"step count must be nonnegative, got {n}")
    h = e.copy()
    states = [memtrack.note(h)] if collect else None
    for _ in range(n):
        h_next = _matmul(a, h)
        if w is not None:
            h_next = h_next @ w
        h_next += e
        h = memtrack.note(h_next)
        if collect:
            states.append(h)
    if collect:
        return h, states
    return h


def discrete_closed_form(a: np.ndarray, e: np.ndarray, n: int) -> np.ndarray:
    """Geometric-sum form of the no-mixing recursion: (A - I)^{-1} (A^{n+1} - I) E."""
    a = np.asarray(a, dtype=float)
    dim = a.shape[0]
    power = np.linalg.matrix_power(a, n + 1)
    return np.linalg.solve(a - np.eye(dim), (power - np.eye(dim)) @ e)


def analytic_solution_no_weight(a: np.ndarray, e: np.ndarray, t: float) -> np.ndarray:
    """(A-I)^{-1} (e^{(A-I)t} - I) E + e^{(A-I)t} E."""
    a = np.asarray(a, dtype=float)
    b = a - np.eye(a.shape[0])
    dec = eig_any(b)
    lam = dec.values
    if np.min(np.abs(lam)) < RESONANCE_GUARD:
        raise OracleError("A - I is numerically singular")
    e_t = np.exp(lam * t)
    coeff = (e_t - 1.0) / lam + e_t
    out = (dec.vectors * coeff) @ (dec.inverse_vectors @ e)
    return out.real if np.iscomplexobj(out) else out


def analytic_limit_no_weight(a: np.ndarray, e: np.ndarray) -> np.ndarray:
    """(I - A)^{-1} E, the sum of all propagation orders; needs spectral radius < 1."""
    a = np.asarray(a, dtype=float)
    rho = float(np.max(np.abs(np.linalg.eigvals(a))))
    if rho >= 1.0:
        raise OracleError(f"spectral radius {rho:.6g} is not below 1")
    return np.linalg.solve(np.eye(a.shape[0]) - a, e)


def _paired_decomp(a: np.ndarray, w: np.ndarray):
    dec_a = eig_any(np.asarray(a, dtype=float) - np.eye(a.shape[0]))
    dec_w = eig_any(np.asarray(w, dtype=float) - np.eye(w.shape[0]))
    sums = dec_a.values[:, None] + dec_w.values[None, :]
    return dec_a, dec_w, sums


def analytic_solution_with_weight(
    a: np.ndarray, w: np.ndarray, e: np.ndarray, t: float
) -> np.ndarray:
    """Closed form of dH/dt = (A-I)H + H(W-I) + E through both eigenbases."""
    dec_a, dec_w, sums = _paired_decomp(a, w)
    if np.min(np.abs(sums)) < RESONANCE_GUARD:
        raise OracleError("resonant eigenvalue pair: some (A-I, W-I) eigenvalue sum is ~0")
    e_tilde = dec_a.inverse_vectors @ e @ dec_w.vectors
    f_t = e_tilde / sums * (np.exp(t * sums) - 1.0)
    first = matrix_exp_action(a - np.eye(a.shape[0]), t, e)
    first = first @ _matrix_exp(dec_w, t)
    out = first + dec_a.vectors @ f_t @ dec_w.inverse_vectors
    return out.real if np.iscomplexobj(out) else out


def _matrix_exp(dec, t: float) -> np.ndarray:
    out = (dec.vectors * np.exp(dec.values * t)) @ dec.inverse_vectors
    return out.real if np.iscomplexobj(out) else out


def analytic_limit_with_weight(a: np.ndarray, w: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Long-time limit of the mixing dynamics; needs all eigenvalue sums negative."""
    dec_a, dec_w, sums = _paired_decomp(a, w)
    if np.max(sums.real if np.iscomplexobj(sums) else sums) >= 0.0:
        raise OracleError("nonnegative eigenvalue sum: the limit does not exist")
    e_tilde = dec_a.inverse_vectors @ e @ dec_w.vectors
    g = -e_tilde / sums
    out = dec_a.vectors @ g @ dec_w.inverse_vectors
    return out.real if np.iscomplexobj(out) else out


def exact_power_integral(a: np.ndarray, e: np.ndarray, upper: float) -> np.ndarray:
    """integral_0^upper A^s E ds = (ln A)^{-1} (A^upper - I) E, spectrum in (0, 1)."""
    a = np.asarray(a, dtype=float)
    log_a = matrix_log(a)
    dec = eig_any(a)
    power = (dec.vectors * dec.values.astype(complex) ** upper) @ dec.inverse_vectors
    power = power.real if np.iscomplexobj(power) else power
    rhs_mat = (power - np.eye(a.shape[0])) @ e
    return np.linalg.solve(log_a, rhs_mat)


def log_ode_consistency_check(
    a: np.ndarray, e: np.ndarray, n: int, *, steps_per_unit: int = 200, tolerance: float = 1e-6
) -> OracleReport:
    """Integrate dH/dt = ln(A) H + E from H(0) = (ln A)^{-1} (A - I) E to t = n
    and compare with the exact power integral up to n + 1."""
    a = np.asarray(a, dtype=float)
    log_a = matrix_log(a)
    h0 = np.linalg.solve(log_a, (a - np.eye(a.shape[0])) @ e)

    def f(y: tuple) -> tuple:
        return (log_a @ y[0] + e,)

    (h_n,) = rk4_fixed(f, (h0,), float(n), max(1, steps_per_unit * n))
    exact = exact_power_integral(a, e, n + 1.0)
    return make_report("log_ode_vs_exact_integral", h_n, exact, tolerance)


def simpson_bilinear_integral(
    a: np.ndarray, e: np.ndarray, w: np.ndarray, *, target: float = 1e-10, max_doublings: int = 16
) -> np.ndarray:
    """integral_0^1 A^s E W^s ds by composite Simpson, refined until stable at `target`."""
    dec_a = eig_any(np.asarray(a, dtype=float))
    dec_w = eig_any(np.asarray(w, dtype=float))
    e_tilde = dec_a.inverse_vectors @ e @ dec_w.vectors

    def integrand(s: float) -> np.ndarray:
        return (
            dec_a.values.astype(complex)[:, None] ** s
            * e_tilde
            * dec_w.values.astype(complex)[None, :] ** s
        )

    def simpson(n_intervals: int) -> np.ndarray:
        xs = np.linspace(0.0, 1.0, n_intervals + 1)
        total = integrand(xs[0]) + integrand(xs[-1])
        for i in range(1, n_intervals):
            total = total + (4.0 if i % 2 else 2.0) * integrand(xs[i])
        return total * (1.0 / n_intervals) / 3.0

    n_intervals = 8
    prev = simpson(n_intervals)
    for _ in range(max_doublings):
        n_intervals *= 2
        cur = simpson(n_intervals)
        if np.max(np.abs(cur - prev)) <= target:
            out = dec_a.vectors @ cur @ dec_w.inverse_vectors
            return out.real if np.iscomplexobj(out) else out
        prev = cur
    raise OracleError("Simpson quadrature did not converge to the requested target")


def bilinear_power_integral_check(
    a: np.ndarray, e: np.ndarray, w: np.ndarray, *, tolerance: float = 1e-8
) -> OracleReport:
    """Closed form of integral_0^1 A^s E W^s ds vs adaptive Simpson quadrature.

    Closed form: P F Q^{-1} with F_ij = (lam_i Et_ij phi_j - Et_ij) / (ln lam_i + ln phi_j)
    for eigenvalues lam of A and phi of W.
    """
    dec_a = eig_any(np.asarray(a, dtype=float))
    dec_w = eig_any(np.asarray(w, dtype=float))
    lam = dec_a.values
    phi = dec_w.values
    if np.min(lam.real if np.iscomplexobj(lam) else lam) <= LOG_FLOOR:
        raise OracleError("A must have spectrum above the log floor")
    if np.min(phi.real if np.iscomplexobj(phi) else phi) <= LOG_FLOOR:
        raise OracleError("W must have spectrum above the log floor")
    log_sum = np.log(lam)[:, None] + np.log(phi)[None, :]
    if np.min(np.abs(log_sum)) < RESONANCE_GUARD:
        raise OracleError("log-resonant pair: ln(lam_i) + ln(phi_j) is ~0")
    e_tilde = dec_a.inverse_vectors @ e @ dec_w.vectors
    f = (lam[:, None] * e_tilde * phi[None, :] - e_tilde) / log_sum
    closed = dec_a.vectors @ f @ dec_w.inverse_vectors
    closed = closed.real if np.iscomplexobj(closed) else closed
    quad = simpson_bilinear_integral(a, e, w)
    return make_report("mixing_integral_vs_quadrature", closed, quad, tolerance)


def sylvester_quadrature_solution(
    a: np.ndarray, w: np.ndarray, e: np.ndarray, t: float, *, n_intervals: int = 4096
) -> np.ndarray:
    """e^{Bt} E e^{Ct} + integral_0^t e^{B(t-s)} E e^{C(t-s)} ds with B = A - I, C = W - I,
    the integral by composite Simpson on a fixed fine grid."""
    b = np.asarray(a, dtype=float) - np.eye(a.shape[0])
    c = np.asarray(w, dtype=float) - np.eye(w.shape[0])
    dec_b = eig_any(b)
    dec_c = eig_any(c)

    def term(s: float) -> np.ndarray:
        left = _matrix_exp(dec_b, t - s)
        right = _matrix_exp(dec_c, t - s)
        return left @ e @ right

    xs = np.linspace(0.0, t, n_intervals + 1)
    total = term(xs[0]) + term(xs[-1])
    for i in range(1, n_intervals):
        total = total + (4.0 if i % 2 else 2.0) * term(xs[i])
    integral = total * (t / n_intervals) / 3.0
    return _matrix_exp(dec_b, t) @ e @ _matrix_exp(dec_c, t) + integral
