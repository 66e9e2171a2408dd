"""Augmented Lagrangian solver for smooth NLPs with box bounds.

Inequalities g(x) >= 0 get slack variables (g(x) - s = 0, s >= 0) so the
outer loop only carries equality multipliers; the inner bound-constrained
subproblem goes to L-BFGS-B.  Everything is deterministic for fixed
inputs, which downstream reproducibility guarantees rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize


@dataclass
class SolverOptions:
    tol_constraint: float = 1e-6
    tol_grad: float = 1e-6
    max_outer: int = 50
    max_inner: int = 2000
    # feasibility must dominate the pull of the objective from the first
    # round, or chains of steps wedge across obstacles (tug-of-war points)
    rho_init: float = 1e4
    rho_growth: float = 10.0
    rho_max: float = 1e7
    eta_init: float = 0.1         # initial acceptable violation for nu updates
    eta_shrink: float = 0.5       # violation target factor after each nu update


@dataclass
class NlpResult:
    x: np.ndarray
    objective: float
    max_violation: float
    status: str                    # optimal | feasible-suboptimal | infeasible | max-iter
    outer_iterations: int
    inner_evals: int
    projected_grad: float
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray


class BoxNlp:
    """Problem adapter: subclass or duck-type with these methods.

    objective(x) -> (f, grad); eq(x) -> c; eq_vjp(x, w) -> J_e^T w;
    ineq(x) -> g; ineq_vjp(x, w) -> J_i^T w; bounds() -> (lb, ub).
    Dimensions: n variables, m_eq equalities, m_ineq inequalities.
    """

    n: int
    m_eq: int
    m_ineq: int

    def objective(self, x):
        raise NotImplementedError

    def eq(self, x):
        return np.zeros(0)

    def eq_vjp(self, x, w):
        return np.zeros(self.n)

    def ineq(self, x):
        return np.zeros(0)

    def ineq_vjp(self, x, w):
        return np.zeros(self.n)

    def bounds(self):
        return np.full(self.n, -np.inf), np.full(self.n, np.inf)


def _projected_grad_norm(y, grad, lb, ub):
    stepped = np.clip(y - grad, lb, ub)
    return float(np.max(np.abs(stepped - y))) if len(y) else 0.0


def solve_augmented_lagrangian(problem: BoxNlp, x0, options: SolverOptions | None = None,
                               nu0=None, refresh=None) -> NlpResult:
    """Method-of-multipliers loop around bound-constrained L-BFGS-B solves.

    refresh, when given, maps the primal vector to an improved one between
    outer iterations (e.g. closed-form re-optimization of certificate
    blocks); slacks are reset to their exact conditional optimum after it.
    """
    opts = options or SolverOptions()
    n, m_eq, m_ineq = problem.n, problem.m_eq, problem.m_ineq
    x0 = np.asarray(x0, float)
    lb_x, ub_x = problem.bounds()
    x_start = np.clip(x0, lb_x, ub_x)
    if refresh is not None:
        x_start = np.clip(refresh(x_start), lb_x, ub_x)
    s0 = np.clip(problem.ineq(x_start), 0.0, None)
    y = np.concatenate([x_start, s0])
    lb = np.concatenate([lb_x, np.zeros(m_ineq)])
    ub = np.concatenate([ub_x, np.full(m_ineq, np.inf)])
    nu = np.zeros(m_eq + m_ineq) if nu0 is None else np.asarray(nu0, float).copy()
    rho = opts.rho_init
    evals = 0

    def residual(y):
        x, s = y[:n], y[n:]
        parts = []
        if m_eq:
            parts.append(problem.eq(x))
        if m_ineq:
            parts.append(problem.ineq(x) - s)
        return np.concatenate(parts) if parts else np.zeros(0)

    def merit(y):
        nonlocal evals
        evals += 1
        x, s = y[:n], y[n:]
        f, gx = problem.objective(x)
        h = residual(y)
        w = -nu + rho * h
        val = f + nu @ (-h) + 0.5 * rho * (h @ h)
        grad_x = gx.copy()
        if m_eq:
            grad_x += problem.eq_vjp(x, w[:m_eq])
        grad_s = np.zeros(m_ineq)
        if m_ineq:
            wi = w[m_eq:]
            grad_x += problem.ineq_vjp(x, wi)
            grad_s = -wi
        if not np.isfinite(val):
            raise FloatingPointError("non-finite merit value in NLP solve")
        return val, np.concatenate([grad_x, grad_s])

    best = None     # (viol, y, nu, pg) with the smallest violation seen
    eta = opts.eta_init
    pg = np.inf
    viol = 0.0
    outer = 0
    for outer in range(1, opts.max_outer + 1):
        res = minimize(merit, y, jac=True, method="L-BFGS-B",
                       bounds=list(zip(lb, ub)),
                       options={"maxiter": opts.max_inner, "maxfun": 4 * opts.max_inner,
                                "ftol": 1e-16, "gtol": 0.1 * opts.tol_grad,
                                "maxcor": 20})
        y = res.x
        h = residual(y)
        viol = float(np.max(np.abs(h))) if len(h) else 0.0
        _, g = merit(y)
        pg = _projected_grad_norm(y, g, lb, ub)
        if best is None or viol <= best[0] + 1e-15:
            best = (viol, y.copy(), nu.copy(), pg)
        if viol <= max(eta, opts.tol_constraint):
            # good enough for a first-order multiplier update
            nu = nu - rho * h
            eta = max(eta * opts.eta_shrink, 0.1 * opts.tol_constraint)
            if viol <= opts.tol_constraint and pg <= opts.tol_grad:
                break
        else:
            rho = min(rho * opts.rho_growth, opts.rho_max)
        if refresh is not None:
            x_new = np.clip(refresh(y[:n]), lb_x, ub_x)
            g_new = problem.ineq(x_new)
            s_new = np.clip(g_new - nu[m_eq:] / rho, 0.0, None) if m_ineq else y[n:]
            y = np.concatenate([x_new, s_new])

    if viol > opts.tol_constraint:
        viol, y, nu, pg = best
    x = y[:n]
    f, _ = problem.objective(x)
    if viol <= opts.tol_constraint:
        status = "optimal" if pg <= opts.tol_grad else "feasible-suboptimal"
    else:
        status = "infeasible" if rho >= opts.rho_max else "max-iter"
    return NlpResult(x=x, objective=float(f), max_violation=viol, status=status,
                     outer_iterations=outer, inner_evals=evals, projected_grad=pg,
                     eq_multipliers=nu[:m_eq], ineq_multipliers=nu[m_eq:])
