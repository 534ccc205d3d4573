# Max-min fairness power control: bisection on a target SINR with a
# second-order-cone feasibility subproblem, coefficient reuse for the
# downlink-pilot protocol, and successive approximation of the perfect-CSI
# objective in the single-antenna case.

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .transmit import PowerAllocation


class SolverFailure(RuntimeError):
    """The convex solver returned neither a feasible witness nor a clean
    infeasibility verdict."""


def gamma_orthogonal(beta: np.ndarray, tau_u: float, rho_u: float) -> np.ndarray:
    """Estimate quality under fully orthogonal pilots (scalar per pair)."""
    return tau_u * rho_u * beta ** 2 / (tau_u * rho_u * beta + 1.0)


@dataclass
class MaxMinProblem:
    """Max-min SINR instance (orthogonal uplink pilots assumed)."""

    beta: np.ndarray   # (M, K)
    gamma: np.ndarray  # (M, K)
    rho: float
    num_ap_antennas: int
    num_user_antennas: int
    tol_t: float = 1e-4

    def __post_init__(self):
        if self.beta.shape != self.gamma.shape:
            raise ValueError("beta and gamma must share the (M, K) shape")
        if self.tol_t <= 0:
            raise ValueError("tol_t must be positive")


@dataclass
class FeasibilityCertificate:
    feasible: bool
    varsigma: np.ndarray | None
    theta: np.ndarray | None
    achieved_min_sinr: float
    margin: float
    status: str


def sinr_p1(varsigma: np.ndarray, problem: MaxMinProblem) -> np.ndarray:
    """Per-user statistical-CSI SINR for square-root coefficients varsigma."""
    ell, n = problem.num_ap_antennas, problem.num_user_antennas
    coh = np.einsum('mk,mk->k', problem.gamma, varsigma)
    load = problem.gamma * varsigma ** 2
    interference = np.einsum('mk,mq->k', problem.beta, load)
    den = (n / ell) * interference + 1.0 / (problem.rho * ell ** 2)
    return coh ** 2 / den


class _FeasibilityModel:
    """Reusable cone program for the fixed-target feasibility test.

    The target enters only through a sqrt(t) parameter, so repeated solves
    during bisection skip re-canonicalization. The program is posed in
    normalized coordinates (gamma, beta, rho, varsigma) ->
    (c gamma, c beta, rho / c, varsigma / sqrt(c)) with c = 1 / max(gamma),
    which leaves both the SINRs and the power constraint unchanged but
    keeps the cone data near unit scale for the interior-point solver.
    """

    def __init__(self, problem: MaxMinProblem):
        m, k = problem.beta.shape
        ell, n = problem.num_ap_antennas, problem.num_user_antennas
        self.problem = problem
        self.scale = 1.0 / float(np.max(problem.gamma))
        c = self.scale
        gamma = c * problem.gamma
        beta = c * problem.beta
        rho = problem.rho / c
        self.varsigma = cp.Variable((m, k), nonneg=True)
        self.theta = cp.Variable(m, nonneg=True)
        self.margin = cp.Variable()
        self.sqrt_t = cp.Parameter(nonneg=True)

        cons = [self.theta <= 1.0 / np.sqrt(ell * n)]
        for mm in range(m):
            cons.append(
                cp.norm(cp.multiply(np.sqrt(gamma[mm]), self.varsigma[mm]))
                <= self.theta[mm])
        for kk in range(k):
            lhs = cp.hstack([
                cp.multiply(np.sqrt(n / ell) * np.sqrt(beta[:, kk]),
                            self.theta) * self.sqrt_t,
                self.sqrt_t / (np.sqrt(rho) * ell) * np.ones(1),
            ])
            rhs = gamma[:, kk] @ self.varsigma[:, kk]
            cons.append(cp.norm(lhs) <= rhs - self.margin)
        self.prog = cp.Problem(cp.Maximize(self.margin), cons)

    def solve(self, t: float) -> FeasibilityCertificate:
        self.sqrt_t.value = float(np.sqrt(max(t, 0.0)))
        try:
            self.prog.solve(solver=cp.CLARABEL)
        except cp.SolverError as exc:
            raise SolverFailure(str(exc)) from exc
        status = self.prog.status
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise SolverFailure(f"unexpected solver status {status}")
        margin = float(self.margin.value)
        feasible = margin >= -1e-9
        # map the witness back to the caller's coordinates
        varsigma = np.maximum(np.asarray(self.varsigma.value), 0.0) \
            * np.sqrt(self.scale) if feasible else None
        theta = np.asarray(self.theta.value) if feasible else None
        achieved = float(np.min(sinr_p1(varsigma, self.problem))) if feasible else 0.0
        return FeasibilityCertificate(feasible=feasible, varsigma=varsigma,
                                      theta=theta, achieved_min_sinr=achieved,
                                      margin=margin, status=status)


def feasibility(t: float, problem: MaxMinProblem) -> FeasibilityCertificate:
    """Decide whether every user can reach SINR target t."""
    if t < 0:
        raise ValueError("target SINR must be nonnegative")
    return _FeasibilityModel(problem).solve(t)


def verify_certificate(cert: FeasibilityCertificate, t: float,
                       problem: MaxMinProblem, tol: float = 1e-8) -> bool:
    """Recompute all cone and box constraints for a claimed witness."""
    if not cert.feasible or cert.varsigma is None:
        return False
    ell, n = problem.num_ap_antennas, problem.num_user_antennas
    vs, th = cert.varsigma, cert.theta
    scale = max(1.0, float(np.max(np.abs(th))))
    if np.any(vs < -tol) or np.any(th < -tol):
        return False
    if np.any(th > 1.0 / np.sqrt(ell * n) + tol):
        return False
    per_ap = np.sqrt(np.einsum('mk,mk->m', problem.gamma, vs ** 2))
    if np.any(per_ap > th + tol * scale):
        return False
    coh = np.einsum('mk,mk->k', problem.gamma, vs)
    lhs = np.sqrt(t) * np.sqrt(
        (n / ell) * problem.beta.T @ th ** 2 + 1.0 / (problem.rho * ell ** 2))
    return bool(np.all(lhs <= coh + tol * max(1.0, float(np.max(np.abs(coh))))))


def _upper_bound(problem: MaxMinProblem) -> float:
    """Interference-free SINR bound with the whole budget on one user."""
    ell, n = problem.num_ap_antennas, problem.num_user_antennas
    best = np.max(np.sum(np.sqrt(problem.gamma / (ell * n)), axis=0) ** 2)
    return float(problem.rho * ell ** 2 * best)


def maxmin_bisection(problem: MaxMinProblem):
    """Bisection on the target SINR; returns (PowerAllocation, t_star, info).

    The returned coefficients are the witness of the last feasible target,
    so their true min-user SINR lies within the final bracket.
    """
    model = _FeasibilityModel(problem)
    t_lo, best = 0.0, None
    t_hi = 1.01 * _upper_bound(problem)
    n_calls = 0
    for _ in range(60):  # guard: the analytic bound should already be infeasible
        cert = model.solve(t_hi)
        n_calls += 1
        if not cert.feasible:
            break
        t_lo, best = t_hi, cert
        t_hi *= 2.0
    else:
        raise SolverFailure("failed to bracket the max-min target")

    while t_hi - t_lo > problem.tol_t * max(t_hi, 1e-12):
        t_mid = 0.5 * (t_lo + t_hi)
        cert = model.solve(t_mid)
        n_calls += 1
        if cert.feasible:
            t_lo, best = t_mid, cert
        else:
            t_hi = t_mid
    if best is None:
        raise SolverFailure("no feasible target found above zero")

    eta = best.varsigma ** 2
    ell, n = problem.num_ap_antennas, problem.num_user_antennas
    slack = 1.0 / (ell * n) - np.einsum('mk,mk->m', eta, problem.gamma)
    alloc = PowerAllocation(eta=eta, feasible=bool(np.all(slack >= -1e-9)),
                            slack=slack, tag="maxmin")
    info = {"t_star": t_lo, "bracket": (t_lo, t_hi), "n_feasibility_calls": n_calls,
            "certificate": best}
    return alloc, t_lo, info


def reuse_for_p2(alloc: PowerAllocation) -> PowerAllocation:
    """Re-tag the statistical-CSI coefficients for the downlink-pilot protocol."""
    return PowerAllocation(eta=alloc.eta.copy(), feasible=alloc.feasible,
                           slack=alloc.slack.copy(), tag="maxmin-reused")


def _up_approx_min_se(varsigma, problem, prelog):
    from .se import se_up_approx
    return float(np.min(se_up_approx(problem.beta, problem.gamma, varsigma,
                                     problem.rho, prelog)))


def maxmin_up_approx(problem: MaxMinProblem, prelog: float = 1.0,
                     max_iters: int = 30, se_tol: float = 1e-4):
    """Successive approximation of the single-antenna perfect-CSI objective.

    Each outer iteration linearizes the signal power at the current iterate
    and solves the resulting quasi-concave problem by bisection over the
    target ratio. Requires L = N = 1.
    """
    if problem.num_ap_antennas != 1 or problem.num_user_antennas != 1:
        raise ValueError("the perfect-CSI approximation requires L = N = 1")
    # work in the scale-invariant normalized coordinates (see _FeasibilityModel)
    c = 1.0 / float(np.max(problem.gamma))
    problem = MaxMinProblem(beta=c * problem.beta, gamma=c * problem.gamma,
                            rho=problem.rho / c, num_ap_antennas=1,
                            num_user_antennas=1, tol_t=problem.tol_t)
    m, k = problem.beta.shape
    beta, gamma, rho = problem.beta, problem.gamma, problem.rho

    # uniform start meeting the per-AP budget with equality
    varsigma = np.sqrt(np.broadcast_to(
        1.0 / np.sum(gamma, axis=1, keepdims=True), (m, k)).copy())
    objective = _up_approx_min_se(varsigma, problem, prelog)
    history = [objective]
    status = "converged"

    for _ in range(max_iters):
        new_vs = _up_approx_step(varsigma, problem)
        new_obj = _up_approx_min_se(new_vs, problem, prelog)
        if new_obj >= objective:
            varsigma, improvement = new_vs, new_obj - objective
            objective = new_obj
        else:
            improvement = 0.0
        history.append(objective)
        if improvement < se_tol:
            break
    else:
        status = "max-iterations"

    slack = 1.0 - np.einsum('mk,mk->m', varsigma ** 2, gamma)
    # undo the normalization: real coefficients are c times the solved ones
    alloc = PowerAllocation(eta=c * varsigma ** 2,
                            feasible=bool(np.all(slack >= -1e-9)),
                            slack=slack, tag="maxmin-up-approx")
    return alloc, {"objective": objective, "history": history, "status": status}


def _up_approx_step(varsigma0: np.ndarray, problem: MaxMinProblem) -> np.ndarray:
    """One convexified subproblem: bisection over the linearized ratio target."""
    m, k = problem.beta.shape
    beta, gamma, rho = problem.beta, problem.gamma, problem.rho
    coh0 = np.einsum('mk,mk->k', gamma, varsigma0)

    def solve_at(t):
        vs = cp.Variable((m, k), nonneg=True)
        margin = cp.Variable()
        # linearized numerator: (sum gamma vs)^2 + sum beta gamma vs^2 bounded
        # below by its tangent at varsigma0
        num = []
        den = []
        for kk in range(k):
            lin_coh = 2.0 * coh0[kk] * (gamma[:, kk] @ vs[:, kk]) - coh0[kk] ** 2
            lin_own = (beta[:, kk] * gamma[:, kk]) @ (
                2.0 * cp.multiply(varsigma0[:, kk], vs[:, kk]) - varsigma0[:, kk] ** 2)
            num.append(lin_coh + lin_own)
            terms = []
            for qq in range(k):
                if qq == kk:
                    continue
                w = beta[:, kk] * gamma[:, qq]
                terms.append(w @ cp.square(vs[:, qq]))
            den.append(sum(terms) + 1.0 / rho if terms else 1.0 / rho)
        cons = [cp.sum(cp.multiply(gamma, cp.square(vs)), axis=1) <= 1.0]
        for kk in range(k):
            cons.append(t * den[kk] + margin <= num[kk])
        prog = cp.Problem(cp.Maximize(margin), cons)
        try:
            prog.solve(solver=cp.CLARABEL)
        except cp.SolverError as exc:
            raise SolverFailure(str(exc)) from exc
        if prog.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise SolverFailure(f"unexpected solver status {prog.status}")
        ok = margin.value is not None and margin.value >= -1e-9
        return ok, (np.maximum(np.asarray(vs.value), 0.0) if ok else None)

    # current iterate certifies feasibility of its own ratio
    den0 = np.array([
        float(np.einsum('m,mq,mq->', beta[:, kk],
                        np.delete(gamma, kk, axis=1),
                        np.delete(varsigma0, kk, axis=1) ** 2)) + 1.0 / rho
        for kk in range(k)])
    num0 = coh0 ** 2 + np.einsum('mk,mk,mk->k', beta, gamma, varsigma0 ** 2)
    t_lo = float(np.min(num0 / den0))
    best = varsigma0
    t_hi = 1.01 * _upper_bound(problem) + t_lo
    for _ in range(60):
        ok, vs = solve_at(t_hi)
        if not ok:
            break
        t_lo, best = t_hi, vs
        t_hi *= 2.0
    while t_hi - t_lo > problem.tol_t * max(t_hi, 1e-12):
        t_mid = 0.5 * (t_lo + t_hi)
        ok, vs = solve_at(t_mid)
        if ok:
            t_lo, best = t_mid, vs
        else:
            t_hi = t_mid
    return best
