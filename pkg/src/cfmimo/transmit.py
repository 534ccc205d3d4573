# Conjugate beamforming transmission: per-AP power budgeting, true
# effective channels, and the received data signal model.

from dataclasses import dataclass, field

import numpy as np

from .channel import complex_normal


@dataclass
class PowerAllocation:
    """Nonnegative power-control coefficients with per-AP feasibility data.

    eta:      (M, K)
    feasible: whether every AP meets its power budget
    slack:    (M,) per-AP margin (budget minus spent, nonnegative if feasible)
    tag:      provenance of the coefficients (uniform, maxmin, ...)
    """

    eta: np.ndarray
    feasible: bool
    slack: np.ndarray
    tag: str = "uniform"


def power_budget_spend(eta: np.ndarray, beta: np.ndarray, a: np.ndarray,
                       tau_u: float, rho_u: float) -> np.ndarray:
    """Per-AP spend sqrt(tau_u rho_u) sum_k eta_mk beta_mk Re tr(A_mk).

    The budget is 1/L per AP; under fully orthogonal pilots the spend
    reduces to N sum_k eta_mk gamma_mk.
    """
    tr_a = np.real(np.einsum('mknn->mk', a))
    return np.sqrt(tau_u * rho_u) * np.einsum('mk,mk,mk->m', eta, beta, tr_a)


def allocation_from_eta(eta: np.ndarray, beta: np.ndarray, a: np.ndarray,
                        tau_u: float, rho_u: float, num_ap_antennas: int,
                        tag: str) -> PowerAllocation:
    """Wrap raw coefficients with recomputed feasibility metadata."""
    spend = power_budget_spend(eta, beta, a, tau_u, rho_u)
    slack = 1.0 / num_ap_antennas - spend
    return PowerAllocation(eta=eta, feasible=bool(np.all(slack >= -1e-12)),
                           slack=slack, tag=tag)


def uniform_power(beta: np.ndarray, a: np.ndarray, tau_u: float, rho_u: float,
                  num_ap_antennas: int) -> PowerAllocation:
    """Equal per-user coefficients meeting the per-AP budget with equality."""
    m, k = beta.shape
    spend_unit = power_budget_spend(np.ones((m, k)), beta, a, tau_u, rho_u)
    eta = np.broadcast_to(1.0 / (num_ap_antennas * spend_unit)[:, None], (m, k)).copy()
    return allocation_from_eta(eta, beta, a, tau_u, rho_u, num_ap_antennas, tag="uniform")


def effective_channels(g: np.ndarray, g_hat: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """True effective channels D_kk' = sum_m sqrt(eta_mk') G_mk^H G_hat_mk'.

    g, g_hat: (..., M, K, L, N); returns (..., K, K, N, N).
    """
    m, k, l, n = g.shape[-4:]
    lead = g.shape[:-4]
    # fold (m, l) into one contraction axis so the sum is a single matmul
    a = np.swapaxes(g, -3, -2).reshape(lead + (m * l, k * n))
    scaled = np.sqrt(eta)[:, :, None, None] * g_hat
    b = np.swapaxes(scaled, -3, -2).reshape(lead + (m * l, k * n))
    out = np.matmul(np.conj(np.swapaxes(a, -1, -2)), b)
    return np.swapaxes(out.reshape(lead + (k, n, k, n)), -3, -2)


def received_signal(d_true: np.ndarray, symbols: np.ndarray, rho: float,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Received data vector per user: r_k = sqrt(rho) sum_k' D_kk' q_k' + n_k.

    d_true: (..., K, K, N, N); symbols: (..., K, N). Pass rng=None to
    disable the additive noise (useful for exact checks).
    """
    r = np.sqrt(rho) * np.einsum('...kqij,...qj->...ki', d_true, symbols)
    if rng is not None:
        r = r + complex_normal(rng, r.shape)
    return r


def transmit_signals(g_hat: np.ndarray, eta: np.ndarray, symbols: np.ndarray,
                     rho: float) -> np.ndarray:
    """Per-AP precoded signals x_m = sqrt(rho) sum_k sqrt(eta_mk) G_hat_mk q_k.

    Used by the power-accounting tests; shape (..., M, L).
    """
    return np.sqrt(rho) * np.einsum('mk,...mklj,...kj->...ml', np.sqrt(eta), g_hat, symbols)
