# MMSE estimators: uplink channel estimates at the APs and downlink
# effective-channel estimates at the users.

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, PilotBook, complex_normal


@dataclass
class UplinkEstimates:
    """Uplink MMSE estimates and the per-antenna statistics behind them.

    g_hat: (..., M, K, L, N) estimates
    a:     (M, K, N, N) estimator matrices (one per AP-user pair)
    gamma: (M, K, N) per-antenna second moments of the estimate columns
    """

    g_hat: np.ndarray
    a: np.ndarray
    gamma: np.ndarray


@dataclass
class EffectiveChannelStats:
    """Moment tables of the effective channels for the current power allocation.

    xi_own:   (K, N)      variance of own-user entries, column index
    kappa:    (K, N)      mean of the diagonal own-user entries
    xi_cross: (K, K, N)   xi_cross[k, k', j] for the cross-user entries
    """

    xi_own: np.ndarray
    kappa: np.ndarray
    xi_cross: np.ndarray


@dataclass
class EffectiveChannelEstimates:
    """Element-wise MMSE estimates of the effective channels.

    d_hat:   (..., K, K, N, N)
    err_var: (K, K, N, N) estimation-error variances (deterministic table)
    stats:   the moment tables used by the estimator
    """

    d_hat: np.ndarray
    err_var: np.ndarray
    stats: EffectiveChannelStats


def uplink_estimator_matrices(beta: np.ndarray, book: PilotBook, tau_u: int, rho_u: float):
    """Per-pair estimator matrices A_mk and statistics gamma_mk,i.

    A_mk = sqrt(tau_u rho_u) beta_mk (tau_u rho_u sum_i beta_mi
    Phi_ik^H Phi_ik + I_N)^{-1}; gamma is read off the same N x N inverse
    (the LN x LN form factors as that inverse Kronecker the identity).
    """
    m, k = beta.shape
    n = book.uplink.shape[2]
    a = np.empty((m, k, n, n), dtype=complex)
    gamma = np.empty((m, k, n))
    scale = tau_u * rho_u
    eye = np.eye(n)
    # cross[i, k] = Phi_i^H Phi_k, so grams[i, k] = Phi_ik^H Phi_ik (Hermitian PSD)
    grams = np.einsum('ikmn,ikmp->iknp', book.cross.conj(), book.cross)
    for mm in range(m):
        for kk in range(k):
            s = scale * np.einsum('i,inq->nq', beta[mm], grams[:, kk]) + eye
            inv = np.linalg.inv(s)
            a[mm, kk] = np.sqrt(scale) * beta[mm, kk] * inv
            gamma[mm, kk] = scale * beta[mm, kk] ** 2 * np.real(np.diag(inv))
    return a, gamma


def estimate_uplink(y_proj: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Apply the uplink estimator: G_hat_mk = Y_mk A_mk."""
    return np.einsum('...mkln,mknp->...mklp', y_proj, a, optimize=True)


def uplink_estimates(chans: ChannelSet, book: PilotBook, tau_u: int, rho_u: float,
                     rng: np.random.Generator) -> UplinkEstimates:
    """Full uplink training round: receive pilots, project, estimate."""
    from .channel import uplink_pilot_receive

    a, gamma = uplink_estimator_matrices(chans.beta, book, tau_u, rho_u)
    _, y_proj = uplink_pilot_receive(chans, book, rho_u, tau_u, rng)
    return UplinkEstimates(g_hat=estimate_uplink(y_proj, a), a=a, gamma=gamma)


def orthogonality_check(g: np.ndarray, g_hat: np.ndarray) -> dict:
    """Empirical correlation between the estimation error and the estimate.

    Used by the test suite to validate the MMSE orthogonality principle on
    matched realization sets.
    """
    err = g - g_hat
    num = np.mean(err * g_hat.conj())
    denom = np.sqrt(np.mean(np.abs(err) ** 2) * np.mean(np.abs(g_hat) ** 2))
    corr = 0.0 if denom == 0.0 else num / denom
    return {
        "corr": complex(corr),
        "error_energy": float(np.mean(np.abs(err) ** 2)),
        "estimate_energy": float(np.mean(np.abs(g_hat) ** 2)),
    }


def effective_channel_stats(eta: np.ndarray, beta: np.ndarray,
                            gamma: np.ndarray, num_ap_antennas: int) -> EffectiveChannelStats:
    """Moment tables of the effective channels.

    xi_own[k, i]      = L sum_m eta_mk beta_mk gamma_mk,i
    kappa[k, i]       = L sum_m sqrt(eta_mk) gamma_mk,i
    xi_cross[k, q, i] = L sum_m eta_mq beta_mk gamma_mq,i
    """
    if np.any(eta < 0):
        raise ValueError("power coefficients must be nonnegative")
    ell = num_ap_antennas
    xi_own = ell * np.einsum('mk,mk,mki->ki', eta, beta, gamma)
    kappa = ell * np.einsum('mk,mki->ki', np.sqrt(eta), gamma)
    xi_cross = ell * np.einsum('mq,mk,mqi->kqi', eta, beta, gamma)
    return EffectiveChannelStats(xi_own=xi_own, kappa=kappa, xi_cross=xi_cross)


def downlink_pilot_receive(d_true: np.ndarray, book: PilotBook, tau_d: int, rho_d: float,
                           rng: np.random.Generator) -> np.ndarray:
    """Downlink training round seen by each user.

    d_true has shape (..., K, K, N, N). Returns the projected observations
    y[..., k, k', i, j] obtained by correlating user k's received block
    Y_d,k = sqrt(tau_d rho_d) sum_k' D_kk' Phi_d,k'^H + W with each
    downlink pilot matrix.
    """
    scale = np.sqrt(tau_d * rho_d)
    y_full = scale * np.einsum('...kqij,qtj->...kit', d_true, book.downlink.conj(),
                               optimize=True)
    y_full = y_full + complex_normal(rng, y_full.shape)
    return np.einsum('...kit,qtj->...kqij', y_full, book.downlink, optimize=True)


def error_variance_table(stats: EffectiveChannelStats, tau_d: int, rho_d: float) -> np.ndarray:
    """MMSE estimation-error variances, shape (K, K, N, N).

    Diagonal own-user entries use the second moment xi + kappa^2; every
    other entry is zero-mean with variance xi indexed by the estimate's
    column antenna.
    """
    k, n = stats.xi_own.shape
    p = tau_d * rho_d
    var = np.empty((k, k, n, n))
    # generic branch: xi_cross[k, k', j] broadcast over rows i
    var[:] = stats.xi_cross[:, :, None, :] / (p * stats.xi_cross[:, :, None, :] + 1.0)
    own = stats.xi_own + stats.kappa ** 2
    diag_var = own / (p * own + 1.0)
    for kk in range(k):
        var[kk, kk, np.arange(n), np.arange(n)] = diag_var[kk]
    return var


def estimate_effective(y_proj_dl: np.ndarray, stats: EffectiveChannelStats,
                       tau_d: int, rho_d: float) -> EffectiveChannelEstimates:
    """Element-wise linear MMSE estimate of the effective channels.

    Diagonal own-user branch: (sqrt(p)(xi+kappa^2) y + kappa) / (p(xi+kappa^2)+1)
    with p = tau_d rho_d; all other entries: sqrt(p) xi y / (p xi + 1).
    """
    k, n = stats.xi_own.shape
    p = tau_d * rho_d
    sp = np.sqrt(p)

    gain = sp * stats.xi_cross[:, :, None, :] / (p * stats.xi_cross[:, :, None, :] + 1.0)
    d_hat = gain * y_proj_dl
    own = stats.xi_own + stats.kappa ** 2
    diag_gain = sp * own / (p * own + 1.0)
    diag_bias = stats.kappa / (p * own + 1.0)
    idx = np.arange(n)
    for kk in range(k):
        d_hat[..., kk, kk, idx, idx] = (
            diag_gain[kk] * y_proj_dl[..., kk, kk, idx, idx] + diag_bias[kk]
        )
    return EffectiveChannelEstimates(
        d_hat=d_hat,
        err_var=error_variance_table(stats, tau_d, rho_d),
        stats=stats,
    )
