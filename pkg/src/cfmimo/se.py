# Spectral-efficiency formulas: generic side-information bound, the
# protocol-1 closed form, protocol-2 Monte Carlo SE, linear-MMSE variants,
# the perfect-CSI bound, and the Gaussian-limit moment tables.

from dataclasses import dataclass

import numpy as np

PD_EIG_TOL = 1e-10


def hermitize(x: np.ndarray) -> np.ndarray:
    """Symmetrize (X + X^H)/2 to suppress accumulated roundoff."""
    return 0.5 * (x + np.conj(np.swapaxes(x, -1, -2)))


def _check_pd(psi: np.ndarray, what: str) -> None:
    eigs = np.linalg.eigvalsh(psi)
    if np.min(eigs) < -PD_EIG_TOL:
        raise ValueError(f"{what} is not positive definite (min eig {np.min(eigs):.3e})")


def _logdet(x: np.ndarray) -> np.ndarray:
    sign, val = np.linalg.slogdet(x)
    return val / np.log(2.0)


def _logdet_capacity(mean: np.ndarray, psi: np.ndarray, rho: float) -> np.ndarray:
    """log2|I + rho mean^H psi^{-1} mean| for batched (..., N, N) inputs."""
    n = mean.shape[-1]
    psi = hermitize(psi)
    solved = np.linalg.solve(psi, mean)
    inner = rho * np.einsum('...ij,...ik->...jk', mean.conj(), solved)
    return _logdet(np.eye(n) + hermitize(inner))


def se_generic(cond_mean: np.ndarray, cond_second_moment_sum: np.ndarray,
               prelog: float, rho: float) -> float:
    """SE kernel with arbitrary side information.

    cond_mean is the conditional mean of the own effective channel and
    cond_second_moment_sum the conditional sum of D_kk' D_kk'^H over all
    users; both N x N. Every protocol-specific SE is this kernel with the
    appropriate conditioning.
    """
    n = cond_mean.shape[-1]
    psi = np.eye(n) + rho * cond_second_moment_sum \
        - rho * cond_mean @ np.conj(cond_mean.T)
    psi = hermitize(psi)
    _check_pd(psi, "interference-plus-noise covariance")
    return float(prelog * _logdet_capacity(cond_mean, psi, rho))


@dataclass
class ClosedFormPieces:
    """Term-level breakdown of the statistical-CSI closed form.

    d_bar:  (K, N, N) mean effective channels
    psi_b:  (K, N, N) interference-plus-noise covariances
    b:      (K, M, K, N, N) pilot-overlap matrices B for (k, m, k')
    c_diag: (K, M, K, N) diagonals of the intra-AP coupling matrices C
    """

    d_bar: np.ndarray
    psi_b: np.ndarray
    b: np.ndarray
    c_diag: np.ndarray


def mean_effective_channel(beta, a, eta, tau_u, rho_u, num_ap_antennas):
    """D_bar_kk = L sqrt(tau_u rho_u) sum_m sqrt(eta_mk) beta_mk A_mk, (K, N, N)."""
    return num_ap_antennas * np.sqrt(tau_u * rho_u) * np.einsum(
        'mk,mk,mkij->kij', np.sqrt(eta), beta, a)


def pilot_overlap_b(cross, a):
    """B[k, m, k'] = Phi_kk' A_mk' A_mk'^H Phi_kk'^H, shape (K, M, K, N, N)."""
    aa = np.einsum('mqij,mqkj->mqik', a, a.conj())
    return np.einsum('kqij,mqjl,kqnl->kmqin', cross, aa, cross.conj())


def coupling_c_diag(b, num_ap_antennas):
    """Diagonals of C: c_ii = sum_n b_nn + L b_ii, shape (K, M, K, N)."""
    b_diag = np.real(np.einsum('kmqii->kmqi', b))
    return b_diag.sum(axis=-1, keepdims=True) + num_ap_antennas * b_diag


def closed_form_pieces(beta, cross, a, eta, tau_u, rho_u, rho,
                       num_ap_antennas) -> ClosedFormPieces:
    """Assemble the statistical-CSI covariance term by term.

    The four contributions (intra-AP coupling, pilot-contamination trace,
    cross-AP coherent term, noise trace) are built separately so each can
    be validated against Monte Carlo in isolation.
    """
    m, k = beta.shape
    n = a.shape[-1]
    ell = num_ap_antennas
    tup = tau_u * rho_u

    sqrt_eta = np.sqrt(eta)
    aa = np.einsum('mqij,mqkj->mqik', a, a.conj())          # (M, K, N, N)
    b = pilot_overlap_b(cross, a)                           # (K, M, K, N, N)
    c_diag = coupling_c_diag(b, ell)                        # (K, M, K, N)

    d_bar = mean_effective_channel(beta, a, eta, tau_u, rho_u, ell)

    # intra-AP coupling: L tau_u rho_u rho sum_m sum_k' eta_mk' beta_mk^2 C_mkk'
    t12 = ell * tup * rho * np.einsum('mq,mk,kmqi->ki', eta, beta ** 2, c_diag)

    # pilot contamination: sum over i != k of beta_mi Tr(Phi_ik' A A^H Phi_ik'^H),
    # computed as the full sum over i minus the i = k term
    tr_all = np.real(np.einsum('imqjj->imq', b))            # (i, m, k') traces
    beta_sum = np.einsum('mi,imq->mq', beta, tr_all)
    t11 = ell * tup * rho * (
        np.einsum('mq,mk,mq->k', eta, beta, beta_sum)
        - np.einsum('mq,mk,mk,kmq->k', eta, beta, beta, tr_all)
    )

    # noise trace: L rho sum_m sum_k' beta_mk eta_mk' Tr(A A^H)
    tr_aa = np.real(np.einsum('mqii->mq', aa))
    t13 = ell * rho * np.einsum('mq,mk,mq->k', eta, beta, tr_aa)

    # coherent cross-AP term over n != m: full double sum minus its diagonal
    s = np.einsum('kqij,mq,mk,mqjl->kqil', cross, sqrt_eta, beta, a)  # sum_m inside Phi
    t2_full = np.einsum('kqil,kqnl->kin', s, s.conj())
    t2_diag = np.einsum('mq,mk,kmqin->kin', eta, beta ** 2, b)
    t2 = ell ** 2 * tup * rho * (t2_full - t2_diag)

    eye = np.eye(n)
    psi_b = (
        eye[None, :, :]
        + (t11 + t13)[:, None, None] * eye[None, :, :]
        + np.einsum('ki,ij->kij', t12, eye)
        + t2
        - rho * np.einsum('kij,klj->kil', d_bar, d_bar.conj())
    )
    return ClosedFormPieces(d_bar=d_bar, psi_b=hermitize(psi_b), b=b, c_diag=c_diag)


def closed_form_p1(beta, cross, a, eta, tau_u, rho_u, rho, num_ap_antennas,
                   prelog) -> tuple[np.ndarray, ClosedFormPieces]:
    """Per-user statistical-CSI SE in closed form (no downlink pilots)."""
    pieces = closed_form_pieces(beta, cross, a, eta, tau_u, rho_u, rho, num_ap_antennas)
    se = prelog * _logdet_capacity(pieces.d_bar, pieces.psi_b, rho)
    return np.asarray(se, dtype=float), pieces


def interference_covariance_p2(d_hat: np.ndarray, dvar_rowsum: np.ndarray,
                               rho: float) -> np.ndarray:
    """Psi_c' per user: rho sum_{k' != k} D_hat D_hat^H + rho sum_k' Dvar + I.

    d_hat: (..., K, K, N, N); dvar_rowsum: (K, K, N) diagonal entries of the
    error-variance matrices. Returns (..., K, N, N).
    """
    n = d_hat.shape[-1]
    gram = np.einsum('...kqij,...kqlj->...kqil', d_hat, d_hat.conj())
    total = gram.sum(axis=-3)
    own = np.einsum('...kkil->...kil', gram)
    var_diag = dvar_rowsum.sum(axis=1)                       # (K, N)
    return (np.eye(n) + rho * (total - own)
            + rho * np.einsum('ki,ij->kij', var_diag, np.eye(n)))


def se_p2_sic(d_hat: np.ndarray, dvar_rowsum: np.ndarray, prelog: float,
              rho: float) -> np.ndarray:
    """Per-realization SIC SE under estimated CSI, shape (..., K)."""
    psi = interference_covariance_p2(d_hat, dvar_rowsum, rho)
    own = np.einsum('...kkij->...kij', d_hat)
    return prelog * _logdet_capacity(own, psi, rho)


def se_perfect_csi(d_true: np.ndarray, prelog: float, rho: float) -> np.ndarray:
    """Per-realization SE with perfect CSI (upper bound), shape (..., K)."""
    k, n = d_true.shape[-3], d_true.shape[-1]
    zero_var = np.zeros((k, k, n))
    psi = interference_covariance_p2(d_true, zero_var, rho)
    own = np.einsum('...kkij->...kij', d_true)
    return prelog * _logdet_capacity(own, psi, rho)


def _per_stream_mmse_se(mean: np.ndarray, psi: np.ndarray, prelog: float,
                        rho: float) -> np.ndarray:
    """Linear-MMSE per-stream SE summed over streams.

    SINR_n = q_nn / (1 - q_nn) with Q = rho mean^H (psi + rho mean mean^H)^{-1}
    mean (Sherman-Morrison form of the per-stream MMSE SINR).
    """
    cov = hermitize(psi + rho * np.einsum('...ij,...lj->...il', mean, mean.conj()))
    solved = np.linalg.solve(cov, mean)
    q = rho * np.real(np.einsum('...in,...in->...n', mean.conj(), solved))
    q = np.clip(q, 0.0, 1.0 - 1e-15)
    return prelog * np.sum(np.log2(1.0 + q / (1.0 - q)), axis=-1)


def se_linear_mmse_p1(pieces: ClosedFormPieces, prelog: float, rho: float,
                      printed_form: bool = False) -> np.ndarray:
    """Per-user linear-MMSE SE under statistical CSI.

    The default uses the standard MMSE-filter covariance psi_b + rho
    d_bar d_bar^H; printed_form=True switches to the literal
    (psi_b)^{-1} + d_bar d_bar^H variant kept for comparison only.
    """
    if not printed_form:
        return _per_stream_mmse_se(pieces.d_bar, pieces.psi_b, prelog, rho)
    out = np.empty(pieces.d_bar.shape[0])
    for k in range(pieces.d_bar.shape[0]):
        psi_alt = np.linalg.inv(pieces.psi_b[k]) \
            + pieces.d_bar[k] @ np.conj(pieces.d_bar[k].T)
        se_k = 0.0
        for n in range(pieces.d_bar.shape[-1]):
            dn = pieces.d_bar[k][:, n]
            f = psi_alt @ dn
            num = np.abs(np.conj(f) @ dn) ** 2
            den = np.real(np.conj(f) @ psi_alt @ f) - num
            se_k += np.log2(1.0 + num / den)
        out[k] = prelog * se_k
    return out


def se_linear_mmse_p2(d_hat: np.ndarray, dvar_rowsum: np.ndarray, prelog: float,
                      rho: float) -> np.ndarray:
    """Per-realization linear-MMSE SE under estimated CSI, shape (..., K)."""
    psi = interference_covariance_p2(d_hat, dvar_rowsum, rho)
    own = np.einsum('...kkij->...kij', d_hat)
    return _per_stream_mmse_se(own, psi, prelog, rho)


def se_up_approx(beta: np.ndarray, gamma: np.ndarray, varsigma: np.ndarray,
                 rho: float, prelog: float) -> np.ndarray:
    """Single-antenna perfect-CSI SE approximation, shape (K,).

    Valid for L = N = 1 with orthogonal pilots; gamma and varsigma are
    (M, K) scalar tables.
    """
    if beta.shape != gamma.shape or beta.shape != varsigma.shape:
        raise ValueError("beta, gamma, varsigma must share the (M, K) shape")
    coh = np.einsum('mk,mk->k', gamma, varsigma)
    own = np.einsum('mk,mk,mk->k', beta, gamma, varsigma ** 2)
    load = gamma * varsigma ** 2                              # (M, K)
    cross = np.einsum('mk,mq->kq', beta, load)
    den = cross.sum(axis=1) - np.einsum('kk->k', cross) + 1.0 / rho
    return prelog * np.log2(1.0 + (coh ** 2 + own) / den)


def lemma3_params(eta: np.ndarray, beta: np.ndarray, gamma: np.ndarray,
                  num_ap_antennas: int) -> dict:
    """Gaussian-limit parameters of the effective-channel entries.

    Returns the three entry classes: own-user off-diagonal CN(0, xi_own[j]),
    own-user diagonal real N(diag_mean[i], diag_var[i]), cross-user
    CN(0, xi_cross[k, k', j]).
    """
    ell = num_ap_antennas
    xi_own = ell * np.einsum('mk,mk,mkj->kj', eta, beta, gamma)
    diag_mean = ell * np.einsum('mk,mki->ki', np.sqrt(eta), gamma)
    diag_var = ell * np.einsum('mk,mki->ki', eta, gamma ** 2)
    xi_cross = ell * np.einsum('mq,mk,mqj->kqj', eta, beta, gamma)
    return {
        "offdiag_var": xi_own,
        "diag_mean": diag_mean,
        "diag_var": diag_var,
        "cross_var": xi_cross,
    }


def lemma4_oracle(c_matrix: np.ndarray, column_covariances: np.ndarray) -> np.ndarray:
    """Analytic E{B^H C B} for B = Y^H X with independent Gaussian columns.

    column_covariances[k] is E{b_k b_k^H} (N x N, diagonal for i.i.d.
    inputs); the result is diagonal with entries Tr(C E{b_k b_k^H}).
    """
    n = c_matrix.shape[0]
    out = np.zeros((n, n), dtype=complex)
    for k in range(n):
        out[k, k] = np.trace(c_matrix @ column_covariances[k])
    return out


def lemma4_iid_covariances(num_rows: int, n: int) -> np.ndarray:
    """E{b_k b_k^H} = M I_N for i.i.d. standard complex Gaussian X, Y."""
    return np.broadcast_to(num_rows * np.eye(n), (n, n, n)).copy()
