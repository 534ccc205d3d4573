# Small-scale Rayleigh channel realizations and pilot books for the
# uplink / downlink training phases.

from dataclasses import dataclass

import numpy as np

from .netgeom import LargeScaleState


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """I.i.d. circularly-symmetric complex Gaussian with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass
class ChannelSet:
    """Channel realizations G = sqrt(beta) * H, shape (..., M, K, L, N).

    Leading axes (if any) index independent Monte Carlo realizations.
    """

    g: np.ndarray
    beta: np.ndarray  # (M, K) used to scale the draw


@dataclass
class PilotBook:
    """Uplink and downlink pilot matrices plus cached uplink Gram matrices.

    uplink:   (K, tau_u, N), orthonormal columns within each user
    downlink: (K, tau_d, N), fully orthogonal across all users
    cross:    (K, K, N, N) with cross[i, k] = uplink[i]^H uplink[k]
    """

    uplink: np.ndarray
    downlink: np.ndarray
    cross: np.ndarray

    @property
    def fully_orthogonal(self) -> bool:
        """True when the uplink book is mutually orthogonal across users."""
        k, _, n = self.uplink.shape
        eye = np.einsum('ik,nm->iknm', np.eye(k), np.eye(n))
        return bool(np.allclose(self.cross, eye, atol=1e-12))


def draw_channels(ls: LargeScaleState, num_ap_antennas: int, num_user_antennas: int,
                  rng: np.random.Generator, n_realizations: int | None = None) -> ChannelSet:
    """Draw i.i.d. Rayleigh realizations scaled by the drop's large-scale gains."""
    if num_ap_antennas < 1 or num_user_antennas < 1:
        raise ValueError("antenna counts must be positive")
    m, k = ls.beta.shape
    shape = (m, k, num_ap_antennas, num_user_antennas)
    if n_realizations is not None:
        shape = (n_realizations,) + shape
    h = complex_normal(rng, shape)
    g = np.sqrt(ls.beta)[..., :, :, None, None] * h
    return ChannelSet(g=g, beta=ls.beta)


def _random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(complex_normal(rng, (dim, dim)))
    # fix the phase ambiguity so the book is deterministic given the seed
    return q * (np.diag(r) / np.abs(np.diag(r)))


def build_pilot_book(tau_u: int, tau_d: int, num_users: int, num_user_antennas: int,
                     rng: np.random.Generator) -> PilotBook:
    """Assign pilot matrices to all users.

    Uplink: user k gets N contiguous columns of a random tau_u x tau_u
    unitary, assigned round-robin, so intra-user orthonormality always holds
    and the book is mutually orthogonal across users whenever tau_u >= K*N.
    Downlink: fully orthogonal across users, which requires tau_d >= K*N.
    """
    k, n = num_users, num_user_antennas
    if tau_u < n:
        raise ValueError("tau_u must be at least N for intra-user orthogonality")
    if tau_d < k * n:
        raise ValueError("tau_d must be at least K*N for downlink orthogonality")

    base_u = _random_unitary(tau_u, rng)
    uplink = np.empty((k, tau_u, n), dtype=complex)
    for user in range(k):
        cols = [(user * n + j) % tau_u for j in range(n)]
        uplink[user] = base_u[:, cols]

    base_d = _random_unitary(tau_d, rng)
    downlink = np.empty((k, tau_d, n), dtype=complex)
    for user in range(k):
        downlink[user] = base_d[:, user * n:(user + 1) * n]

    cross = np.einsum('itn,ktm->iknm', uplink.conj(), uplink)
    return PilotBook(uplink=uplink, downlink=downlink, cross=cross)


def uplink_pilot_receive(chans: ChannelSet, book: PilotBook, rho_u: float, tau_u: int,
                         rng: np.random.Generator):
    """Received uplink pilot blocks and their per-user projections.

    Returns (y_full, y_proj) with shapes (..., M, L, tau_u) and
    (..., M, K, L, N): y_full = sum_k sqrt(tau_u rho_u) G_mk Phi_k^H + W,
    y_proj[m, k] = y_full[m] Phi_k.
    """
    g = chans.g
    scale = np.sqrt(tau_u * rho_u)
    y_full = scale * np.einsum('...mkln,ktn->...mlt', g, book.uplink.conj(),
                               optimize=True)
    y_full = y_full + complex_normal(rng, y_full.shape)
    y_proj = np.einsum('...mlt,ktn->...mkln', y_full, book.uplink, optimize=True)
    return y_full, y_proj
