# Network geometry and large-scale fading: AP/user placement on a torus,
# three-slope path loss, correlated log-normal shadowing.

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PropagationParams:
    """Propagation constants for the large-scale fading model.

    Defaults reproduce the usual 1.9 GHz suburban setup: three-slope path
    loss with breakpoints at 10 m / 50 m, 8 dB shadowing beyond the far
    breakpoint with 100 m decorrelation distance, and a 50/50 mix between
    the AP-side and user-side shadowing components.
    """

    carrier_freq_ghz: float = 1.9
    area_km: float = 1.0
    d0_m: float = 10.0
    d1_m: float = 50.0
    ap_height_m: float = 15.0
    user_height_m: float = 1.65
    shadow_sigma_db: float = 8.0
    shadow_decorr_m: float = 100.0
    shadow_mix_delta: float = 0.5
    noise_figure_db: float = 9.0
    bandwidth_hz: float = 20e6

    def __post_init__(self):
        if not self.d0_m < self.d1_m:
            raise ValueError("d0_m must be smaller than d1_m")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be nonnegative")
        if not 0.0 <= self.shadow_mix_delta <= 1.0:
            raise ValueError("shadow_mix_delta must lie in [0, 1]")

    @property
    def area_m(self) -> float:
        return self.area_km * 1000.0

    def noise_power_w(self) -> float:
        """Thermal noise power in watts (kB * T0 * bandwidth * noise figure)."""
        boltzmann = 1.380649e-23
        t0 = 290.0
        return boltzmann * t0 * self.bandwidth_hz * 10 ** (self.noise_figure_db / 10)


@dataclass
class LargeScaleState:
    """One network drop: positions in meters and linear-scale gains."""

    ap_positions: np.ndarray    # (M, 2)
    user_positions: np.ndarray  # (K, 2)
    beta: np.ndarray            # (M, K), linear scale, strictly positive

    @property
    def num_aps(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]


def wrap_distance(a, b, area: float):
    """Torus distance between points ``a`` and ``b`` on a square of side ``area``.

    Minimum Euclidean distance over the nine translates of ``b``; supports
    broadcasting over leading axes (last axis is the coordinate pair).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = np.abs(a - b)
    diff = np.minimum(diff, area - diff)
    return np.sqrt(np.sum(diff**2, axis=-1))


def cross_distances(points_a: np.ndarray, points_b: np.ndarray, area: float) -> np.ndarray:
    """All pairwise wrap-around distances, shape (len(a), len(b))."""
    return wrap_distance(points_a[:, None, :], points_b[None, :, :], area)


def path_loss_db(d, params: PropagationParams):
    """Three-slope path-loss gain in dB (nonpositive far from the AP).

    Slopes of 35 / 15 / 0 dB per decade beyond d1, between d0 and d1, and
    below d0 respectively; continuous at both breakpoints. The far-field
    constant is Hata-COST231 style with the configured antenna heights.
    """
    d = np.asarray(d, dtype=float)
    f_mhz = params.carrier_freq_ghz * 1000.0
    h_ap = params.ap_height_m
    h_u = params.user_height_m
    const = (
        46.3
        + 33.9 * np.log10(f_mhz)
        - 13.82 * np.log10(h_ap)
        - (1.1 * np.log10(f_mhz) - 0.7) * h_u
        + (1.56 * np.log10(f_mhz) - 0.8)
    )
    d_km = np.maximum(d, 1e-12) / 1000.0
    d0_km = params.d0_m / 1000.0
    d1_km = params.d1_m / 1000.0

    far = -const - 35.0 * np.log10(d_km)
    # continuity at d1: -const - 35 log d1 = -const - 20 log d1 - 15 log d1
    mid = -const - 20.0 * np.log10(d1_km) - 15.0 * np.log10(d_km)
    near = -const - 20.0 * np.log10(d1_km) - 15.0 * np.log10(d0_km)
    out = np.where(d_km > d1_km, far, np.where(d_km > d0_km, mid, near))
    return out if out.ndim else float(out)


def draw_shadowing(
    ap_positions: np.ndarray,
    user_positions: np.ndarray,
    params: PropagationParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Correlated log-normal shadowing in dB, shape (M, K).

    Each link gets sqrt(delta)*a_m + sqrt(1-delta)*b_k where the AP field a
    and the user field b are unit-variance Gaussians with exp(-d/decorr)
    spatial correlation, scaled by shadow_sigma_db. Marginals are
    N(0, shadow_sigma_db^2).
    """
    m = ap_positions.shape[0]
    k = user_positions.shape[0]
    sigma = params.shadow_sigma_db
    if sigma == 0.0:
        return np.zeros((m, k))
    delta = params.shadow_mix_delta
    area = params.area_m

    def correlated_field(points):
        dist = cross_distances(points, points, area)
        corr = np.exp(-dist / params.shadow_decorr_m)
        # jitter keeps the Cholesky factor well defined for colocated points
        chol = np.linalg.cholesky(corr + 1e-10 * np.eye(len(points)))
        return chol @ rng.standard_normal(len(points))

    a = correlated_field(ap_positions)
    b = correlated_field(user_positions)
    z = np.sqrt(delta) * a[:, None] + np.sqrt(1.0 - delta) * b[None, :]
    return sigma * z


def beta_from_positions(
    ap_positions: np.ndarray,
    user_positions: np.ndarray,
    params: PropagationParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Linear-scale large-scale gains for given positions (wrap distances)."""
    dist = cross_distances(ap_positions, user_positions, params.area_m)
    gain_db = path_loss_db(dist, params)
    shadow_db = draw_shadowing(ap_positions, user_positions, params, rng)
    # shadowing only applies in the far-field slope regime
    gain_db = gain_db + np.where(dist > params.d1_m, shadow_db, 0.0)
    return 10 ** (gain_db / 10.0)


def draw_drop(num_aps: int, num_users: int, params: PropagationParams,
              rng: np.random.Generator) -> LargeScaleState:
    """Draw one network drop with uniform AP/user placement on the square."""
    if num_aps < 1 or num_users < 1:
        raise ValueError("need at least one AP and one user")
    area = params.area_m
    ap_positions = rng.uniform(0.0, area, size=(num_aps, 2))
    user_positions = rng.uniform(0.0, area, size=(num_users, 2))
    beta = beta_from_positions(ap_positions, user_positions, params, rng)
    return LargeScaleState(ap_positions, user_positions, beta)
