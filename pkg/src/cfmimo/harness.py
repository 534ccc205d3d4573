# Monte Carlo experiment orchestration: drops x small-scale realizations,
# per-user SE pooling, CDF statistics, protocol/antenna selection, export.

import csv
import io
import json
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import channel, estimation, netgeom, powerctl, se, transmit

SCHEMA_VERSION = 1

PROTOCOLS = ("p1-closed", "p1-sic-mc", "p1-mmse", "p2-sic", "p2-mmse",
             "perfect-csi", "up-approx")

DEFAULT_DOWNLINK_POWER_W = 0.2
DEFAULT_UPLINK_PILOT_POWER_W = 0.1
DEFAULT_DOWNLINK_PILOT_POWER_W = 0.2


def normalized_snr(power_w: float, params: netgeom.PropagationParams) -> float:
    """Normalized transmit SNR: radiated power over thermal noise power."""
    return power_w / params.noise_power_w()


@dataclass
class SystemConfig:
    """Scalar parameters of one experiment."""

    num_aps: int
    num_users: int
    ap_antennas: int
    user_antennas: int
    tau_u: int | None = None
    tau_d: int | None = None
    tau_c: int = 300
    rho: float | None = None
    rho_u: float | None = None
    rho_d: float | None = None
    propagation: netgeom.PropagationParams = field(default_factory=netgeom.PropagationParams)
    n_drops: int = 200
    n_realizations: int = 2000
    seed: int = 0
    protocol: str = "p1-closed"
    pc_mode: str = "uniform"

    def __post_init__(self):
        if self.tau_u is None:
            self.tau_u = self.num_users * self.user_antennas
        if self.tau_d is None:
            self.tau_d = self.num_users * self.user_antennas
        if self.rho is None:
            self.rho = normalized_snr(DEFAULT_DOWNLINK_POWER_W, self.propagation)
        if self.rho_u is None:
            self.rho_u = normalized_snr(DEFAULT_UPLINK_PILOT_POWER_W, self.propagation)
        if self.rho_d is None:
            self.rho_d = normalized_snr(DEFAULT_DOWNLINK_PILOT_POWER_W, self.propagation)
        self.validate()

    def validate(self):
        if min(self.num_aps, self.num_users, self.ap_antennas, self.user_antennas) < 1:
            raise ValueError("M, K, L, N must all be positive")
        if self.tau_u < self.user_antennas:
            raise ValueError("tau_u must be at least N")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.pc_mode not in ("uniform", "maxmin"):
            raise ValueError(f"unknown pc_mode {self.pc_mode!r}")
        if self.protocol.startswith("p1"):
            if self.tau_u >= self.tau_c:
                raise ValueError("tau_u must be smaller than tau_c")
        elif self.tau_u + self.tau_d >= self.tau_c:
            raise ValueError("tau_u + tau_d must be smaller than tau_c")
        if min(self.rho, self.rho_u, self.rho_d) <= 0:
            raise ValueError("SNRs must be positive")

    @property
    def prelog(self) -> float:
        if self.protocol.startswith("p1"):
            return 1.0 - self.tau_u / self.tau_c
        return 1.0 - (self.tau_u + self.tau_d) / self.tau_c


@dataclass
class CdfSummary:
    """Pooled per-user SE samples with exact empirical percentiles."""

    samples: np.ndarray  # ascending

    def __post_init__(self):
        samples = np.sort(np.asarray(self.samples, dtype=float))
        if samples.size == 0:
            raise ValueError("empty sample pool")
        self.samples = samples

    def percentile(self, q: float) -> float:
        n = self.samples.size
        idx = max(int(np.ceil(q * n)) - 1, 0)
        return float(self.samples[idx])

    @property
    def likely95(self) -> float:
        return self.percentile(0.05)

    @property
    def median(self) -> float:
        return self.percentile(0.5)

    def cdf_at(self, x: float) -> float:
        return float(np.searchsorted(self.samples, x, side="right") / self.samples.size)


def cdf_summary(samples) -> CdfSummary:
    return CdfSummary(np.asarray(samples, dtype=float).ravel())


@dataclass
class DropRecord:
    drop_id: int
    status: str                  # "ok" or "skipped"
    se_per_user: np.ndarray | None
    detail: str = ""


def _drop_rng(seed: int, drop_id: int) -> np.random.Generator:
    """Per-drop stream derived by counter-based splitting from the master seed."""
    return np.random.default_rng(np.random.SeedSequence((seed, drop_id)))


def _power_allocation(config: SystemConfig, beta, a, gamma):
    if config.pc_mode == "uniform":
        return transmit.uniform_power(beta, a, config.tau_u, config.rho_u,
                                      config.ap_antennas)
    problem = powerctl.MaxMinProblem(
        beta=beta,
        gamma=powerctl.gamma_orthogonal(beta, config.tau_u, config.rho_u),
        rho=config.rho,
        num_ap_antennas=config.ap_antennas,
        num_user_antennas=config.user_antennas,
    )
    alloc, _, _ = powerctl.maxmin_bisection(problem)
    if config.protocol.startswith(("p2", "perfect", "up")):
        alloc = powerctl.reuse_for_p2(alloc)
    return alloc


def _mc_batches(n_realizations: int, batch: int = 250):
    done = 0
    while done < n_realizations:
        size = min(batch, n_realizations - done)
        done += size
        yield size


def _p1_monte_carlo(config, ls, book, a, eta, rng):
    """Moment-based Monte Carlo of the statistical-CSI SE (with batch stderr)."""
    k, n = config.num_users, config.user_antennas
    batch_means = []
    batch_seconds = []
    for size in _mc_batches(config.n_realizations):
        chans = channel.draw_channels(ls, config.ap_antennas, n, rng, n_realizations=size)
        up = estimation.uplink_estimates(chans, book, config.tau_u, config.rho_u, rng)
        d_true = transmit.effective_channels(chans.g, up.g_hat, eta)
        batch_means.append(np.einsum('rkkij->kij', d_true) / size)
        gram = np.einsum('rkqij,rkqlj->kil', d_true, d_true.conj(),
                         optimize=True) / size
        batch_seconds.append(gram)
    weights = np.array(list(_mc_batches(config.n_realizations)), dtype=float)
    weights /= weights.sum()
    mean = np.einsum('b,bkij->kij', weights, np.array(batch_means))
    second = np.einsum('b,bkij->kij', weights, np.array(batch_seconds))
    se_users = np.array([
        se.se_generic(mean[kk], second[kk], config.prelog, config.rho)
        for kk in range(k)])
    per_batch = np.array([
        [se.se_generic(bm[kk], bs[kk], config.prelog, config.rho) for kk in range(k)]
        for bm, bs in zip(batch_means, batch_seconds)])
    stderr = per_batch.std(axis=0, ddof=1) / np.sqrt(len(batch_means)) \
        if len(batch_means) > 1 else np.zeros(k)
    return se_users, stderr


def _p2_monte_carlo(config, ls, book, a, gamma, eta, rng, want: str):
    """Realization-averaged SE for the downlink-pilot family."""
    n = config.user_antennas
    stats = estimation.effective_channel_stats(eta, ls.beta, gamma, config.ap_antennas)
    err_var = estimation.error_variance_table(stats, config.tau_d, config.rho_d)
    dvar_rowsum = err_var.sum(axis=-1)
    total = np.zeros(config.num_users)
    count = 0
    for size in _mc_batches(config.n_realizations):
        chans = channel.draw_channels(ls, config.ap_antennas, n, rng, n_realizations=size)
        up = estimation.uplink_estimates(chans, book, config.tau_u, config.rho_u, rng)
        d_true = transmit.effective_channels(chans.g, up.g_hat, eta)
        if want == "perfect-csi":
            vals = se.se_perfect_csi(d_true, config.prelog, config.rho)
        else:
            y_dl = estimation.downlink_pilot_receive(d_true, book, config.tau_d,
                                                     config.rho_d, rng)
            eff = estimation.estimate_effective(y_dl, stats, config.tau_d, config.rho_d)
            if want == "p2-sic":
                vals = se.se_p2_sic(eff.d_hat, dvar_rowsum, config.prelog, config.rho)
            else:
                vals = se.se_linear_mmse_p2(eff.d_hat, dvar_rowsum, config.prelog,
                                            config.rho)
        total += vals.sum(axis=0)
        count += size
    return total / count


def run_drop(config: SystemConfig, drop_id: int) -> DropRecord:
    """Evaluate the configured protocol on one network drop."""
    rng = _drop_rng(config.seed, drop_id)
    try:
        ls = netgeom.draw_drop(config.num_aps, config.num_users,
                               config.propagation, rng)
        book = channel.build_pilot_book(config.tau_u, config.tau_d,
                                        config.num_users, config.user_antennas, rng)
        a, gamma = estimation.uplink_estimator_matrices(ls.beta, book,
                                                        config.tau_u, config.rho_u)
        alloc = _power_allocation(config, ls.beta, a, gamma)
        eta = alloc.eta

        if config.protocol == "p1-closed":
            vals, _ = se.closed_form_p1(ls.beta, book.cross, a, eta, config.tau_u,
                                        config.rho_u, config.rho,
                                        config.ap_antennas, config.prelog)
        elif config.protocol == "p1-mmse":
            pieces = se.closed_form_pieces(ls.beta, book.cross, a, eta, config.tau_u,
                                           config.rho_u, config.rho, config.ap_antennas)
            vals = se.se_linear_mmse_p1(pieces, config.prelog, config.rho)
        elif config.protocol == "p1-sic-mc":
            vals, _ = _p1_monte_carlo(config, ls, book, a, eta, rng)
        elif config.protocol == "up-approx":
            if config.ap_antennas != 1 or config.user_antennas != 1:
                raise ValueError("up-approx requires L = N = 1")
            vals = se.se_up_approx(ls.beta,
                                   powerctl.gamma_orthogonal(ls.beta, config.tau_u,
                                                             config.rho_u),
                                   np.sqrt(eta), config.rho, config.prelog)
        else:
            vals = _p2_monte_carlo(config, ls, book, a, gamma, eta, rng,
                                   config.protocol)
        return DropRecord(drop_id=drop_id, status="ok",
                          se_per_user=np.asarray(vals, dtype=float))
    except (powerctl.SolverFailure, np.linalg.LinAlgError) as exc:
        return DropRecord(drop_id=drop_id, status="skipped", se_per_user=None,
                          detail=str(exc))


def _worker_count() -> int:
    value = os.environ.get("CFMIMO_WORKERS", "1")
    try:
        return max(int(value), 1)
    except ValueError:
        return 1


def run_experiment(config: SystemConfig):
    """Run all drops; returns (CdfSummary, list[DropRecord]).

    Results depend only on (seed, config): per-drop random streams are
    split from the master seed, so the worker count never changes outputs.
    """
    config.validate()
    workers = _worker_count()
    drop_ids = list(range(config.n_drops))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_drop, [config] * len(drop_ids), drop_ids))
    else:
        records = [run_drop(config, d) for d in drop_ids]
    pool_samples = [r.se_per_user for r in records if r.status == "ok"]
    if not pool_samples:
        raise RuntimeError("every drop failed; see the drop records")
    return cdf_summary(np.concatenate(pool_samples)), records


def framework_select(config: SystemConfig, n_max: int):
    """Pick the (protocol, active antenna count) pair with the best
    95%-likely SE, evaluating both protocols for n = 1..n_max on the
    same drops. Ties break toward fewer active antennas.
    """
    if n_max > config.user_antennas:
        raise ValueError("n_max cannot exceed the physical antenna count")
    best = None
    table = []
    for n in range(1, n_max + 1):
        for protocol in ("p1-closed", "p2-sic"):
            sub = replace(config, user_antennas=n, tau_u=None, tau_d=None,
                          protocol=protocol)
            summary, _ = run_experiment(sub)
            table.append({"protocol": protocol, "n": n, "likely95": summary.likely95})
            if best is None or summary.likely95 > best["likely95"]:
                best = table[-1]
    return {"selected": best, "table": table}


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

CSV_FIELDS = ("drop_id", "user_id", "protocol", "pc_mode", "se_bits_per_hz")


def results_csv(config: SystemConfig, records) -> str:
    """One row per (drop, user); floats carry 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for rec in records:
        if rec.status != "ok":
            continue
        for user, value in enumerate(rec.se_per_user):
            writer.writerow([rec.drop_id, user, config.protocol, config.pc_mode,
                             f"{value:.17g}"])
    return buf.getvalue()


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def summary_json(config: SystemConfig, summary: CdfSummary, records) -> str:
    skips = [{"drop_id": r.drop_id, "detail": r.detail}
             for r in records if r.status != "ok"]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "likely95": summary.likely95,
        "median": summary.median,
        "sample_count": int(summary.samples.size),
        "seed": config.seed,
        "skipped_drops": skips,
        "config": _config_dict(config),
        "git": _git_describe(),
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def _config_dict(config: SystemConfig) -> dict:
    out = asdict(config)
    out["propagation"] = asdict(config.propagation)
    return out


def config_from_dict(data: dict) -> SystemConfig:
    """Build a config from a flat key-value document (schema_version aware)."""
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version}")
    prop_keys = {f for f in netgeom.PropagationParams.__dataclass_fields__}
    prop_data = data.pop("propagation", {})
    for key in list(data):
        if key in prop_keys:
            prop_data[key] = data.pop(key)
    params = netgeom.PropagationParams(**prop_data)
    return SystemConfig(propagation=params, **data)
