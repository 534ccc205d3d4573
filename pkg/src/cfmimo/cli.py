# Command-line entry points: run experiments, sweep a parameter, solve
# power control for a stored drop, pick protocol/antenna count, and run a
# quick self-check battery.

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import estimation, harness, netgeom, powerctl, se
from .channel import build_pilot_book


def _load_config(args) -> harness.SystemConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    overrides = {
        "num_aps": args.num_aps,
        "num_users": args.num_users,
        "ap_antennas": args.ap_antennas,
        "user_antennas": args.user_antennas,
        "tau_u": args.tau_u,
        "tau_d": args.tau_d,
        "tau_c": args.tau_c,
        "rho": args.rho,
        "rho_u": args.rho_u,
        "rho_d": args.rho_d,
        "n_drops": args.drops,
        "n_realizations": args.realizations,
        "seed": args.seed,
        "protocol": args.protocol,
        "pc_mode": args.pc_mode,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return harness.config_from_dict(data)


def _add_config_flags(parser):
    parser.add_argument("--config", help="JSON config file (flat key-value)")
    parser.add_argument("--num-aps", "-M", dest="num_aps", type=int)
    parser.add_argument("--num-users", "-K", dest="num_users", type=int)
    parser.add_argument("--ap-antennas", "-L", dest="ap_antennas", type=int)
    parser.add_argument("--user-antennas", "-N", dest="user_antennas", type=int)
    parser.add_argument("--tau-u", type=int)
    parser.add_argument("--tau-d", type=int)
    parser.add_argument("--tau-c", type=int)
    parser.add_argument("--rho", type=float)
    parser.add_argument("--rho-u", type=float)
    parser.add_argument("--rho-d", type=float)
    parser.add_argument("--drops", type=int)
    parser.add_argument("--realizations", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--protocol", choices=harness.PROTOCOLS)
    parser.add_argument("--pc-mode", choices=("uniform", "maxmin"))


def cmd_run(args) -> int:
    config = _load_config(args)
    summary, records = harness.run_experiment(config)
    csv_text = harness.results_csv(config, records)
    json_text = harness.summary_json(config, summary, records)
    if args.out_csv:
        with open(args.out_csv, "w") as fh:
            fh.write(csv_text)
    if args.out_json:
        with open(args.out_json, "w") as fh:
            fh.write(json_text)
    print(json_text)
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    values = [type(getattr(config, args.param))(v) for v in args.values.split(",")]
    rows = []
    for value in values:
        sub = replace(config, **{args.param: value})
        if args.param in ("num_users", "user_antennas"):
            sub = replace(sub, tau_u=None, tau_d=None)
        summary, _ = harness.run_experiment(sub)
        rows.append({args.param: value, "likely95": summary.likely95,
                     "median": summary.median})
        print(f"{args.param}={value} likely95={summary.likely95:.6g} "
              f"median={summary.median:.6g}")
    if args.out_json:
        with open(args.out_json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


def cmd_pc(args) -> int:
    config = _load_config(args)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, args.drop_id)))
    ls = netgeom.draw_drop(config.num_aps, config.num_users, config.propagation, rng)
    problem = powerctl.MaxMinProblem(
        beta=ls.beta,
        gamma=powerctl.gamma_orthogonal(ls.beta, config.tau_u, config.rho_u),
        rho=config.rho,
        num_ap_antennas=config.ap_antennas,
        num_user_antennas=config.user_antennas,
    )
    alloc, t_star, info = powerctl.maxmin_bisection(problem)
    out = {
        "t_star": t_star,
        "min_sinr": float(np.min(powerctl.sinr_p1(np.sqrt(alloc.eta), problem))),
        "feasible": alloc.feasible,
        "n_feasibility_calls": info["n_feasibility_calls"],
        "eta": alloc.eta.tolist(),
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_select(args) -> int:
    config = _load_config(args)
    result = harness.framework_select(config, args.n_max)
    print(json.dumps(result, indent=2))
    return 0


def _battery() -> list[tuple[str, bool]]:
    """Fast self-contained consistency checks of the core formulas."""
    rng = np.random.default_rng(7)
    checks = []

    # determinant-lemma identity on a random instance
    n = 3
    mean = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    w = (rng.standard_normal((n, 2 * n)) + 1j * rng.standard_normal((n, 2 * n)))
    second = w @ w.conj().T / (2 * n) + mean @ mean.conj().T
    rho = 1.7
    direct = se.se_generic(mean, second, 1.0, rho)
    psi = np.eye(n) + rho * second - rho * mean @ mean.conj().T
    alt = (np.linalg.slogdet(psi + rho * mean @ mean.conj().T)[1]
           - np.linalg.slogdet(psi)[1]) / np.log(2)
    checks.append(("determinant-lemma consistency", abs(direct - alt) < 1e-9))

    # analytic bilinear moment identity
    cmat = rng.standard_normal((n, n))
    oracle = se.lemma4_oracle(cmat, se.lemma4_iid_covariances(5, n))
    checks.append(("bilinear moment identity",
                   np.allclose(np.diag(oracle), 5 * np.trace(cmat))))

    # single-antenna closed form vs scalar SINR
    m, k = 6, 2
    beta = rng.uniform(0.5, 2.0, size=(m, k))
    tau_u, rho_u = k, 10.0
    book = build_pilot_book(tau_u, k, k, 1, rng)
    a, gamma = estimation.uplink_estimator_matrices(beta, book, tau_u, rho_u)
    eta = rng.uniform(0.0, 1.0, size=(m, k))
    vals, _ = se.closed_form_p1(beta, book.cross, a, eta, tau_u, rho_u, 2.0, 1, 0.9)
    problem = powerctl.MaxMinProblem(beta=beta, gamma=gamma[:, :, 0], rho=2.0,
                                     num_ap_antennas=1, num_user_antennas=1)
    sinr = powerctl.sinr_p1(np.sqrt(eta), problem)
    checks.append(("single-antenna closed-form reduction",
                   np.allclose(vals, 0.9 * np.log2(1 + sinr), atol=1e-10)))

    # pilot book Gram cache
    book2 = build_pilot_book(8, 8, 2, 2, rng)
    gram = np.einsum('itn,ktm->iknm', book2.uplink.conj(), book2.uplink)
    checks.append(("pilot Gram cache", np.allclose(gram, book2.cross)))
    return checks


def cmd_validate(_args) -> int:
    failures = 0
    for name, ok in _battery():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cfmimo",
                                     description="Cell-free massive MIMO downlink simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p_run)
    p_run.add_argument("--out-csv")
    p_run.add_argument("--out-json")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid over one config parameter")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--out-json")
    p_sweep.set_defaults(func=cmd_sweep)

    p_pc = sub.add_parser("pc", help="solve max-min power control for one drop")
    _add_config_flags(p_pc)
    p_pc.add_argument("--drop-id", type=int, default=0)
    p_pc.set_defaults(func=cmd_pc)

    p_sel = sub.add_parser("select", help="protocol / antenna-count selection")
    _add_config_flags(p_sel)
    p_sel.add_argument("--n-max", type=int, required=True)
    p_sel.set_defaults(func=cmd_select)

    p_val = sub.add_parser("validate", help="run the quick oracle battery")
    p_val.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
