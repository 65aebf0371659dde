"""
Command-line front end.

Subcommands::

    valleyfill run      solve one case and write CSV/JSON results
    valleyfill compare  SPDS and RPDS against the centralized optimum (gap.csv)
    valleyfill certify  print the convergence certificate for a step tuple
    valleyfill plot     draw PNG figures from an existing output directory

Exit codes: 0 success, 1 error, 2 certificate condition not met (certify only).
Set ``VALLEYFILL_LOG`` to a logging level name (``INFO``, ``DEBUG``) for progress.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .cases import Case, load_case
from .errors import ValleyFillError
from .qp import ChargingProblem
from .simnet import ChannelModel, run_simnet
from .solvers import SpdsConfig, certify, kkt_residuals, run_centralized, run_pds, run_rpds, run_spds

log = logging.getLogger("valleyfill")

SOLVERS = ("spds", "rpds", "pds", "centralized", "simnet")

# flag name -> SpdsConfig field
_CONFIG_FLAGS = {
    "alpha": "alpha",
    "beta": "beta",
    "tau_u": "tau_u",
    "tau_lambda": "tau_lambda",
    "d_lambda": "d_lambda",
    "iters": "max_iters",
    "tol": "tol",
    "rpds_reg": "rpds_dual_reg",
}


def _f(x) -> str:
    return repr(float(x))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="paper", help="built-in case (tiny, paper) or a case file")
    p.add_argument("--feeder", help="feeder file replacing the case's lines")
    p.add_argument("--baseline", help="baseline CSV replacing the case's baseline")
    p.add_argument("--baseline-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, help="fleet sampling seed (overrides the case file)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau-u", type=float)
    p.add_argument("--tau-lambda", type=float)
    p.add_argument("--d-lambda", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--nu-lower", type=float)
    p.add_argument("--iters", type=int, help="iteration cap")
    p.add_argument("--tol", type=float, help="stopping tolerance on the primal change")
    p.add_argument("--rpds-reg", type=float, help="dual regularisation of RPDS")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="valleyfill", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve one case")
    _add_common(run)
    run.add_argument("--solver", choices=SOLVERS, default="spds")
    run.add_argument("--loss-prob", type=float, default=0.0, help="simnet packet-loss probability")
    run.add_argument("--downlink-loss", action="store_true", help="simnet: drop broadcasts too")
    run.add_argument("--trace", help="simnet: JSON-lines message trace file")
    run.add_argument("--figures", action="store_true", help="also write PNG figures")

    cmp_ = sub.add_parser("compare", help="SPDS vs RPDS objective gap")
    _add_common(cmp_)
    cmp_.add_argument("--figures", action="store_true")

    cert = sub.add_parser("certify", help="evaluate the convergence certificate")
    _add_common(cert)

    plot = sub.add_parser("plot", help="draw figures from an output directory")
    plot.add_argument("--out", default="out")
    plot.add_argument("--nu-lower", type=float)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("VALLEYFILL_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load(args) -> tuple[Case, ChargingProblem, SpdsConfig]:
    case = load_case(
        args.scenario,
        seed=args.seed,
        feeder_path=args.feeder,
        baseline_path=args.baseline,
        baseline_scale=args.baseline_scale,
    )
    overrides = {}
    if args.rho is not None:
        overrides["rho"] = args.rho
    if args.nu_lower is not None:
        overrides["nu_lower"] = args.nu_lower
    problem = case.problem(**overrides)
    changes = {
        field: getattr(args, flag)
        for flag, field in _CONFIG_FLAGS.items()
        if getattr(args, flag, None) is not None
    }
    config = dataclasses.replace(case.spds, **changes)
    log.info("case %s: n=%d h=%d K=%d", case.name, problem.n, problem.h, problem.K)
    return case, problem, config


def _solve(name, problem, config, args):
    if name == "spds":
        return run_spds(problem, config)
    if name == "rpds":
        return run_rpds(problem, config)
    if name == "pds":
        return run_pds(problem, config)
    if name == "centralized":
        return run_centralized(problem)
    channel = ChannelModel(
        args.loss_prob,
        seed=0 if args.seed is None else args.seed,
        uplink=True,
        downlink=args.downlink_loss,
    )
    return run_simnet(problem, config, channel, trace_path=args.trace)


def write_total_load(path, problem: ChargingProblem, report) -> None:
    cols = [problem.p_b] + list(report.aggregate_history)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["baseline"] + [f"iter_{i}" for i in range(1, len(cols))])
        for k in range(problem.K):
            w.writerow([_f(c[k]) for c in cols])


def write_voltages(path, case: Case, problem: ChargingProblem, U) -> None:
    """Voltage magnitudes ``|V| / |V0|`` under the schedule ``U``."""
    v_lin, v_dist = case.schedule_voltages(problem, U)
    v_lin, v_dist = np.sqrt(v_lin / problem.v0_squared), np.sqrt(v_dist / problem.v0_squared)
    labels = case.scenario.horizon.labels()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "node", "v_lindistflow", "v_distflow"])
        for k in range(problem.K):
            for j in range(problem.h):
                w.writerow(
                    [k, labels[k], j + 1, _f(v_lin[j, k]), _f(v_dist[j, k])]
                )


def write_profiles(path, case: Case, problem: ChargingProblem, U) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ev_id", "node"] + [f"u_{k}" for k in range(problem.K)])
        for ev, row in zip(case.scenario.evs, U):
            w.writerow([ev.id, ev.node] + [_f(x) for x in row])


def write_duals(path, report) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "step", "node", "lambda"])
        for it, lam in enumerate(report.lambda_history, start=1):
            K, h = lam.shape
            for k in range(K):
                for j in range(h):
                    w.writerow([it, k, j + 1, _f(lam[k, j])])


def write_gap(path, spds_gap, rpds_gap) -> None:
    """Signed gaps; the shorter run is padded with its last value."""
    n = max(len(spds_gap), len(rpds_gap))

    def pad(g):
        return list(g) + [g[-1]] * (n - len(g))

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "spds_gap", "rpds_gap"])
        for i, (a, b) in enumerate(zip(pad(spds_gap), pad(rpds_gap)), start=1):
            w.writerow([i, _f(a), _f(b)])


def _problem_info(case, problem) -> dict:
    return {
        "case": case.name,
        "seed": case.seed,
        "n": problem.n,
        "h": problem.h,
        "K": problem.K,
        "rho": problem.rho,
        "nu_lower": problem.nu_lower,
        "baseline_margin": problem.baseline_margin,
    }


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args) -> int:
    case, problem, config = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cert = certify(problem, config)
    if not cert.condition_28_holds and args.solver != "centralized":
        log.warning("step-size condition not met (varrho=%.4g); convergence is not certified", cert.varrho)
    report = _solve(args.solver, problem, config, args)
    if not report.kkt:
        report.kkt = kkt_residuals(problem, report.u, report.lam)
    write_total_load(out / "total_load.csv", problem, report)
    write_voltages(out / "voltages.csv", case, problem, report.u)
    write_profiles(out / "profiles.csv", case, problem, report.u)
    write_duals(out / "duals.csv", report)
    report.write_iterations_csv(out / "iterations.csv")
    _write_json(
        out / "report.json",
        {
            "problem": _problem_info(case, problem),
            "config": dataclasses.asdict(config),
            "solve": report.summary(),
            "certificate": cert.to_dict(),
        },
    )
    if args.figures:
        from .plotting import render_all

        render_all(out, problem.nu_lower)
    print(
        f"{args.solver}: {report.termination} after {report.iterations} iterations, "
        f"objective {report.final_objective:.10g}, max violation {report.max_violation[-1]:.3e}"
    )
    print(f"results written to {out}")
    return 0


def cmd_compare(args) -> int:
    case, problem, config = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ref = run_centralized(problem)
    f_star = ref.final_objective
    spds = run_spds(problem, config)
    rpds = run_rpds(problem, config)
    spds_gap = [f - f_star for f in spds.objective]
    rpds_gap = [f - f_star for f in rpds.objective]
    write_gap(out / "gap.csv", spds_gap, rpds_gap)
    _write_json(
        out / "report.json",
        {
            "problem": _problem_info(case, problem),
            "config": dataclasses.asdict(config),
            "optimum": f_star,
            "centralized": ref.summary(),
            "spds": spds.summary(),
            "rpds": rpds.summary(),
        },
    )
    if args.figures:
        from .plotting import render_all

        render_all(out)
    print(f"optimum {f_star:.12g}")
    print(f"spds terminal gap {spds_gap[-1]:+.3e} after {spds.iterations} iterations ({spds.termination})")
    print(f"rpds terminal gap {rpds_gap[-1]:+.3e} after {rpds.iterations} iterations ({rpds.termination})")
    return 0


def cmd_certify(args) -> int:
    case, problem, config = _load(args)
    cert = certify(problem, config)
    print(f"case {case.name}: n={problem.n} h={problem.h} K={problem.K}")
    print(
        f"alpha={config.alpha!r} beta={config.beta!r} "
        f"tau_u={config.tau_u!r} tau_lambda={config.tau_lambda!r} rho={problem.rho!r}"
    )
    for line in cert.lines():
        print(line)
    return 0 if cert.condition_28_holds else 2


def cmd_plot(args) -> int:
    from .plotting import render_all

    made = render_all(args.out, args.nu_lower)
    if not made:
        print(f"no result CSVs found in {args.out}", file=sys.stderr)
        return 1
    for p in made:
        print(p)
    return 0


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "certify": cmd_certify, "plot": cmd_plot}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValleyFillError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
