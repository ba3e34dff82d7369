"""Command-line entry points.

Commands: run, cert-nonaffine, zeroshot-eval, gen-mdp, mesh-report.
Exit codes: 0 success, 2 configuration error, 3 engine diagnostic error.
All CSV floats carry 17 significant digits.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import (
    ConsistencyError,
    InvalidInputError,
    SolverError,
    SupportBlowupError,
)
from .evaluation import mesh_and_bound
from .experiments import (
    load_config,
    nonaffinity_certificate,
    run as run_experiment,
    zeroshot_run,
)
from .kernels import KernelSpec, SemimetricSpec
from .measures import SupportMap
from .mdp import TabularMDP, dsm_mdp, random_mdp, rng_stream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ENGINE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmdrl",
        description="Tabular multivariate distributional RL experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment per seed")
    p_run.add_argument("--config", required=True, help="experiment config JSON")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the seed list")
    p_run.add_argument("--threads", type=int, default=1)

    p_cert = sub.add_parser(
        "cert-nonaffine",
        help="print the simplex-projection non-affinity certificate as CSV",
    )
    p_cert.add_argument("--alpha", type=float, default=1.0)
    p_cert.add_argument("--out", default=None, help="optional CSV output path")

    p_zs = sub.add_parser(
        "zeroshot-eval", help="evaluate zero-shot scalar return predictions"
    )
    p_zs.add_argument("--config", required=True)
    p_zs.add_argument("--out", required=True)
    p_zs.add_argument("--seed", type=int, default=None)
    p_zs.add_argument("--threads", type=int, default=1)

    p_gen = sub.add_parser("gen-mdp", help="generate and save a random MDP")
    p_gen.add_argument("--n-states", type=int, default=5)
    p_gen.add_argument("--dim", type=int, default=2)
    p_gen.add_argument("--gamma", type=float, default=0.9)
    p_gen.add_argument("--concentration", type=float, default=1.0)
    p_gen.add_argument("--r-max", type=float, default=1.0)
    p_gen.add_argument("--dsm", action="store_true", help="occupancy cumulants")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)

    p_mesh = sub.add_parser(
        "mesh-report", help="mesh and fixed-point error bound for a support"
    )
    p_mesh.add_argument("--mdp", required=True, help="MDP JSON file")
    p_mesh.add_argument(
        "--support-kind", choices=("grid", "random", "simplex-grid"), default="grid"
    )
    p_mesh.add_argument("--support-m", type=int, default=64)
    p_mesh.add_argument("--support-resolution", type=int, default=10)
    p_mesh.add_argument("--alpha", type=float, default=1.0)
    p_mesh.add_argument("--seed", type=int, default=0)
    p_mesh.add_argument("--out", default=None)
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.resolved["seeds"] = [args.seed]
    run_experiment(config, args.out, threads=args.threads)
    return EXIT_OK


def _cmd_cert(args) -> int:
    cert = nonaffinity_certificate(args.alpha)
    lines = ["xi_0,xi_1,projected_mixture,mixture_of_projections"]
    for atom, w1, w2 in zip(
        cert["support"], cert["projected_mixture"], cert["mixture_of_projections"]
    ):
        lines.append(f"{atom[0]:.17g},{atom[1]:.17g},{w1:.17g},{w2:.17g}")
    lines.append(f"# mmd_gap = {cert['mmd_gap']:.17g}")
    text = "\r\n".join(lines) + "\r\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_zeroshot(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.resolved["seeds"] = [args.seed]
    zeroshot_run(config, args.out, threads=args.threads)
    return EXIT_OK


def _cmd_gen_mdp(args) -> int:
    rng = rng_stream(args.seed)
    if args.dsm:
        rows = rng.dirichlet(
            np.full(args.n_states, args.concentration), size=args.n_states
        )
        mdp = dsm_mdp(rows, args.gamma)
    else:
        mdp = random_mdp(
            args.n_states,
            args.dim,
            args.gamma,
            args.concentration,
            rng,
            args.r_max,
        )
    mdp.save(args.out)
    return EXIT_OK


def _cmd_mesh(args) -> int:
    mdp = TabularMDP.load(args.mdp)
    if args.support_kind == "grid":
        support = SupportMap.uniform_grid(
            mdp.n_states, mdp.dim, args.support_m, mdp.v_max
        )
    elif args.support_kind == "random":
        support = SupportMap.random(
            mdp.n_states, mdp.dim, args.support_m, mdp.v_max, rng_stream(args.seed, 1)
        )
    else:
        support = SupportMap.simplex_grid(
            mdp.n_states, mdp.dim, args.support_resolution, scale=mdp.v_max
        )
    spec = KernelSpec(SemimetricSpec(args.alpha))
    report = mesh_and_bound(support, mdp, spec)
    payload = {
        "mesh": report.mesh,
        "fixed_point_bound": report.fixed_point_bound,
        "uniform_grid_bound": report.uniform_grid_bound,
        "exact": report.exact,
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "cert-nonaffine": _cmd_cert,
        "zeroshot-eval": _cmd_zeroshot,
        "gen-mdp": _cmd_gen_mdp,
        "mesh-report": _cmd_mesh,
    }
    try:
        return handlers[args.command](args)
    except (InvalidInputError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SupportBlowupError, ConsistencyError) as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
