"""Command-line entry point: ``pdqn run|sweep|spectra|verify``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .diagnostics import verify_pinv_identities
from .errors import ConfigError, InvalidArgumentError, OracleError, PdqnError
from .runner import (
    PRESETS,
    SWEEP_AXES,
    ExperimentConfig,
    apply_overrides,
    emit_csv,
    load_config,
    preset,
    run_experiment,
    sweep,
    write_csv,
)
from .topology import GRAPH_KINDS, generate_graph, metropolis_weights, read_edge_list

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_BUDGET = 4

log = logging.getLogger("pdqn")


def _parse_set(items: list[str]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section, {})[name] = value.strip()
    return out


def _build_config(args) -> ExperimentConfig:
    if args.preset:
        base = preset(args.preset, args.algo or "dpdm", args.S or 1)
    else:
        base = ExperimentConfig()
    cfg = load_config(args.config, base) if args.config else base
    overrides = _parse_set(args.set or [])
    run = overrides.setdefault("run", {})
    for flag in ("budget", "target", "out"):
        value = getattr(args, flag, None)
        if value is not None:
            run[flag] = str(value)
    if args.no_timing:
        run["timing"] = "false"
    if not args.preset:
        alg = overrides.setdefault("algorithm", {})
        if args.algo:
            alg["name"] = args.algo
        if args.S:
            alg["S"] = str(args.S)
    return apply_overrides(cfg, overrides)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="key = value config file with [section] headers")
    p.add_argument("--preset", choices=PRESETS, help="start from a named parameter set")
    p.add_argument("--algo", help="dpdm, gdpdm, gdpdm_plus, extra or gt")
    p.add_argument("--S", type=int, help="inner primal steps")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    p.add_argument("--budget", type=int)
    p.add_argument("--target", type=float)
    p.add_argument("--no-timing", action="store_true", help="write elapsed_ms as 0 for byte-stable traces")


def cmd_run(args) -> int:
    cfg = _build_config(args)
    if args.out is not None:
        cfg.out = args.out
    res = run_experiment(cfg)
    if cfg.out:
        emit_csv(res.trace, cfg.out)
    else:
        write_csv(res.trace, sys.stdout)
    last = res.trace[-1]
    log.info("%s: %d iterations, rel_error %.3e, reached=%s", cfg.algo, last.iter, last.rel_error, res.reached)
    return EXIT_OK if res.reached else EXIT_BUDGET


def cmd_sweep(args) -> int:
    cfg = _build_config(args)
    cast = int if args.axis == "S" else float
    try:
        values = [cast(v) for v in args.values.split(",")]
    except ValueError:
        raise ConfigError(f"cannot read sweep values {args.values!r}") from None
    rows = sweep(cfg, args.axis, values, args.out_dir)
    print(f"{args.axis:>10} {'iters':>8} {'rel_error':>12} {'volume':>12} {'kappa_g':>9}")
    for r in rows:
        iters = "-" if r.iterations is None else str(r.iterations)
        print(f"{r.value:>10g} {iters:>8} {r.final_rel_error:>12.3e} {r.total_volume:>12d} {r.kappa_g:>9.3f}")
    return EXIT_OK if all(r.iterations is not None for r in rows) else EXIT_BUDGET


def cmd_spectra(args) -> int:
    if args.edges:
        try:
            with open(args.edges, encoding="utf-8") as fh:
                g = read_edge_list(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read edge list: {exc}") from None
    else:
        if args.n is None:
            raise ConfigError("spectra needs --n or --edges")
        g = generate_graph(args.n, args.kind, args.density, args.seed)
    m = metropolis_weights(g)
    print(f"n={g.n} edges={g.num_edges} density={g.density:.4f} rho={m.rho:.6g} sigma={m.sigma:.6g} kappa_g={m.kappa_g:.6g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    worst_unweighted = worst_limit = worst_weighted = 0.0
    rng = np.random.default_rng(args.seed)
    for seed in range(args.trials):
        m_dim = int(rng.integers(1, 13))
        n_dim = int(rng.integers(m_dim, 13))
        rank = int(rng.integers(1, m_dim + 1))
        rep = verify_pinv_identities(m_dim, n_dim, rank, seed)
        worst_unweighted = max(worst_unweighted, rep.schur_residual)
        worst_limit = max(worst_limit, rep.limit_extrapolated)
        if rank == m_dim:
            worst_weighted = max(worst_weighted, rep.weighted_schur_residual)
    ok = max(worst_unweighted, worst_limit, worst_weighted) <= args.tol
    print(f"pinv identity (unit weight)        max residual {worst_unweighted:.2e}")
    print(f"pinv identity (weighted, full row rank) max residual {worst_weighted:.2e}")
    print(f"regularized limit (extrapolated)    max residual {worst_limit:.2e}")
    print("ok" if ok else "FAILED")
    return EXIT_OK if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdqn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write its trace")
    _add_config_args(p)
    p.add_argument("--out", help="trace CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per axis value")
    _add_config_args(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--out-dir", help="directory for per-point traces and summary.csv")
    p.set_defaults(func=cmd_sweep, out=None)

    p = sub.add_parser("spectra", help="print spectral statistics of a mixing matrix")
    p.add_argument("--kind", choices=GRAPH_KINDS, default="random")
    p.add_argument("--n", type=int)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--edges", help="edge-list file instead of a generated graph")
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("verify", help="check the pseudo-inverse identities on random instances")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except OracleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PdqnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
