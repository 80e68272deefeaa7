"""Experiment configuration, presets, the metric-recording loop, sweeps and CSV traces."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .algorithms import ALGORITHMS, AlgoConfig, BaselineSolver, PrimalDualSolver, Solver
from .errors import ConfigError, InvalidArgumentError, PdqnError
from .problems import LocalObjective, centralized_solve, make_logistic, make_quadratic, parse_libsvm, shard_dataset
from .quasinewton import SpectralBounds
from .topology import GRAPH_KINDS, MixingMatrix, edge_count_for_density, generate_graph, metropolis_weights

log = logging.getLogger(__name__)

PROBLEM_FAMILIES = ("quadratic", "logistic")
CSV_HEADER = ("iter", "rel_error", "comm_vector_entries", "comm_scalar_entries", "rounds", "elapsed_ms")


@dataclass
class ProblemConfig:
    family: str = "quadratic"
    n: int = 10
    p: int = 20
    seed: int = 0
    kappa_f: float = 10.0
    shared_q: bool = False
    # logistic only; ``path`` empty means synthetic data
    samples: int = 500
    reg: float = 1.0
    path: str = ""
    zero_one_labels: bool = False
    shard: str = "contiguous"


@dataclass
class GraphConfig:
    kind: str = "random"
    n: int = 10
    density: float = 0.36
    seed: int = 0


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    algo: str = "dpdm"
    eta: float = 0.0
    algo_cfg: AlgoConfig = field(default_factory=AlgoConfig)
    budget: int = 1000
    target: float = 1e-8
    out: str = ""
    timing: bool = True

    def validate(self) -> None:
        pr, g = self.problem, self.graph
        if pr.family not in PROBLEM_FAMILIES:
            raise ConfigError(f"problem.family must be one of {PROBLEM_FAMILIES}")
        if g.kind not in GRAPH_KINDS:
            raise ConfigError(f"graph.kind must be one of {GRAPH_KINDS}")
        if pr.n != g.n:
            raise ConfigError(f"problem.n = {pr.n} but graph.n = {g.n}")
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algorithm.name must be one of {ALGORITHMS}")
        if self.algo in ("extra", "gt") and not self.eta > 0:
            raise ConfigError(f"{self.algo} needs algorithm.eta > 0")
        if self.algo == "dpdm" and self.algo_cfg.S != 1:
            raise ConfigError("dpdm runs with S = 1; use gdpdm for more inner steps")
        if self.budget < 0:
            raise ConfigError("run.budget must be >= 0")
        if not self.target >= 0:
            raise ConfigError("run.target must be >= 0")


# ---------------------------------------------------------------------------
# key = value files with [section] headers

_SECTIONS = {
    "problem": [f.name for f in dataclasses.fields(ProblemConfig)],
    "graph": [f.name for f in dataclasses.fields(GraphConfig)],
    "algorithm": [
        "name", "eta", "alpha", "beta", "gamma", "theta", "S", "c", "max_iters", "b_mode", "b_param", "p_mode",
        "omega_lo", "omega_hi", "c_r", "eta_r",
    ],
    "run": ["budget", "target", "out", "timing"],
}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _flat(cfg: ExperimentConfig) -> dict[str, dict[str, object]]:
    a, b = cfg.algo_cfg, cfg.algo_cfg.bounds
    return {
        "problem": dataclasses.asdict(cfg.problem),
        "graph": dataclasses.asdict(cfg.graph),
        "algorithm": {
            "name": cfg.algo, "eta": cfg.eta, "alpha": a.alpha, "beta": a.beta, "gamma": a.gamma,
            "theta": a.theta, "S": a.S, "c": a.c, "max_iters": a.max_iters, "b_mode": a.b_mode,
            "b_param": a.b_param, "p_mode": a.p_mode, "omega_lo": b.omega_lo, "omega_hi": b.omega_hi,
            "c_r": b.c_r, "eta_r": b.eta_r,
        },
        "run": {"budget": cfg.budget, "target": cfg.target, "out": cfg.out, "timing": cfg.timing},
    }


def emit_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in _flat(cfg).items():
        parser[section] = {k: _fmt(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _convert(raw: str, like, where: str):
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            val = float(raw)
            if math.isnan(val):
                raise ValueError(raw)
            return val
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {type(like).__name__}") from None
    return raw.strip()


def _from_flat(flat: dict[str, dict[str, object]]) -> ExperimentConfig:
    alg = flat["algorithm"]
    try:
        bounds = SpectralBounds(alg["omega_lo"], alg["omega_hi"], alg["c_r"], alg["eta_r"])
        algo_cfg = AlgoConfig(
            alpha=alg["alpha"], beta=alg["beta"], gamma=alg["gamma"], theta=alg["theta"], bounds=bounds,
            S=alg["S"], c=alg["c"], max_iters=alg["max_iters"], b_mode=alg["b_mode"], b_param=alg["b_param"],
            p_mode=alg["p_mode"],
        )
    except InvalidArgumentError as exc:
        raise ConfigError(f"algorithm: {exc}") from None
    run = flat["run"]
    cfg = ExperimentConfig(
        problem=ProblemConfig(**flat["problem"]),
        graph=GraphConfig(**flat["graph"]),
        algo=alg["name"],
        eta=alg["eta"],
        algo_cfg=algo_cfg,
        budget=run["budget"],
        target=run["target"],
        out=run["out"],
        timing=run["timing"],
    )
    cfg.validate()
    return cfg


def apply_overrides(
    cfg: ExperimentConfig, items: dict[str, dict[str, str]], *, strict_sections: bool = True
) -> ExperimentConfig:
    """Return ``cfg`` with string values from ``items[section][key]`` applied and revalidated."""
    flat = _flat(cfg)
    for section, values in items.items():
        if section not in _SECTIONS:
            if strict_sections:
                raise ConfigError(f"unknown section [{section}]")
            continue
        for key, raw in values.items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            flat[section][key] = _convert(raw, flat[section][key], f"{section}.{key}")
    return _from_flat(flat)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read a config file body; missing keys fall back to ``base`` (defaults if None)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    items = {s: dict(parser[s]) for s in parser.sections()}
    return apply_overrides(base or ExperimentConfig(), items)


def load_config(path: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base)


# ---------------------------------------------------------------------------
# presets

# per-variant primal stepsize, keyed by (algo, S); missing keys fall back to (dpdm, 1)
_LINREG_BETA = {("dpdm", 1): 0.49, ("gdpdm", 1): 0.49, ("gdpdm", 2): 0.31, ("gdpdm", 3): 0.22,
                ("gdpdm", 4): 0.17, ("gdpdm_plus", 4): 0.57}
_LINREG_FIRST_ORDER = {10: {}, 100: {"gt": 5e-3, "extra": 1e-2}, 1000: {"gt": 5e-4, "extra": 1e-3},
                       10000: {"gt": 5e-5, "extra": 1e-4}}

# name: (alpha, c, {(algo, S): beta}, {(algo, S): theta} or scalar theta)
_LOGISTIC = {
    "mushroom": (3.6, 0.6, {("dpdm", 1): 0.48, ("gdpdm", 2): 0.3, ("gdpdm", 4): 0.17, ("gdpdm_plus", 4): 0.51}, 0.18),
    "ijcnn1": (4.0, 0.3, {("dpdm", 1): 0.41, ("gdpdm", 2): 0.33, ("gdpdm", 4): 0.22, ("gdpdm_plus", 4): 0.44}, 0.15),
    "w8a": (3.6, 0.6, {("dpdm", 1): 0.47, ("gdpdm", 2): 0.38, ("gdpdm", 4): 0.22, ("gdpdm_plus", 4): 0.45},
            {("dpdm", 1): 0.17, ("gdpdm", 2): 0.17, ("gdpdm", 4): 0.17, ("gdpdm_plus", 4): 0.16}),
    "a9a": (4.0, 0.45, {("dpdm", 1): 0.38, ("gdpdm", 2): 0.34, ("gdpdm", 4): 0.19, ("gdpdm_plus", 4): 0.42}, 0.15),
}

# density sweep: density -> (theta, beta) at p = 50, kappa_f = 100
TOPOLOGY_PARAMS = {0.2: (0.28, 0.1), 0.36: (0.28, 0.23), 0.51: (0.26, 0.42), 0.67: (0.25, 0.43),
                   0.82: (0.26, 0.46), 1.0: (0.25, 0.47)}

PRESETS = tuple(
    [f"linreg-k{k}" for k in _LINREG_FIRST_ORDER]
    + list(_LOGISTIC)
    + [f"topology-d{d}" for d in TOPOLOGY_PARAMS]
)


def _lookup(table, algo: str, S: int):
    if not isinstance(table, dict):
        return table
    key = ("dpdm", 1) if algo == "gdpdm" and S == 1 else (algo, S)
    return table.get(key, table[("dpdm", 1)])


def admissible_graph_seed(
    n: int, density: float, theta: float, alpha: float, start: int = 0, tries: int = 1000
) -> int:
    """First seed whose random graph keeps ``theta * alpha * rho < 1``.

    That condition keeps ``I - theta alpha H (I - W)`` positive definite while
    ``H`` is still the identity; the primal step is not a descent step otherwise.
    """
    if theta == 0:
        return start
    for seed in range(start, start + tries):
        m = metropolis_weights(generate_graph(n, "random", density, seed))
        if theta * alpha * m.rho < 1.0:
            return seed
    raise ConfigError(f"no random graph with theta*alpha*rho < 1 among {tries} seeds")


def preset(name: str, algo: str = "dpdm", S: int = 1) -> ExperimentConfig:
    """Named parameter set. ``algo``/``S`` select the per-variant stepsizes of the tables."""
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algo!r}")
    cS = 1 if algo in ("dpdm", "extra", "gt") else S
    if name.startswith("linreg-k"):
        try:
            kappa = int(name[len("linreg-k"):])
        except ValueError:
            raise ConfigError(f"unknown preset {name!r}") from None
        if kappa not in _LINREG_FIRST_ORDER:
            raise ConfigError(f"unknown preset {name!r}")
        theta, alpha = 0.32, 2.8
        eta = _LINREG_FIRST_ORDER[kappa].get(algo, 0.0)
        if algo in ("extra", "gt") and eta == 0.0:
            raise ConfigError(f"preset {name} has no stepsize for {algo}")
        beta = _lookup(_LINREG_BETA, algo, cS)
        c = 0.4
        problem = ProblemConfig("quadratic", n=10, p=20, kappa_f=float(kappa))
        density = 0.36
    elif name in _LOGISTIC:
        alpha, c, betas, thetas = _LOGISTIC[name]
        beta, theta = _lookup(betas, algo, cS), _lookup(thetas, algo, cS)
        eta = 0.0
        problem = ProblemConfig("logistic", n=10, p=20, samples=500, reg=1.0)
        density = 0.36
    elif name.startswith("topology-d"):
        try:
            density = float(name[len("topology-d"):])
            theta, beta = TOPOLOGY_PARAMS[density]
        except (ValueError, KeyError):
            raise ConfigError(f"unknown preset {name!r}") from None
        alpha, c, eta = 2.8, 0.4, 0.0
        problem = ProblemConfig("quadratic", n=10, p=50, kappa_f=100.0)
    else:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    # the instance is chosen from the table theta so every algorithm of a preset shares it
    graph = density_graph(problem.n, density)
    if graph.kind == "random":
        graph.seed = admissible_graph_seed(problem.n, density, theta, alpha)
    if algo in ("extra", "gt"):
        theta = 0.0
    algo_cfg = AlgoConfig(alpha=alpha, beta=beta, gamma=1.0, theta=theta, S=cS, c=c,
                          bounds=SpectralBounds(eta_r=0.95))
    return ExperimentConfig(problem=problem, graph=graph, algo=algo, eta=eta, algo_cfg=algo_cfg)


def density_graph(n: int, density: float, seed: int = 0) -> GraphConfig:
    """Graph config for a target density: a tree-sized density means the line graph, 1 the complete graph."""
    edges = edge_count_for_density(n, density)
    if edges <= n - 1:
        return GraphConfig("line", n, density, seed)
    if edges >= n * (n - 1) // 2:
        return GraphConfig("complete", n, density, seed)
    return GraphConfig("random", n, density, seed)


# ---------------------------------------------------------------------------
# building and running


def build_problem(pc: ProblemConfig) -> list[LocalObjective]:
    if pc.family == "quadratic":
        return make_quadratic(pc.n, pc.p, pc.kappa_f, pc.seed, pc.shared_q)
    if pc.path:
        try:
            with open(pc.path, encoding="utf-8") as fh:
                data = parse_libsvm(fh, pc.zero_one_labels)
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {pc.path}: {exc}") from None
        return shard_dataset(data, pc.n, pc.shard, pc.seed, pc.reg)
    return make_logistic(pc.n, pc.p, pc.samples, pc.seed, pc.reg)


def build_network(gc: GraphConfig) -> MixingMatrix:
    return metropolis_weights(generate_graph(gc.n, gc.kind, gc.density, gc.seed))


def build_solver(cfg: ExperimentConfig, objectives, m: MixingMatrix) -> Solver:
    if cfg.algo in ("extra", "gt"):
        return BaselineSolver(objectives, m, cfg.eta, cfg.algo)
    if cfg.algo_cfg.theta * cfg.algo_cfg.alpha * m.rho >= 1.0:
        log.warning("theta*alpha*rho = %.3f >= 1: the first primal steps are not descent steps",
                    cfg.algo_cfg.theta * cfg.algo_cfg.alpha * m.rho)
    return PrimalDualSolver(objectives, m, cfg.algo_cfg, cfg.algo)


def relative_error(x: np.ndarray, z_star: np.ndarray) -> float:
    """``(1/n) sum_i ||x_i - z*|| / (||z*|| + 1)``."""
    return float(np.mean(np.linalg.norm(x - z_star, axis=1)) / (np.linalg.norm(z_star) + 1.0))


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    rel_error: float
    comm_vector_entries: int
    comm_scalar_entries: int
    rounds: int
    elapsed_ms: float


@dataclass
class RunResult:
    trace: list[TraceRecord]
    reached: bool
    z_star: np.ndarray
    kappa_g: float
    solver: Solver = field(repr=False)

    @property
    def iterations(self) -> int:
        return self.trace[-1].iter if self.trace else 0


def run_experiment(
    cfg: ExperimentConfig,
    objectives: Sequence[LocalObjective] | None = None,
    m: MixingMatrix | None = None,
    z_star: np.ndarray | None = None,
    callback: Callable[[Solver], None] | None = None,
) -> RunResult:
    """Iterate from ``x0 = 0`` until the relative error reaches ``cfg.target`` or ``cfg.budget`` runs out.

    The first record is the starting point (iteration 0). Prebuilt
    ``objectives``/``m``/``z_star`` may be passed to share work across runs.
    """
    cfg.validate()
    objectives = build_problem(cfg.problem) if objectives is None else objectives
    m = build_network(cfg.graph) if m is None else m
    z_star = centralized_solve(objectives) if z_star is None else z_star
    solver = build_solver(cfg, objectives, m)
    c = solver.counter
    clock = time.perf_counter
    start = clock()

    def record() -> TraceRecord:
        ms = (clock() - start) * 1e3 if cfg.timing else 0.0
        return TraceRecord(solver.t, relative_error(solver.x, z_star), c.vector_entries, c.scalar_entries,
                           c.rounds, ms)

    trace = [record()]
    reached = trace[-1].rel_error <= cfg.target
    while not reached and solver.t < cfg.budget:
        solver.step()
        if callback is not None:
            callback(solver)
        trace.append(record())
        err = trace[-1].rel_error
        reached = err <= cfg.target
        if not math.isfinite(err):
            log.warning("iterates diverged at t=%d", solver.t)
            break
    return RunResult(trace, reached, z_star, m.kappa_g, solver)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_AXES = ("kappa_f", "density", "S")


@dataclass
class SweepRow:
    value: float
    iterations: int | None
    final_rel_error: float
    total_volume: int
    kappa_g: float


def _sweep_point(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    cfg = dataclasses.replace(base, problem=dataclasses.replace(base.problem),
                              graph=dataclasses.replace(base.graph),
                              algo_cfg=dataclasses.replace(base.algo_cfg))
    if axis == "kappa_f":
        cfg.problem.kappa_f = float(value)
    elif axis == "density":
        cfg.graph = density_graph(cfg.graph.n, float(value), cfg.graph.seed)
    elif axis == "S":
        if cfg.algo == "dpdm":
            cfg.algo = "gdpdm"
        cfg.algo_cfg = dataclasses.replace(cfg.algo_cfg, S=int(value))
    else:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    cfg.validate()
    return cfg


def sweep(
    base: ExperimentConfig, axis: str, values: Iterable, out_dir: str | None = None
) -> list[SweepRow]:
    """Run ``base`` once per axis value; optionally write one trace per point plus ``summary.csv``."""
    rows = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for value in values:
        cfg = _sweep_point(base, axis, value)
        res = run_experiment(cfg)
        last = res.trace[-1]
        rows.append(SweepRow(float(value), last.iter if res.reached else None, last.rel_error,
                             last.comm_vector_entries + last.comm_scalar_entries, res.kappa_g))
        if out_dir:
            emit_csv(res.trace, os.path.join(out_dir, f"{axis}_{value}.csv"))
    if out_dir:
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([axis, "iterations_to_target", "final_rel_error", "total_volume", "kappa_g"])
            for r in rows:
                w.writerow([repr(r.value), "" if r.iterations is None else r.iterations,
                            repr(r.final_rel_error), r.total_volume, repr(r.kappa_g)])
    return rows


# ---------------------------------------------------------------------------
# CSV traces


def write_csv(trace: Sequence[TraceRecord], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in trace:
        w.writerow([r.iter, repr(r.rel_error), r.comm_vector_entries, r.comm_scalar_entries, r.rounds,
                    repr(r.elapsed_ms)])


def emit_csv(trace: Sequence[TraceRecord], path: str) -> None:
    """Write ``trace`` to ``path``; reals use the shortest repr that round-trips."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_csv(trace, fh)


def read_csv(source: str | TextIO) -> list[TraceRecord]:
    if isinstance(source, str):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_csv(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise PdqnError(f"unexpected trace header {header}")
    return [
        TraceRecord(int(row[0]), float(row[1]), int(row[2]), int(row[3]), int(row[4]), float(row[5]))
        for row in reader
    ]
