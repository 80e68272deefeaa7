"""Iteration engines for decentralized primal-dual quasi-Newton methods and baselines.

State lives per node; every quantity that depends on a neighbor passes
through :func:`pdqn.topology.neighbor_exchange`, so the counter attached to a
run is an exact record of what the network transmitted.

Primal-dual family (``v`` is the transformed multiplier, ``u = (I - W) x``)::

    g   = grad f(x) + v + alpha u
    x+  = x - beta [I - theta alpha H (I - W)] H g
    nu  = alpha x+ + p_tilde d_tilde u+
    v+  = v + gamma (I - W) nu

``u`` is cached from the dual step and reused by the next primal step, which
keeps DPDM at ``2 + [theta > 0]`` vector rounds per iteration.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConsistencyError, InvalidArgumentError, UnsupportedProblemError
from .problems import LocalObjective, QuadraticLocal
from .quasinewton import (
    DualSpectralState,
    SpectralBounds,
    bb_local_scalars,
    bfgs_inverse_update,
    consensus_track,
    update_p_tilde,
)
from .topology import MixingMatrix, RoundCounter, neighbor_exchange

B_MODES = ("bfgs", "fixed_scalar", "exact_hessian_plus_eps")
P_MODES = ("bb_consensus", "zero")


@dataclass
class AlgoConfig:
    """Tunables of the primal-dual family.

    ``b_param`` is the scalar ``kappa`` for ``b_mode="fixed_scalar"``
    (``H = I / kappa``) and ``eps`` for ``"exact_hessian_plus_eps"``
    (``H = (A_i + eps I)^-1``, quadratics only).
    """

    alpha: float = 2.8
    beta: float = 0.49
    gamma: float = 1.0
    theta: float = 0.0
    bounds: SpectralBounds = field(default_factory=SpectralBounds)
    S: int = 1
    c: float = 0.4
    max_iters: int = 1000
    b_mode: str = "bfgs"
    b_param: float = 0.0
    p_mode: str = "bb_consensus"

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if not 0 <= self.theta < 1:
            raise InvalidArgumentError("theta must lie in [0, 1)")
        if self.S < 1:
            raise InvalidArgumentError("S must be >= 1")
        if not 0 <= self.c:
            raise InvalidArgumentError("c must be nonnegative")
        if self.b_mode not in B_MODES:
            raise InvalidArgumentError(f"b_mode must be one of {B_MODES}")
        if self.p_mode not in P_MODES:
            raise InvalidArgumentError(f"p_mode must be one of {P_MODES}")
        if self.b_mode == "fixed_scalar" and not self.b_param > 0:
            raise InvalidArgumentError("fixed_scalar needs b_param > 0")
        if self.b_mode == "exact_hessian_plus_eps" and self.b_param < 0:
            raise InvalidArgumentError("eps must be nonnegative")


@dataclass
class NodeState:
    x: np.ndarray
    v: np.ndarray
    h: np.ndarray
    spectral: DualSpectralState
    grad: np.ndarray
    u: np.ndarray
    # the x object that ``u`` was computed from; a stale cache is a bug
    u_source: np.ndarray | None = None
    frozen: bool = False


@dataclass
class PDState:
    nodes: list[NodeState]
    t: int = 0

    def x(self) -> np.ndarray:
        return np.vstack([nd.x for nd in self.nodes])

    def v(self) -> np.ndarray:
        return np.vstack([nd.v for nd in self.nodes])

    def copy(self) -> "PDState":
        return copy.deepcopy(self)


def _initial_h(obj: LocalObjective, cfg: AlgoConfig) -> np.ndarray:
    p = obj.dim
    if cfg.b_mode == "bfgs":
        return np.eye(p)
    if cfg.b_mode == "fixed_scalar":
        return np.eye(p) / cfg.b_param
    if not isinstance(obj, QuadraticLocal):
        raise UnsupportedProblemError("exact_hessian_plus_eps is only available for quadratic objectives")
    return np.linalg.inv(obj.a + cfg.b_param * np.eye(p))


def init_state(
    objectives: Sequence[LocalObjective],
    m: MixingMatrix,
    cfg: AlgoConfig,
    x0: np.ndarray | None = None,
    v0: np.ndarray | None = None,
) -> PDState:
    """Node states at ``t = 0``; ``x0`` and ``v0`` default to zero.

    The initial ``u = (I - W) x0`` is formed with an uncounted exchange: the
    starting point is common knowledge and is not part of any iteration.
    """
    n, p = m.n, objectives[0].dim
    if len(objectives) != n:
        raise InvalidArgumentError(f"{len(objectives)} objectives for {n} nodes")
    x0 = np.zeros((n, p)) if x0 is None else np.asarray(x0, dtype=float).reshape(n, p)
    v0 = np.zeros((n, p)) if v0 is None else np.asarray(v0, dtype=float).reshape(n, p)
    u0 = x0 - neighbor_exchange(x0, m, None)
    nodes = []
    for i, obj in enumerate(objectives):
        x = x0[i].copy()
        nodes.append(
            NodeState(
                x=x,
                v=v0[i].copy(),
                h=_initial_h(obj, cfg),
                spectral=DualSpectralState.initial(p, cfg.bounds),
                grad=obj.gradient(x),
                u=u0[i].copy(),
                u_source=x,
            )
        )
    return PDState(nodes)


def refresh_u(state: PDState, m: MixingMatrix, counter: RoundCounter | None) -> None:
    """Exchange ``x`` once and recompute every node's ``u = (I - W) x``."""
    xs = state.x()
    wx = neighbor_exchange(xs, m, counter)
    for i, nd in enumerate(state.nodes):
        nd.u = xs[i] - wx[i]
        nd.u_source = nd.x


def primal_step(
    state: PDState,
    cfg: AlgoConfig,
    objectives: Sequence[LocalObjective],
    m: MixingMatrix,
    counter: RoundCounter | None,
) -> None:
    """One quasi-Newton Jacobi step on ``L_alpha(., v)`` at every non-frozen node."""
    nodes = state.nodes
    for i, nd in enumerate(nodes):
        if nd.u_source is not nd.x:
            raise ConsistencyError(f"node {i}: u cache does not match the current x")
    w = np.vstack([nd.h @ (nd.grad + nd.v + cfg.alpha * nd.u) for nd in nodes])
    if cfg.theta > 0:
        zw = w - neighbor_exchange(w, m, counter)
        step = [w[i] - cfg.theta * cfg.alpha * (nd.h @ zw[i]) for i, nd in enumerate(nodes)]
    else:
        step = list(w)
    for i, nd in enumerate(nodes):
        if nd.frozen:
            continue
        x_new = nd.x - cfg.beta * step[i]
        grad_new = objectives[i].gradient(x_new)
        if cfg.b_mode == "bfgs":
            nd.h = bfgs_inverse_update(nd.h, x_new - nd.x, grad_new - nd.grad)
        nd.x, nd.grad = x_new, grad_new


def dual_step(state: PDState, cfg: AlgoConfig, m: MixingMatrix, counter: RoundCounter | None) -> None:
    """Dual ascent with the spectral correction, then refresh ``p_tilde`` for the next iteration."""
    nodes = state.nodes
    refresh_u(state, m, counter)
    d_tilde = m.d_tilde
    use_bb = cfg.p_mode == "bb_consensus"
    nu = np.vstack(
        [
            cfg.alpha * nd.x + (nd.spectral.p_tilde * d_tilde[i] * nd.u if use_bb else 0.0)
            for i, nd in enumerate(nodes)
        ]
    )
    znu = nu - neighbor_exchange(nu, m, counter)
    for i, nd in enumerate(nodes):
        nd.spectral.prev_v = nd.v
        nd.v = nd.v + cfg.gamma * znu[i]
    if not use_bb:
        return

    fresh = [
        bb_local_scalars(nd.spectral, nd.h, nd.v, nd.x, nd.u, d_tilde[i], cfg.gamma, cfg.alpha)
        for i, nd in enumerate(nodes)
    ]
    wa = neighbor_exchange(np.array([nd.spectral.a for nd in nodes]), m, counter)
    wb = neighbor_exchange(np.array([nd.spectral.b for nd in nodes]), m, counter)
    t_next = state.t + 1
    for i, nd in enumerate(nodes):
        sp = nd.spectral
        a_tilde, b_tilde = fresh[i]
        sp.a = consensus_track(sp.a, wa[i], a_tilde, sp.a_tilde)
        sp.b = consensus_track(sp.b, wb[i], b_tilde, sp.b_tilde)
        sp.prev_a_tilde, sp.prev_b_tilde = sp.a_tilde, sp.b_tilde
        sp.a_tilde, sp.b_tilde = a_tilde, b_tilde
        sp.p_tilde, sp.r = update_p_tilde(sp.a, sp.b, cfg.bounds, t_next)


def dpdm_iterate(
    state: PDState,
    cfg: AlgoConfig,
    objectives: Sequence[LocalObjective],
    m: MixingMatrix,
    counter: RoundCounter | None,
) -> PDState:
    """One DPDM iteration: a single primal step followed by a dual step."""
    if cfg.S != 1:
        raise InvalidArgumentError("DPDM takes exactly one primal step per iteration (S = 1)")
    primal_step(state, cfg, objectives, m, counter)
    dual_step(state, cfg, m, counter)
    state.t += 1
    return state


def gdpdm_iterate(
    state: PDState,
    cfg: AlgoConfig,
    objectives: Sequence[LocalObjective],
    m: MixingMatrix,
    counter: RoundCounter | None,
) -> PDState:
    """``S`` primal sub-steps (each after a fresh ``u``, except the first) then one dual step."""
    for s in range(cfg.S):
        if s > 0:
            refresh_u(state, m, counter)
        primal_step(state, cfg, objectives, m, counter)
    dual_step(state, cfg, m, counter)
    state.t += 1
    return state


def gdpdm_plus_inner(
    state: PDState,
    cfg: AlgoConfig,
    objectives: Sequence[LocalObjective],
    m: MixingMatrix,
    counter: RoundCounter | None,
) -> int:
    """Adaptive inner loop; returns the number of sub-steps actually run.

    After each sub-step node ``i`` freezes once
    ``||x_i^{t,s+1} - x_i^t|| <= c ||v_i^t - v_i^{t-1}||``. Frozen nodes keep
    their ``x`` and ``H`` but still take part in exchanges. The test is not
    applied at ``t = 0``. When every node is frozen the loop ends early.
    """
    nodes = state.nodes
    x_start = [nd.x for nd in nodes]
    dv_norm = [np.linalg.norm(nd.v - nd.spectral.prev_v) for nd in nodes]
    for nd in nodes:
        nd.frozen = False
    ran = 0
    for s in range(cfg.S):
        if all(nd.frozen for nd in nodes):
            break
        if s > 0:
            refresh_u(state, m, counter)
        primal_step(state, cfg, objectives, m, counter)
        ran += 1
        if state.t >= 1:
            for i, nd in enumerate(nodes):
                if not nd.frozen and np.linalg.norm(nd.x - x_start[i]) <= cfg.c * dv_norm[i]:
                    nd.frozen = True
    for nd in nodes:
        nd.frozen = False
    return ran


def gdpdm_plus_iterate(
    state: PDState,
    cfg: AlgoConfig,
    objectives: Sequence[LocalObjective],
    m: MixingMatrix,
    counter: RoundCounter | None,
) -> PDState:
    gdpdm_plus_inner(state, cfg, objectives, m, counter)
    dual_step(state, cfg, m, counter)
    state.t += 1
    return state


# ---------------------------------------------------------------------------
# first-order baselines


@dataclass
class BaselineState:
    """Stacked ``(n, p)`` iterates for EXTRA and gradient tracking."""

    x: np.ndarray
    grad: np.ndarray
    x_prev: np.ndarray | None = None
    grad_prev: np.ndarray | None = None
    wx_prev: np.ndarray | None = None
    y: np.ndarray | None = None
    t: int = 0


def _stacked_grad(objectives: Sequence[LocalObjective], x: np.ndarray) -> np.ndarray:
    return np.vstack([obj.gradient(x[i]) for i, obj in enumerate(objectives)])


def init_baseline(objectives: Sequence[LocalObjective], x0: np.ndarray | None = None) -> BaselineState:
    n, p = len(objectives), objectives[0].dim
    x0 = np.zeros((n, p)) if x0 is None else np.asarray(x0, dtype=float).reshape(n, p).copy()
    g0 = _stacked_grad(objectives, x0)
    return BaselineState(x=x0, grad=g0, y=g0.copy())


def extra_iterate(
    bs: BaselineState,
    eta: float,
    objectives: Sequence[LocalObjective],
    m: MixingMatrix,
    counter: RoundCounter | None,
) -> BaselineState:
    """EXTRA with mixing ``(I + W) / 2`` for the correction term.

    First step ``x1 = ((I + W)/2) x0 - eta grad(x0)``, then
    ``x+ = (I + W) x - ((I + W)/2) x_prev - eta (grad(x) - grad(x_prev))``.
    ``W x_prev`` is remembered, so each iteration costs one exchange.
    """
    if eta <= 0:
        raise InvalidArgumentError("eta must be positive")
    wx = neighbor_exchange(bs.x, m, counter)
    if bs.t == 0:
        x_new = 0.5 * (bs.x + wx) - eta * bs.grad
    else:
        x_new = bs.x + wx - 0.5 * (bs.x_prev + bs.wx_prev) - eta * (bs.grad - bs.grad_prev)
    bs.x_prev, bs.grad_prev, bs.wx_prev = bs.x, bs.grad, wx
    bs.x = x_new
    bs.grad = _stacked_grad(objectives, x_new)
    bs.t += 1
    return bs


def gt_iterate(
    bs: BaselineState,
    eta: float,
    objectives: Sequence[LocalObjective],
    m: MixingMatrix,
    counter: RoundCounter | None,
) -> BaselineState:
    """Gradient tracking: ``x+ = W x - eta y``, ``y+ = W y + grad(x+) - grad(x)``."""
    if eta <= 0:
        raise InvalidArgumentError("eta must be positive")
    wx = neighbor_exchange(bs.x, m, counter)
    wy = neighbor_exchange(bs.y, m, counter)
    x_new = wx - eta * bs.y
    grad_new = _stacked_grad(objectives, x_new)
    bs.y = wy + grad_new - bs.grad
    bs.x_prev, bs.grad_prev = bs.x, bs.grad
    bs.x, bs.grad = x_new, grad_new
    bs.t += 1
    return bs


# ---------------------------------------------------------------------------
# uniform drivers used by the experiment runner

ALGORITHMS = ("dpdm", "gdpdm", "gdpdm_plus", "extra", "gt")


class Solver:
    """Common face of every method: ``step()`` advances one (outer) iteration."""

    name: str

    def __init__(self, objectives: Sequence[LocalObjective], m: MixingMatrix, counter: RoundCounter | None = None):
        self.objectives = objectives
        self.m = m
        self.counter = counter if counter is not None else RoundCounter()

    def step(self) -> None:
        raise NotImplementedError

    @property
    def x(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def t(self) -> int:
        raise NotImplementedError


class PrimalDualSolver(Solver):
    def __init__(self, objectives, m, cfg: AlgoConfig, variant: str = "dpdm", counter=None, x0=None, v0=None):
        super().__init__(objectives, m, counter)
        if variant not in ("dpdm", "gdpdm", "gdpdm_plus"):
            raise InvalidArgumentError(f"unknown primal-dual variant {variant!r}")
        if variant == "dpdm" and cfg.S != 1:
            raise InvalidArgumentError("dpdm requires S = 1")
        self.name = variant
        self.cfg = cfg
        self.state = init_state(objectives, m, cfg, x0, v0)
        self._iterate = {"dpdm": dpdm_iterate, "gdpdm": gdpdm_iterate, "gdpdm_plus": gdpdm_plus_iterate}[variant]

    def step(self):
        self._iterate(self.state, self.cfg, self.objectives, self.m, self.counter)

    @property
    def x(self):
        return self.state.x()

    @property
    def t(self):
        return self.state.t


class BaselineSolver(Solver):
    def __init__(self, objectives, m, eta: float, variant: str = "extra", counter=None, x0=None):
        super().__init__(objectives, m, counter)
        if variant not in ("extra", "gt"):
            raise InvalidArgumentError(f"unknown baseline {variant!r}")
        self.name = variant
        self.eta = eta
        self.state = init_baseline(objectives, x0)
        self._iterate = extra_iterate if variant == "extra" else gt_iterate

    def step(self):
        self._iterate(self.state, self.eta, self.objectives, self.m, self.counter)

    @property
    def x(self):
        return self.state.x

    @property
    def t(self):
        return self.state.t
