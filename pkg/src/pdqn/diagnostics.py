"""Dense reference computations used to check the solvers at small scale.

Nothing here is on a solver's hot path. Dense inverses of ``H`` appear only
in this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .algorithms import PDState
from .errors import InvalidArgumentError, UnsupportedProblemError
from .problems import LocalObjective, QuadraticLocal, centralized_solve
from .quasinewton import SpectralBounds
from .topology import MixingMatrix

# relative singular-value cutoff for pseudo-inverses of rank-deficient products
PINV_RTOL = 1e-10
LIMIT_EPSILONS = (1e-2, 1e-4, 1e-6)


# ---------------------------------------------------------------------------
# pseudo-inverse identities


def _pinv(a: np.ndarray) -> np.ndarray:
    return scipy.linalg.pinv(a, rtol=PINV_RTOL)


def _random_spd(k: int, rng: np.random.Generator, lo: float = 0.5, hi: float = 2.0) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    s = q @ np.diag(rng.uniform(lo, hi, k)) @ q.T
    return 0.5 * (s + s.T)


def _random_rank(m_dim: int, n_dim: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    u, _ = np.linalg.qr(rng.standard_normal((m_dim, rank)))
    v, _ = np.linalg.qr(rng.standard_normal((n_dim, rank)))
    return u @ np.diag(rng.uniform(0.5, 2.0, rank)) @ v.T


def schur_inverse_identity(a: np.ndarray, m: np.ndarray, n: np.ndarray | None = None) -> float:
    """Max entrywise gap between ``[A (M + A'NA)^-1 A']^+ A`` and ``[N + (A M^-1 A')^+] A``.

    ``n=None`` means the identity weight.
    """
    n = np.eye(a.shape[0]) if n is None else n
    lhs = _pinv(a @ np.linalg.solve(m + a.T @ n @ a, a.T)) @ a
    rhs = (n + _pinv(a @ np.linalg.solve(m, a.T))) @ a
    return float(np.max(np.abs(lhs - rhs)))


def regularized_limit_residuals(
    a: np.ndarray, m: np.ndarray, n: np.ndarray, epsilons: Sequence[float] = LIMIT_EPSILONS
) -> tuple[list[float], float]:
    """Residuals of ``A (eps M + A'NA)^-1 A'`` against ``A (A'NA)^+ A'``.

    Returns the residual at each ``eps`` and the residual of the polynomial
    extrapolation to ``eps = 0`` through all sampled points. The raw gap shrinks
    only like ``eps``; extrapolation cancels the low-order terms and exposes
    the limit itself.
    """
    target = a @ _pinv(a.T @ n @ a) @ a.T
    k = a.T @ n @ a
    vals = [a @ np.linalg.solve(eps * m + k, a.T) for eps in epsilons]
    res = [float(np.max(np.abs(v - target))) for v in vals]
    extrap = sum(w * v for w, v in zip(_extrapolation_weights(epsilons), vals))
    return res, float(np.max(np.abs(extrap - target)))


def _extrapolation_weights(points: Sequence[float]) -> list[float]:
    # Lagrange basis polynomials evaluated at zero
    out = []
    for k, pk in enumerate(points):
        w = 1.0
        for j, pj in enumerate(points):
            if j != k:
                w *= pj / (pj - pk)
        out.append(w)
    return out


@dataclass
class PinvReport:
    schur_residual: float
    weighted_schur_residual: float
    limit_residuals: list[float]
    limit_extrapolated: float
    limit_monotone: bool

    @property
    def max_residual(self) -> float:
        return max(self.schur_residual, self.weighted_schur_residual, self.limit_extrapolated)


def verify_pinv_identities(m_dim: int, n_dim: int, rank: int, seed: int = 0) -> PinvReport:
    """Check both pseudo-inverse identities and the regularized limit on one random instance."""
    if not (1 <= rank <= m_dim <= n_dim <= 12):
        raise InvalidArgumentError("need 1 <= rank <= m_dim <= n_dim <= 12")
    rng = np.random.default_rng(seed)
    a = _random_rank(m_dim, n_dim, rank, rng)
    m = _random_spd(n_dim, rng)
    n = _random_spd(m_dim, rng)
    res, extrap = regularized_limit_residuals(a, m, n)
    return PinvReport(
        schur_residual=schur_inverse_identity(a, m),
        weighted_schur_residual=schur_inverse_identity(a, m, n),
        limit_residuals=res,
        limit_extrapolated=extrap,
        limit_monotone=all(r1 > r2 for r1, r2 in zip(res, res[1:])),
    )


# ---------------------------------------------------------------------------
# potential function on quadratics


@dataclass
class PotentialReport:
    delta_x: float
    delta_lambda: float
    delta: float
    t: int = 0


class QuadraticPotential:
    """Closed-form primal and dual gaps of the augmented Lagrangian for a quadratic network problem.

    The system matrix ``blockdiag(A_i) + alpha (I - W) (x) I`` is factored once.
    """

    def __init__(self, objectives: Sequence[LocalObjective], m: MixingMatrix, alpha: float):
        if not all(isinstance(o, QuadraticLocal) for o in objectives):
            raise UnsupportedProblemError("potential is only available in closed form for quadratics")
        self.n, self.p = m.n, objectives[0].dim
        self.alpha = alpha
        self.a_blocks = scipy.linalg.block_diag(*[o.a for o in objectives])
        self.b = np.concatenate([o.b for o in objectives])
        self.z = np.kron(m.laplacian(), np.eye(self.p))
        self._chol = scipy.linalg.cho_factor(self.a_blocks + alpha * self.z)
        z_star = centralized_solve(objectives)
        self.f_star = self.f(np.tile(z_star, self.n))

    def f(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.a_blocks @ x + self.b @ x)

    def lagrangian(self, x: np.ndarray, v: np.ndarray) -> float:
        return self.f(x) + float(v @ x) + 0.5 * self.alpha * float(x @ self.z @ x)

    def primal_minimizer(self, v: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._chol, -self.b - np.ravel(v))

    def __call__(self, x: np.ndarray, v: np.ndarray, t: int = 0) -> PotentialReport:
        x, v = np.ravel(x), np.ravel(v)
        dual_value = self.lagrangian(self.primal_minimizer(v), v)
        dx = self.lagrangian(x, v) - dual_value
        dl = self.f_star - dual_value
        return PotentialReport(dx, dl, 7.0 * dl + dx, t)


def quadratic_potential(
    objectives: Sequence[LocalObjective], m: MixingMatrix, alpha: float, x: np.ndarray, v: np.ndarray
) -> PotentialReport:
    """One-shot ``Delta = 7 Delta_lambda + Delta_x`` at the stacked pair ``(x, v)``."""
    return QuadraticPotential(objectives, m, alpha)(x, v)


# ---------------------------------------------------------------------------
# quasi-Newton tracking and spectral monitoring


def tracking_residual(prev: PDState, cur: PDState, objectives: Sequence[LocalObjective], beta: float) -> float:
    """Relative gap ``||sum_i B_i d_i - sum_i grad f_i(x_i)|| / (1 + ||sum_i grad f_i(x_i)||)``.

    ``prev`` holds ``x^t`` and ``H^t``, ``cur`` holds ``x^{t+1}``;
    ``d_i = (x_i^t - x_i^{t+1}) / beta`` and ``B_i = inv(H_i^t)``.
    """
    lhs = np.zeros(objectives[0].dim)
    grad_sum = np.zeros_like(lhs)
    for i, obj in enumerate(objectives):
        before, after = prev.nodes[i], cur.nodes[i]
        d = (before.x - after.x) / beta
        lhs += np.linalg.solve(before.h, d)
        grad_sum += obj.gradient(before.x)
    return float(np.linalg.norm(lhs - grad_sum) / (1.0 + np.linalg.norm(grad_sum)))


@dataclass
class SpectralMonitor:
    """Running extreme eigenvalues of every node's ``H`` (lower and upper curvature bounds)."""

    psi_min: float = np.inf
    psi_max: float = -np.inf
    samples: int = 0

    def record(self, state: PDState) -> None:
        for nd in state.nodes:
            eig = np.linalg.eigvalsh(0.5 * (nd.h + nd.h.T))
            self.psi_min = min(self.psi_min, float(eig[0]))
            self.psi_max = max(self.psi_max, float(eig[-1]))
        self.samples += 1


@dataclass
class StepsizeBounds:
    beta_max: float
    gamma_max: float
    psi_big: float = field(repr=False, default=0.0)
    alpha_bar: float = field(repr=False, default=0.0)


def theorem_stepsizes(
    lip: float,
    mu: float,
    m: MixingMatrix,
    alpha: float,
    theta: float,
    bounds: SpectralBounds,
    psi_min: float,
    psi_max: float,
) -> StepsizeBounds:
    """Single-inner-step stepsize limits under which the potential provably contracts.

    ``lip``/``mu`` bound every local Hessian; ``psi_min``/``psi_max`` bound the
    spectrum of every ``H`` ever used. Requires ``theta alpha rho < psi_min``.
    """
    if not 0 < psi_min <= psi_max:
        raise InvalidArgumentError("need 0 < psi_min <= psi_max")
    rho = m.rho
    slack = psi_min - theta * alpha * rho
    if slack <= 0:
        raise InvalidArgumentError("theta too large for the observed curvature bounds")
    psi_big = psi_max * psi_min / slack
    lip_aug = lip + rho * alpha
    lip_dual = rho / mu
    alpha_bar = alpha + rho / (bounds.omega_lo * (1.0 - float(np.max(np.diag(m.w)))))
    beta_max = 1.0 / (2.0 * psi_big * lip_aug)
    gamma_max = min(1.0 / (12.0 * alpha_bar * lip_dual), 4.0 * mu**2 / (99.0 * alpha_bar * lip_aug * rho))
    return StepsizeBounds(beta_max, gamma_max, psi_big, alpha_bar)
