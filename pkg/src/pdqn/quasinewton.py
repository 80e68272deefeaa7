"""Second-order estimates kept at each node.

The primal side maintains a BFGS inverse-Hessian approximation per node. The
dual side estimates a scalar curvature ``p_tilde`` per node from local
Barzilai-Borwein quotients whose numerator and denominator are averaged over
the network by dynamic average consensus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

# curvature guard for the BFGS update, relative to ||s|| ||y||
CURVATURE_EPS = 1e-12
STEP_EPS = 1e-14
# |a| at or below this counts as zero in the p_tilde projection
ZERO_A_EPS = 1e-14


def bfgs_inverse_update(h: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inverse BFGS update ``H' = (I - rho s y^T) H (I - rho y s^T) + rho s s^T``.

    Returns ``h`` itself (not a copy) when the pair fails the curvature guard
    ``s^T y > 1e-12 ||s|| ||y||`` or the step is negligible.
    """
    sy = float(s @ y)
    ns = np.linalg.norm(s)
    if ns <= STEP_EPS or sy <= CURVATURE_EPS * ns * np.linalg.norm(y):
        return h
    hy = h @ y
    cross = np.outer(hy, s)
    return h - (cross + cross.T) / sy + (1.0 + (y @ hy) / sy) * np.outer(s, s) / sy


def bfgs_update_accepted(s: np.ndarray, y: np.ndarray) -> bool:
    ns = np.linalg.norm(s)
    return ns > STEP_EPS and float(s @ y) > CURVATURE_EPS * ns * np.linalg.norm(y)


@dataclass(frozen=True)
class SpectralBounds:
    """Projection interval ``[omega_lo, omega_hi]`` and the ``r^t = c_r eta_r^t`` schedule."""

    omega_lo: float = 0.3
    omega_hi: float = 1e4
    c_r: float = 1.0
    eta_r: float = 0.95

    def __post_init__(self):
        if not 0 < self.omega_lo < self.omega_hi:
            raise InvalidArgumentError("need 0 < omega_lo < omega_hi")
        if self.c_r <= 0:
            raise InvalidArgumentError("c_r must be positive")
        if not 0 < self.eta_r < 1:
            raise InvalidArgumentError("eta_r must lie in (0, 1)")

    def r(self, t: int) -> float:
        return self.c_r * self.eta_r**t


@dataclass
class DualSpectralState:
    """Per-node scalars behind ``p_tilde``.

    ``a_tilde``/``b_tilde`` are the local BB numerator pieces, ``a``/``b`` their
    consensus trackers; ``prev_v`` is the dual iterate one step back.
    """

    prev_v: np.ndarray
    a_tilde: float = 1.0
    b_tilde: float = 1.0
    a: float = 1.0
    b: float = 1.0
    p_tilde: float = 0.5
    r: float = 1.0
    prev_a_tilde: float = 1.0
    prev_b_tilde: float = 1.0

    @classmethod
    def initial(cls, p: int, bounds: SpectralBounds) -> "DualSpectralState":
        r0 = bounds.r(0)
        return cls(prev_v=np.zeros(p), p_tilde=1.0 / (1.0 + r0), r=r0)


def bb_local_scalars(
    state: DualSpectralState,
    h: np.ndarray,
    v: np.ndarray,
    x: np.ndarray,
    u: np.ndarray,
    d_tilde: float,
    gamma: float,
    alpha: float,
) -> tuple[float, float]:
    """Local BB pieces ``(a_tilde, b_tilde)`` for the newest dual step.

    ``a_tilde = gamma dv^T (alpha x + p_prev d_tilde u)`` and
    ``b_tilde = dv^T H dv`` with ``dv = v - state.prev_v``; ``p_prev`` is the
    ``p_tilde`` that was used to produce ``v``.
    """
    dv = v - state.prev_v
    a_tilde = gamma * float(dv @ (alpha * x + state.p_tilde * d_tilde * u))
    b_tilde = float(dv @ (h @ dv))
    return a_tilde, b_tilde


def consensus_track(prev_tracker: float, neighbor_weighted_sum: float, local_new: float, local_old: float) -> float:
    """Dynamic average consensus step; ``neighbor_weighted_sum`` is ``sum_j W_ij tracker_j``."""
    del prev_tracker  # enters only through the neighbor sum, which includes W_ii
    return neighbor_weighted_sum + (local_new - local_old)


def update_p_tilde(a: float, b: float, bounds: SpectralBounds, t: int) -> tuple[float, float]:
    """Projected inverse BB ratio ``1 / (Proj[b/a] + r^t)`` and ``r^t``."""
    if t < 1:
        raise InvalidArgumentError("p_tilde is only refreshed for t >= 1")
    r = bounds.r(t)
    if abs(a) > ZERO_A_EPS:
        ratio = min(max(b / a, bounds.omega_lo), bounds.omega_hi)
    elif b > 0:
        ratio = bounds.omega_hi
    else:
        ratio = bounds.omega_lo
    return 1.0 / (ratio + r), r
