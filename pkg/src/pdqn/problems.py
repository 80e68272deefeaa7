"""Local objectives, problem generators, LIBSVM ingestion and the centralized oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.linalg

from .errors import InvalidArgumentError, OracleError, ParseError


class LocalObjective:
    """A node's private, strongly convex, smooth function ``f_i``.

    Subclasses provide ``value``, ``gradient`` and ``hessian`` and set the
    attributes ``dim``, ``mu`` (strong convexity modulus) and ``lip``
    (gradient Lipschitz constant).
    """

    dim: int
    mu: float
    lip: float

    def value(self, z: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        return self.value(z), self.gradient(z)


class QuadraticLocal(LocalObjective):
    """``f(z) = 0.5 z^T A z + b^T z`` with symmetric positive definite ``A``."""

    def __init__(self, a: np.ndarray, b: np.ndarray):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape != (a.shape[0],):
            raise InvalidArgumentError(f"incompatible shapes A{a.shape}, b{b.shape}")
        if not np.array_equal(a, a.T):
            raise InvalidArgumentError("A must be exactly symmetric")
        eig = np.linalg.eigvalsh(a)
        if eig[0] <= 0:
            raise InvalidArgumentError("A must be positive definite")
        self.a = a
        self.b = b
        self.dim = a.shape[0]
        self.mu = float(eig[0])
        self.lip = float(eig[-1])

    def value(self, z):
        return float(0.5 * z @ self.a @ z + self.b @ z)

    def gradient(self, z):
        return self.a @ z + self.b

    def hessian(self, z=None):
        return self.a


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _power_iteration(mat: np.ndarray, iters: int = 500, tol: float = 1e-12) -> float:
    """Largest eigenvalue of a symmetric PSD matrix."""
    if not mat.any():
        return 0.0
    rng = np.random.default_rng(0)
    x = rng.standard_normal(mat.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = mat @ x
        new = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    return lam


class LogisticLocal(LocalObjective):
    """``sum_j log(1 + exp(-b_j a_j^T z)) + (reg/2) ||z||^2`` over a node's samples."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, reg: float = 1.0):
        features = np.atleast_2d(np.asarray(features, dtype=float))
        labels = np.asarray(labels, dtype=float)
        if labels.shape != (features.shape[0],):
            raise InvalidArgumentError("one label per feature row required")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise InvalidArgumentError("labels must be -1 or +1")
        if reg <= 0:
            raise InvalidArgumentError("regularizer must be positive")
        self.features = features
        self.labels = labels
        self.reg = float(reg)
        self.dim = features.shape[1]
        self.mu = self.reg
        self.lip = self.reg + 0.25 * _power_iteration(features.T @ features)
        self._signed = features * labels[:, None]

    def margins(self, z):
        return self._signed @ z

    def value(self, z):
        return logistic_value_grad(self, z)[0]

    def gradient(self, z):
        return logistic_value_grad(self, z)[1]

    def hessian(self, z):
        s = _sigmoid(self.margins(z))
        weights = s * (1.0 - s)
        return self.features.T @ (weights[:, None] * self.features) + self.reg * np.eye(self.dim)

    def value_grad(self, z):
        return logistic_value_grad(self, z)


def logistic_value_grad(obj: LogisticLocal, z: np.ndarray) -> tuple[float, np.ndarray]:
    m = obj.margins(z)
    value = float(np.logaddexp(0.0, -m).sum() + 0.5 * obj.reg * (z @ z))
    grad = -(obj._signed.T @ _sigmoid(-m)) + obj.reg * z
    return value, grad


def make_quadratic(n: int, p: int, kappa_f: float, seed: int = 0, shared_q: bool = False) -> list[QuadraticLocal]:
    """Random quadratics ``A_i = Q_i^T diag(1, U(1,2)..., kappa_f) Q_i`` with Gaussian ``b_i``.

    Each node draws its own Haar orthogonal ``Q_i`` and interior spectrum unless
    ``shared_q`` is set, in which case one ``Q`` serves every node.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if p < 2:
        raise InvalidArgumentError("p must be >= 2")
    if kappa_f < 2:
        raise InvalidArgumentError("kappa_f must be >= 2")
    rng = np.random.default_rng(seed)
    q_shared = _haar_orthogonal(p, rng) if shared_q else None
    out = []
    for _ in range(n):
        q = q_shared if shared_q else _haar_orthogonal(p, rng)
        diag = np.empty(p)
        diag[0], diag[-1] = 1.0, kappa_f
        diag[1:-1] = rng.uniform(1.0, 2.0, size=p - 2)
        a = q.T @ (diag[:, None] * q)
        a = 0.5 * (a + a.T)
        b = rng.standard_normal(p)
        obj = QuadraticLocal(a, b)
        # spectrum is known exactly by construction
        obj.mu, obj.lip = 1.0, float(kappa_f)
        out.append(obj)
    return out


def _haar_orthogonal(p: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


@dataclass
class Dataset:
    """Sparse labeled rows as read from LIBSVM text; indices are 1-based."""

    rows: list[tuple[float, list[tuple[int, float]]]]
    dim: int

    def __len__(self):
        return len(self.rows)

    def dense(self, p: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        p = self.dim if p is None else p
        x = np.zeros((len(self.rows), p))
        y = np.empty(len(self.rows))
        for k, (label, feats) in enumerate(self.rows):
            y[k] = label
            for idx, val in feats:
                if idx > p:
                    raise InvalidArgumentError(f"feature index {idx} exceeds dimension {p}")
                x[k, idx - 1] = val
        return x, y


def parse_libsvm(stream: TextIO | Iterable[str], zero_one_labels: bool = False) -> Dataset:
    """Parse ``label idx:val idx:val ...`` lines.

    Labels must be -1/+1 (``1`` counts as +1). With ``zero_one_labels`` a
    ``0`` label is read as -1. Blank lines and ``#`` comments are skipped.
    """
    rows = []
    dim = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        label = _parse_label(tokens[0], lineno, zero_one_labels)
        feats = []
        last = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(lineno, f"malformed feature token {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(lineno, f"malformed feature token {tok!r}") from None
            if not np.isfinite(val):
                raise ParseError(lineno, f"non-finite value in {tok!r}")
            if idx < 1:
                raise ParseError(lineno, f"feature index must be >= 1, got {idx}")
            if idx <= last:
                raise ParseError(lineno, f"feature indices not increasing at {idx}")
            last = idx
            feats.append((idx, val))
        dim = max(dim, last)
        rows.append((label, feats))
    return Dataset(rows, dim)


def _parse_label(tok: str, lineno: int, zero_one: bool) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(lineno, f"malformed label {tok!r}") from None
    if v == 1.0:
        return 1.0
    if v == -1.0:
        return -1.0
    if v == 0.0 and zero_one:
        return -1.0
    raise ParseError(lineno, f"label {tok!r} is not -1/+1" + ("" if zero_one else " (pass zero_one_labels for 0/1 files)"))


def shard_dataset(
    d: Dataset,
    n: int,
    strategy: str = "contiguous",
    seed: int = 0,
    reg: float = 1.0,
    p: int | None = None,
) -> list[LogisticLocal]:
    """Split samples over ``n`` nodes with shard sizes differing by at most one.

    ``round_robin`` deals a seeded permutation of the samples; ``contiguous``
    keeps file order and ignores ``seed``. Every node carries the full
    regularizer ``reg``.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if len(d) == 0:
        raise InvalidArgumentError("empty dataset")
    if n > len(d):
        raise InvalidArgumentError(f"{n} nodes but only {len(d)} samples")
    x, y = d.dense(p)
    return [LogisticLocal(x[ix], y[ix], reg) for ix in shard_indices(len(d), n, strategy, seed)]


def shard_indices(count: int, n: int, strategy: str = "contiguous", seed: int = 0) -> list[np.ndarray]:
    if strategy == "contiguous":
        return [np.asarray(ix) for ix in np.array_split(np.arange(count), n)]
    if strategy == "round_robin":
        order = np.random.default_rng(seed).permutation(count)
        return [np.sort(order[k::n]) for k in range(n)]
    raise InvalidArgumentError(f"unknown shard strategy {strategy!r}")


def make_logistic(
    n: int, p: int, samples: int, seed: int = 0, reg: float = 1.0, noise: float = 0.05
) -> list[LogisticLocal]:
    """Synthetic classification data split contiguously over ``n`` nodes.

    Features are standard Gaussian scaled by ``1/sqrt(p)``, labels follow a
    planted Gaussian separator and a fraction ``noise`` of them is flipped.
    """
    if samples < n:
        raise InvalidArgumentError("need at least one sample per node")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((samples, p)) / np.sqrt(p)
    w = rng.standard_normal(p)
    y = np.where(x @ w >= 0, 1.0, -1.0)
    flip = rng.random(samples) < noise
    y[flip] *= -1
    return [LogisticLocal(x[ix], y[ix], reg) for ix in shard_indices(samples, n)]


def centralized_solve(objectives: Sequence[LocalObjective], tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Minimizer of ``sum_i f_i`` computed with full information.

    Quadratics are solved directly; anything else goes through damped Newton
    with Armijo backtracking until ``||sum_i grad f_i|| <= tol``.
    """
    if not objectives:
        raise InvalidArgumentError("no objectives")
    if all(isinstance(o, QuadraticLocal) for o in objectives):
        a = sum(o.a for o in objectives)
        b = sum(o.b for o in objectives)
        return scipy.linalg.solve(a, -b, assume_a="pos")

    p = objectives[0].dim
    z = np.zeros(p)

    def total(z):
        vals = [o.value_grad(z) for o in objectives]
        return sum(v for v, _ in vals), sum(g for _, g in vals)

    f, g = total(z)
    for _ in range(max_iter):
        if np.linalg.norm(g) <= tol:
            return z
        h = sum(o.hessian(z) for o in objectives)
        step = scipy.linalg.solve(h, g, assume_a="pos")
        slope = g @ step
        t = 1.0
        while True:
            z_new = z - t * step
            f_new, g_new = total(z_new)
            if f_new <= f - 1e-4 * t * slope:
                break
            # near the optimum f stalls at rounding level while the gradient still shrinks
            if f_new <= f + 1e-14 * abs(f) and np.linalg.norm(g_new) < np.linalg.norm(g):
                break
            t *= 0.5
            if t < 1e-12:
                raise OracleError(f"line search failed at gradient norm {np.linalg.norm(g):.3e}")
        z, f, g = z_new, f_new, g_new
    if np.linalg.norm(g) <= tol:
        return z
    raise OracleError(f"Newton stopped with gradient norm {np.linalg.norm(g):.3e} > {tol:.1e}")


def global_value(objectives: Sequence[LocalObjective], z: np.ndarray) -> float:
    return float(sum(o.value(z) for o in objectives))
