"""Multivariate Gaussian-process model with incremental exact conditioning.

Each output dimension is an independent GP sharing one squared-exponential
kernel and one set of conditioning inputs, so a single Cholesky factor serves
all output dimensions (their Gram matrices are identical). The factor is kept
in an append-friendly packed layout: row ``r`` of the lower factor occupies a
contiguous slice of a flat buffer, which makes conditioning on one more point
an O(n^2) operation (one triangular solve, one row write) with no reshuffling.

``MultiGP`` values are immutable: ``condition``/``sample_eval`` return new
values and never touch the receiver. Values produced by successive
conditionings share the underlying buffer via a copy-on-branch arena, so
linear chains of updates (the common case in trajectory sampling) allocate
nothing beyond the appended row.

Conditioning inputs are stored pre-divided by the lengthscales together with
their squared norms, so a kernel row against all stored points is a single
matrix-vector product plus elementwise exp. The expansion
``|a-b|^2 = |a|^2 - 2 a.b + |b|^2`` costs ~1e-14 relative error near
coincident points, well inside every tolerance used here; the pairwise
``kernel_eval`` keeps the exact direct form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import blas as _blas

_dtpsv = _blas.dtpsv

# Relative floor below which a conditional variance is considered numerically
# indistinguishable from an exact linear dependence.
_PD_FLOOR = 1e-12
# Appends whose conditional variance falls below this (relative) level carry
# no usable information; sample_eval skips them instead of conditioning.
_SKIP_FLOOR = 1e-12
# Negative posterior variances beyond this absolute level indicate a bug, not
# round-off.
_VAR_CLAMP = 1e-10

_JITTER_START = 1e-10
_JITTER_MAX = 1e-4


class InputShapeError(ValueError):
    """An input has the wrong dimensionality for this model."""


class NumericInputError(ValueError):
    """An input contains non-finite values."""


class ConditioningError(RuntimeError):
    """Conditioning failed: the extended Gram matrix is not positive definite."""


class GPConsistencyError(RuntimeError):
    """An internal invariant was violated (not attributable to round-off)."""


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel hyperparameters.

    ``input_projection`` selects which coordinates of an (augmented) input
    vector the kernel reads; ``lengthscales`` has one entry per selected
    coordinate. ``noise_variance`` is the default diagonal term added to the
    Gram matrix when conditioning on observed (noisy) targets.
    """

    signal_variance: float
    lengthscales: Tuple[float, ...]
    noise_variance: float = 0.0
    input_projection: Tuple[int, ...] = (0,)

    def __post_init__(self):
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        object.__setattr__(self, "lengthscales", tuple(float(l) for l in self.lengthscales))
        object.__setattr__(self, "input_projection", tuple(int(i) for i in self.input_projection))
        if not self.signal_variance > 0.0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if len(self.lengthscales) == 0 or any(l <= 0.0 for l in self.lengthscales):
            raise ValueError(f"lengthscales must all be positive, got {self.lengthscales}")
        if self.noise_variance < 0.0:
            raise ValueError(f"noise_variance must be non-negative, got {self.noise_variance}")
        proj = self.input_projection
        if len(proj) == 0:
            raise ValueError("input_projection must not be empty")
        if len(set(proj)) != len(proj) or any(i < 0 for i in proj):
            raise ValueError(f"input_projection must be duplicate-free and non-negative, got {proj}")
        if len(proj) != len(self.lengthscales):
            raise ValueError(
                f"need one lengthscale per projected dimension: "
                f"{len(self.lengthscales)} lengthscales vs projection {proj}"
            )
        # derived values shared by every GP using these params (hot path)
        object.__setattr__(self, "_inv_ls",
                           1.0 / np.asarray(self.lengthscales, dtype=np.float64))
        object.__setattr__(self, "_proj_list", list(proj))
        object.__setattr__(self, "_proj_hi", max(proj))


def kernel_eval(params: KernelParams, a: NDArray, b: NDArray) -> float:
    """Squared-exponential covariance between two (augmented) inputs."""
    pa = np.asarray(a, dtype=np.float64)
    pb = np.asarray(b, dtype=np.float64)
    proj = list(params.input_projection)
    hi = max(proj)
    if pa.ndim != 1 or pb.ndim != 1 or pa.shape[0] <= hi or pb.shape[0] <= hi:
        raise InputShapeError(
            f"points of length {pa.shape}/{pb.shape} do not cover input projection "
            f"{params.input_projection}"
        )
    ls = np.asarray(params.lengthscales)
    d = (pa[proj] - pb[proj]) / ls
    return float(params.signal_variance * np.exp(-0.5 * np.dot(d, d)))


class _Arena:
    """Growable shared store for a chain of conditioned GP values.

    ``tip`` is the number of rows written so far. A ``MultiGP`` with ``n ==
    tip`` may append in place; any other holder branches by copying the first
    ``n`` rows into a fresh arena. Rows below a value's ``n`` are never
    mutated after being written, so sharing is safe.
    """

    __slots__ = ("cap", "p", "dx", "pts", "sq", "packed", "zed", "noise", "tip")

    def __init__(self, cap: int, p: int, dx: int):
        self.cap = cap
        self.p = p
        self.dx = dx
        self.pts = np.empty((cap, p), dtype=np.float64)   # points / lengthscales
        self.sq = np.empty(cap, dtype=np.float64)         # |scaled point|^2
        self.packed = np.empty(cap * (cap + 1) // 2, dtype=np.float64)
        self.zed = np.empty((cap, dx), dtype=np.float64)  # L^{-1} @ targets
        self.noise = np.empty(cap, dtype=np.float64)
        self.tip = 0

    def branch(self, n: int, extra_capacity: int) -> "_Arena":
        new = _Arena(max(n + max(extra_capacity, 8), 2 * n, 8), self.p, self.dx)
        new.pts[:n] = self.pts[:n]
        new.sq[:n] = self.sq[:n]
        m = n * (n + 1) // 2
        new.packed[:m] = self.packed[:m]
        new.zed[:n] = self.zed[:n]
        new.noise[:n] = self.noise[:n]
        new.tip = n
        return new


class MultiGP:
    """Posterior state of ``dx`` conditionally independent GPs.

    Treat instances as immutable values: all updates return new instances.
    Safe to share read-only across parallel workers.
    """

    __slots__ = ("params", "dx", "_arena", "n", "_inv_ls", "_proj", "_proj_hi", "_alpha")

    def __init__(self, params: KernelParams, dx: int, _arena: Optional[_Arena] = None, _n: int = 0):
        if dx < 1:
            raise ValueError(f"dx must be >= 1, got {dx}")
        self.params = params
        self.dx = dx
        p = len(params.input_projection)
        self._arena = _arena if _arena is not None else _Arena(8, p, dx)
        self.n = _n
        self._inv_ls = params._inv_ls
        self._proj = params._proj_list
        self._proj_hi = params._proj_hi
        self._alpha = None

    def _make(self, arena: _Arena, n: int) -> "MultiGP":
        """Internal fast constructor sharing this value's derived fields."""
        gp = object.__new__(MultiGP)
        gp.params = self.params
        gp.dx = self.dx
        gp._arena = arena
        gp.n = n
        gp._inv_ls = self._inv_ls
        gp._proj = self._proj
        gp._proj_hi = self._proj_hi
        gp._alpha = None
        return gp

    # -- construction -----------------------------------------------------

    @classmethod
    def empty(cls, params: KernelParams, dx: int, capacity: int = 8) -> "MultiGP":
        p = len(params.input_projection)
        return cls(params, dx, _Arena(max(capacity, 8), p, dx), 0)

    @classmethod
    def from_data(
        cls,
        params: KernelParams,
        dx: int,
        points: NDArray,
        targets: NDArray,
        capacity: Optional[int] = None,
    ) -> "MultiGP":
        """Condition an empty GP on a batch of (point, target) rows."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if targets.shape != (points.shape[0], dx):
            raise InputShapeError(
                f"targets shape {targets.shape} does not match ({points.shape[0]}, {dx})"
            )
        gp = cls.empty(params, dx, capacity=capacity or (points.shape[0] + 8))
        for x, y in zip(points, targets):
            gp = gp.condition(x, y)
        return gp

    # -- properties ---------------------------------------------------------

    @property
    def points(self) -> NDArray:
        """Projected conditioning inputs, shape (n, p). Copy."""
        return self._arena.pts[: self.n] / self._inv_ls

    @property
    def targets(self) -> NDArray:
        """Conditioning targets, shape (n, dx). Recovered from the whitened store."""
        return self.chol @ self._arena.zed[: self.n]

    @property
    def row_noise(self) -> NDArray:
        """Per-row diagonal noise actually folded into the factor."""
        return self._arena.noise[: self.n].copy()

    @property
    def chol(self) -> NDArray:
        """Dense lower Cholesky factor of K_n + diag(noise). Copy, shape (n, n)."""
        n = self.n
        L = np.zeros((n, n), dtype=np.float64)
        packed = self._arena.packed
        for r in range(n):
            off = r * (r + 1) // 2
            L[r, : r + 1] = packed[off : off + r + 1]
        return L

    # -- kernel helpers -----------------------------------------------------

    def _scaled_point(self, point: NDArray) -> NDArray:
        point = np.asarray(point, dtype=np.float64)
        if point.ndim != 1:
            raise InputShapeError(f"expected a 1-d point, got shape {point.shape}")
        if point.shape[0] <= self._proj_hi:
            raise InputShapeError(
                f"point of length {point.shape[0]} does not cover projection {tuple(self._proj)}"
            )
        return point[self._proj] * self._inv_ls

    def _kernel_row(self, q: NDArray, q_sq: float) -> NDArray:
        """k(q, s_i) for all stored rows; q already projected and scaled."""
        arena = self._arena
        n = self.n
        row = arena.pts[:n] @ q
        row *= -2.0
        row += arena.sq[:n]
        row += q_sq
        row *= -0.5
        np.exp(row, out=row)
        row *= self.params.signal_variance
        return row

    def _solve_lower(self, rhs: NDArray) -> NDArray:
        """v = L^{-1} rhs using the packed factor (no copies of the factor)."""
        n = self.n
        return _dtpsv(n, self._arena.packed[: n * (n + 1) // 2], rhs, lower=0, trans=1)

    # -- inference ------------------------------------------------------------

    def posterior(self, query: NDArray) -> Tuple[NDArray, NDArray]:
        """Posterior mean and standard deviation at one query point.

        Returns ``(mean, std)`` with shape (dx,) each. With no conditioning
        data this is the prior: zero mean, ``sqrt(signal_variance)`` std.
        """
        q = self._scaled_point(query)
        if not np.all(np.isfinite(q)):
            raise NumericInputError(f"query contains non-finite values: {query!r}")
        sf2 = self.params.signal_variance
        if self.n == 0:
            return np.zeros(self.dx), np.full(self.dx, np.sqrt(sf2))
        kq = self._kernel_row(q, float(q @ q))
        v = self._solve_lower(kq)
        mean = v @ self._arena.zed[: self.n]
        var = self._clamp_var(sf2 - float(v @ v))
        return mean, np.full(self.dx, np.sqrt(var))

    def posterior_mean(self, query: NDArray) -> NDArray:
        """Posterior mean only. O(n) per call once the weight cache is built."""
        q = self._scaled_point(query)
        if self.n == 0:
            return np.zeros(self.dx)
        if self._alpha is None:
            n = self.n
            packed = self._arena.packed[: n * (n + 1) // 2]
            z = self._arena.zed[:n]
            alpha = np.empty((n, self.dx))
            for d in range(self.dx):
                alpha[:, d] = _dtpsv(n, packed, np.ascontiguousarray(z[:, d]),
                                     lower=0, trans=0)
            self._alpha = alpha
        return self._kernel_row(q, float(q @ q)) @ self._alpha

    def _clamp_var(self, var: float) -> float:
        if var >= 0.0:
            return var
        if var >= -_VAR_CLAMP:
            return 0.0
        raise GPConsistencyError(
            f"posterior variance {var} is negative beyond the round-off clamp"
        )

    # -- conditioning -----------------------------------------------------------

    def condition(
        self, point: NDArray, target: NDArray, noise_variance: Optional[float] = None
    ) -> "MultiGP":
        """Return a new GP additionally conditioned on (point, target).

        The new row's diagonal receives ``noise_variance`` (defaulting to the
        kernel's). Raises :class:`ConditioningError` if the extended Gram
        matrix is numerically singular, i.e. the point adds no information.
        """
        q = self._scaled_point(point)
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (self.dx,):
            raise InputShapeError(f"target shape {target.shape} != ({self.dx},)")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(target))):
            raise NumericInputError(f"non-finite conditioning input: {point!r} -> {target!r}")
        noise = self.params.noise_variance if noise_variance is None else float(noise_variance)
        q_sq = float(q @ q)
        if self.n:
            kq = self._kernel_row(q, q_sq)
            v = self._solve_lower(kq)
            d2_raw = self.params.signal_variance + noise - float(v @ v)
        else:
            v = np.empty(0)
            d2_raw = self.params.signal_variance + noise
        d2 = self._rescue_pd(d2_raw, point)
        return self._append(q, q_sq, v, d2, target, noise)

    def _rescue_pd(self, d2_raw: float, point: NDArray) -> float:
        sf2 = self.params.signal_variance
        floor = _PD_FLOOR * sf2
        if np.isfinite(d2_raw) and d2_raw > floor:
            return d2_raw
        # Bounded jitter ladder. A jittered append is accepted only when the
        # data's own conditional variance dominates the synthetic term;
        # otherwise the row would be pure fabrication (e.g. an exact duplicate
        # under a noise-free kernel), and we fail instead.
        jitter = _JITTER_START * sf2
        limit = _JITTER_MAX * sf2
        while jitter <= limit * (1 + 1e-12):
            d2 = d2_raw + jitter
            if np.isfinite(d2) and d2 > floor and d2_raw > jitter:
                return d2
            jitter *= 10.0
        raise ConditioningError(
            f"cannot condition on {np.asarray(point).tolist()}: conditional variance "
            f"{d2_raw:.3e} is not positive definite after jitter escalation to {limit:.1e}"
        )

    def _append(
        self, q: NDArray, q_sq: float, v: NDArray, d2: float, target: NDArray, noise: float
    ) -> "MultiGP":
        n = self.n
        arena = self._arena
        if arena.tip != n or n + 1 > arena.cap:
            arena = arena.branch(n, extra_capacity=16)
        d = np.sqrt(d2)
        off = n * (n + 1) // 2
        arena.packed[off : off + n] = v
        arena.packed[off + n] = d
        arena.pts[n] = q
        arena.sq[n] = q_sq
        arena.zed[n] = (target - (v @ arena.zed[:n] if n else 0.0)) / d
        arena.noise[n] = noise
        arena.tip = n + 1
        return self._make(arena, n + 1)

    def with_capacity(self, extra: int) -> "MultiGP":
        """Branch into a private arena with room for ``extra`` more rows.

        Useful before a long conditioning chain of known length: the chain
        then appends in place with no intermediate growth copies, and the
        receiver's arena is left untouched.
        """
        return self._make(self._arena.branch(self.n, extra), self.n)

    def condition_many(
        self, points: NDArray, targets: NDArray, noise_variance: Optional[float] = None
    ) -> "MultiGP":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        gp = self
        for x, y in zip(points, targets):
            gp = gp.condition(x, y, noise_variance=noise_variance)
        return gp

    # -- pathwise sampling --------------------------------------------------------

    def sample_eval(self, point: NDArray, zeta: NDArray) -> Tuple[NDArray, "MultiGP"]:
        """Draw one pathwise evaluation of the modelled function at ``point``.

        Returns ``(value, gp')`` where ``value = mean + std * zeta`` per
        dimension and ``gp'`` is conditioned on that value, so subsequent
        draws are consistent with a single sampled function. The conditioning
        uses the kernel's ``noise_variance`` like any other conditioning;
        with a noise-free kernel the consistency is exact, while a small
        nugget keeps long clustered sampling chains (closed-loop trajectories
        hovering near a setpoint) numerically sound. When the posterior
        variance at the point is already negligible the value is fully
        determined and the conditioning is skipped (it would add an
        all-but-singular row carrying no information).
        """
        q = self._scaled_point(point)
        zeta = np.asarray(zeta, dtype=np.float64)
        if zeta.shape != (self.dx,):
            raise InputShapeError(f"zeta shape {zeta.shape} != ({self.dx},)")
        sf2 = self.params.signal_variance
        noise = self.params.noise_variance
        q_sq = float(q @ q)
        if self.n == 0:
            std = np.sqrt(sf2)
            value = std * zeta
            gp = self._append(q, q_sq, np.empty(0), sf2 + noise, value, noise)
            return value, gp
        kq = self._kernel_row(q, q_sq)
        v = self._solve_lower(kq)
        mean = v @ self._arena.zed[: self.n]
        var = self._clamp_var(sf2 - float(v @ v))
        if var <= _SKIP_FLOOR * sf2:
            return mean, self
        value = mean + np.sqrt(var) * zeta
        gp = self._append(q, q_sq, v, var + noise, value, noise)
        return value, gp

    def __repr__(self):
        return (
            f"MultiGP(n={self.n}, dx={self.dx}, "
            f"signal_variance={self.params.signal_variance}, "
            f"lengthscales={self.params.lengthscales})"
        )

    # Pickling transfers exactly the rows this value can see; the arena is
    # rebuilt on the other side (used when sharing a prior GP with workers).
    def __getstate__(self):
        n = self.n
        m = n * (n + 1) // 2
        a = self._arena
        return (self.params, self.dx, a.pts[:n].copy(), a.sq[:n].copy(),
                a.packed[:m].copy(), a.zed[:n].copy(), a.noise[:n].copy())

    def __setstate__(self, state):
        params, dx, pts, sq, packed, zed, noise = state
        n = pts.shape[0]
        arena = _Arena(max(n, 8), len(params.input_projection), dx)
        arena.pts[:n] = pts
        arena.sq[:n] = sq
        arena.packed[: packed.shape[0]] = packed
        arena.zed[:n] = zed
        arena.noise[:n] = noise
        arena.tip = n
        self.__init__(params, dx, arena, n)


# Operation-style wrappers; some callers read better with free functions.

def posterior(gp: MultiGP, query: NDArray) -> Tuple[NDArray, NDArray]:
    return gp.posterior(query)


def condition(gp: MultiGP, point: NDArray, target: NDArray,
              noise_variance: Optional[float] = None) -> MultiGP:
    return gp.condition(point, target, noise_variance=noise_variance)


def sample_eval(gp: MultiGP, point: NDArray, zeta: NDArray) -> Tuple[NDArray, MultiGP]:
    return gp.sample_eval(point, zeta)
