"""Gaussian process paths on time grids.

Paths are sampled exactly on a finite grid from the kernel's covariance
matrix.  The module also provides the decaying weight h_d used to damp
paths at large times, the dyadic chaining upper bound for the sup of a
path, and Monte Carlo estimates of sup-functional event probabilities
with binomial confidence intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError
from .kernels import StationaryKernel

# Cholesky jitter starts at JITTER_FACTOR * kappa(0) and escalates tenfold
# up to JITTER_ESCALATIONS extra attempts before giving up.
JITTER_FACTOR = 1e-10
JITTER_ESCALATIONS = 3

MC_MIN_REPS = 100
CI_Z = 1.96  # normal quantile for the reported ~95% half-width

# Keep Monte Carlo chunks near this many scalars to bound memory.
_CHUNK_SCALARS = 4_000_000


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing grid of times starting at 0."""

    points: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 1:
            raise DomainError("grid needs at least one point")
        if pts[0] != 0.0:
            raise DomainError("grid must start at t = 0")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise DomainError("grid points must be strictly increasing")
        object.__setattr__(self, "points", tuple(float(p) for p in pts))

    @property
    def tau(self) -> float:
        return self.points[-1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)


@dataclass(frozen=True)
class DyadicGrid(TimeGrid):
    """Grid {k * tau / 2^level : k = 0..2^level} on [0, tau]."""

    tau_: float = 0.0
    level: int = 0
    points: tuple = field(default=())

    def __init__(self, tau: float, level: int):
        if not tau > 0:
            raise DomainError(f"tau must be positive, got {tau}")
        if level < 0:
            raise DomainError(f"level must be >= 0, got {level}")
        pts = tuple(float(p) for p in np.linspace(0.0, tau, 2 ** level + 1))
        object.__setattr__(self, "tau_", float(tau))
        object.__setattr__(self, "level", int(level))
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class GpPath:
    """A path observed on a grid, linearly interpolated in between."""

    grid: TimeGrid
    values: tuple
    kernel_id: str = "unspecified"

    def __post_init__(self):
        if len(self.values) != len(self.grid.points):
            raise DomainError("one value per grid point required")
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NumericError("path values must be finite")
        object.__setattr__(self, "values", tuple(float(v) for v in vals))

    def at(self, t):
        """Linear interpolation; refuses to extrapolate beyond the grid."""
        arr = np.asarray(t, dtype=float)
        if np.any(arr < 0) or np.any(arr > self.grid.tau):
            raise DomainError(f"time outside [0, {self.grid.tau}]")
        out = np.interp(arr, self.grid.as_array(), np.asarray(self.values))
        return out if arr.ndim else float(out)

    def sup_abs(self) -> float:
        """max_k |values_k| over the grid."""
        return float(np.max(np.abs(self.values)))


# -- decaying weight --------------------------------------------------------


def h_weight(d: int, t):
    """Decaying weight h_d(t).

    Equal to (d+1)/(1 + log(1 - e^-1)) for t <= 1 and
    (d+1)/(t + log(1 - e^-t)) for t > 1; continuous at t = 1, strictly
    decreasing beyond it, and t * h_d(t)/(d+1) -> 1 as t grows.
    """
    if d < 0:
        raise DomainError(f"d must be >= 0, got {d}")
    scalar = np.ndim(t) == 0
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(arr < 0):
        raise DomainError("weight argument must be nonnegative")
    out = np.empty_like(arr)
    head = arr <= 1.0
    out[head] = (d + 1) / (1.0 + np.log1p(-np.exp(-1.0)))
    tt = arr[~head]
    out[~head] = (d + 1) / (tt + np.log1p(-np.exp(-tt)))
    return float(out[0]) if scalar else out


def transform_hat(path: GpPath, d: int) -> GpPath:
    """Apply the decaying weight pointwise on the path's grid."""
    weights = h_weight(d, path.grid.as_array())
    return GpPath(
        grid=path.grid,
        values=tuple(np.asarray(path.values) * weights),
        kernel_id=path.kernel_id,
    )


# -- exact sampling on a grid ------------------------------------------------


def _covariance_cholesky(kernel: StationaryKernel, points: np.ndarray) -> np.ndarray:
    """Cholesky factor of the grid covariance, with escalating jitter."""
    diff = np.abs(points[:, None] - points[None, :])
    cov = np.asarray(kernel(diff), dtype=float)
    if not np.all(np.isfinite(cov)):
        raise NumericError(f"covariance of {kernel.describe()} not finite on the grid")
    jitter = JITTER_FACTOR * kernel.kappa0
    for attempt in range(JITTER_ESCALATIONS + 1):
        try:
            return np.linalg.cholesky(cov + (jitter * 10.0 ** attempt) * np.eye(len(points)))
        except np.linalg.LinAlgError:
            continue
    raise NumericError(
        f"covariance factorization failed for {kernel.describe()} after "
        f"{JITTER_ESCALATIONS} jitter escalations from {jitter:g}"
    )


def sample_path(kernel: StationaryKernel, grid: TimeGrid, seed: int) -> GpPath:
    """Draw one mean-zero path with covariance kernel(|s-t|) on the grid.

    Deterministic in (kernel, grid, seed).
    """
    points = grid.as_array()
    chol = _covariance_cholesky(kernel, points)
    z = np.random.default_rng(seed).standard_normal(len(points))
    return GpPath(grid=grid, values=tuple(chol @ z), kernel_id=kernel.describe())


def sample_path_matrix(
    kernel: StationaryKernel, grid: TimeGrid, reps: int, seed: int
) -> np.ndarray:
    """Draw `reps` paths as a (reps, npoints) matrix.

    Uses a counter-based bit generator keyed by the seed, so replicate r's
    variates are an addressable block of the stream and the matrix is
    reproducible bit for bit.
    """
    if reps < 1:
        raise DomainError(f"reps must be >= 1, got {reps}")
    points = grid.as_array()
    chol = _covariance_cholesky(kernel, points)
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = len(points)
    out = np.empty((reps, n))
    chunk = max(1, _CHUNK_SCALARS // n)
    done = 0
    while done < reps:
        take = min(chunk, reps - done)
        z = rng.standard_normal((take, n))
        out[done : done + take] = z @ chol.T
        done += take
    return out


# -- dyadic chaining bound ---------------------------------------------------


def dyadic_sup_bound(path: GpPath, max_level: int | None = None) -> float:
    """Chaining upper bound |v(0)| + |v(tau)| + sum_n max_k level-n increments.

    The path must live on a DyadicGrid.  With max_level equal to the grid
    level (the default) the bound dominates the grid sup of |v|.
    """
    grid = path.grid
    if not isinstance(grid, DyadicGrid):
        raise DomainError("dyadic bound requires a path on a DyadicGrid")
    level = grid.level
    if max_level is None:
        max_level = level
    if max_level < 0 or max_level > level:
        raise DomainError(f"max_level must lie in [0, {level}], got {max_level}")
    vals = np.asarray(path.values)
    bound = abs(vals[0]) + abs(vals[-1])
    for n in range(1, max_level + 1):
        stride = 2 ** (level - n)
        sub = vals[::stride]
        bound += float(np.max(np.abs(np.diff(sub))))
    return float(bound)


# -- Monte Carlo event probabilities ----------------------------------------


@dataclass(frozen=True)
class SupConstraint:
    """Event {sup_{t in [a, b]} |path(t)| <sense> threshold} on the grid.

    sense is 'le' or 'ge'; interval endpoints are inclusive and must
    capture at least one grid point.  threshold may be +inf for 'le'.
    """

    interval: tuple
    threshold: float
    sense: str = "le"

    def __post_init__(self):
        a, b = self.interval
        if not (np.isfinite(a) and np.isfinite(b)) or a < 0 or b < a:
            raise DomainError(f"bad interval {self.interval}")
        if self.sense not in ("le", "ge"):
            raise DomainError(f"sense must be 'le' or 'ge', got {self.sense!r}")
        if np.isnan(self.threshold):
            raise DomainError("threshold must not be NaN")

    def describe(self) -> str:
        op = "<=" if self.sense == "le" else ">="
        return f"sup|.| on [{self.interval[0]:g},{self.interval[1]:g}] {op} {self.threshold:g}"


@dataclass(frozen=True)
class EventProbReport:
    p_joint: float
    ci_halfwidth: float
    p_marginals: tuple
    reps: int
    weighted: bool
    constraints: tuple

    def as_record(self) -> dict:
        rec = {
            "p_joint": self.p_joint,
            "ci_halfwidth": self.ci_halfwidth,
            "reps": self.reps,
            "weighted": self.weighted,
        }
        for i, (c, p) in enumerate(zip(self.constraints, self.p_marginals)):
            rec[f"constraint_{i}"] = c
            rec[f"p_marginal_{i}"] = p
        return rec


def mc_event_probability(
    kernel: StationaryKernel,
    d: int,
    weighted: bool,
    constraints,
    horizon: float,
    level: int,
    reps: int,
    seed: int,
) -> EventProbReport:
    """Estimate the joint probability of sup constraints on one path.

    The path is sampled on DyadicGrid(horizon, level); with weighted=True
    constraints apply to h_d * path instead of the raw path.  Marginal
    probabilities for each constraint are reported alongside the joint,
    with a CI_Z * sqrt(p(1-p)/reps) half-width on the joint.
    """
    constraints = tuple(constraints)
    if not constraints:
        raise DomainError("need at least one constraint")
    if reps < MC_MIN_REPS:
        raise DomainError(f"reps must be >= {MC_MIN_REPS}, got {reps}")
    grid = DyadicGrid(horizon, level)
    points = grid.as_array()
    masks = []
    for c in constraints:
        a, b = c.interval
        if b > horizon:
            raise DomainError(f"interval {c.interval} exceeds horizon {horizon}")
        mask = (points >= a) & (points <= b)
        if not mask.any():
            raise DomainError(f"interval {c.interval} contains no grid points")
        masks.append(mask)

    chol = _covariance_cholesky(kernel, points)
    weights = h_weight(d, points) if weighted else None
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = len(points)
    chunk = max(1, _CHUNK_SCALARS // n)

    joint_hits = 0
    marginal_hits = np.zeros(len(constraints), dtype=np.int64)
    done = 0
    while done < reps:
        take = min(chunk, reps - done)
        paths = rng.standard_normal((take, n)) @ chol.T
        if weights is not None:
            paths *= weights
        joint = np.ones(take, dtype=bool)
        for i, (c, mask) in enumerate(zip(constraints, masks)):
            sup = np.max(np.abs(paths[:, mask]), axis=1)
            ind = sup <= c.threshold if c.sense == "le" else sup >= c.threshold
            marginal_hits[i] += int(ind.sum())
            joint &= ind
        joint_hits += int(joint.sum())
        done += take

    p_joint = joint_hits / reps
    ci = CI_Z * float(np.sqrt(p_joint * (1.0 - p_joint) / reps))
    return EventProbReport(
        p_joint=p_joint,
        ci_halfwidth=ci,
        p_marginals=tuple(float(h) / reps for h in marginal_hits),
        reps=reps,
        weighted=weighted,
        constraints=tuple(c.describe() for c in constraints),
    )
