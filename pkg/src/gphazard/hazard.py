"""GP-modulated hazard survival model.

A parameter theta = (omega, eta_0..eta_d) induces, for a covariate x in
[0,1]^d, the hazard

    lambda_x(t) = omega * sigmoid(eta_0(t) + sum_j x_j eta_j(t)),

so omega dominates the hazard everywhere and exact simulation by thinning
is available.  Paths are grid functions (GpPath) interpolated linearly;
cumulative hazards use the trapezoid rule on the path grid refined to at
least MIN_PANELS panels, and evaluation refuses to extrapolate beyond the
grid horizon.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DomainError, GenerationError
from .gp_paths import DyadicGrid, GpPath, TimeGrid, h_weight

MIN_PANELS = 2 ** 8
MC_MIN_REPS = 100
CI_Z = 1.96
MAX_HORIZON_DOUBLINGS = 10


def log_sigmoid(y):
    """log(sigmoid(y)), stable for large |y|."""
    return -np.logaddexp(0.0, -np.asarray(y, dtype=float))


@dataclass(frozen=True)
class Covariate:
    """A point in the covariate cube [0,1]^d (d may be 0)."""

    coords: tuple

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        arr = np.asarray(coords, dtype=float)
        if arr.size and (np.any(arr < 0.0) or np.any(arr > 1.0)):
            raise DomainError(f"covariate coordinates must lie in [0,1], got {coords}")
        object.__setattr__(self, "coords", coords)

    @property
    def d(self) -> int:
        return len(self.coords)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


def _as_covariate(x, d: int) -> Covariate:
    cov = x if isinstance(x, Covariate) else Covariate(tuple(np.atleast_1d(x))) if np.ndim(x) else Covariate((float(x),))
    if cov.d != d:
        raise DomainError(f"covariate has {cov.d} coordinates, model expects {d}")
    return cov


@dataclass(frozen=True)
class Theta:
    """Model parameter: positive scale omega plus d+1 paths on one grid."""

    omega: float
    paths: tuple

    def __post_init__(self):
        if not self.omega > 0:
            raise DomainError(f"omega must be positive, got {self.omega}")
        if not self.paths:
            raise DomainError("theta needs at least the baseline path eta_0")
        base = self.paths[0].grid.points
        if len(base) < 2:
            raise DomainError("theta paths need a grid with at least 2 points")
        for p in self.paths[1:]:
            if p.grid.points != base:
                raise DomainError("all paths of a theta must share one grid")
        object.__setattr__(self, "paths", tuple(self.paths))

    @property
    def d(self) -> int:
        return len(self.paths) - 1

    @property
    def grid(self) -> TimeGrid:
        return self.paths[0].grid

    @property
    def horizon(self) -> float:
        return self.grid.tau

    # -- constructors --------------------------------------------------

    @classmethod
    def constant(cls, omega: float, d: int, horizon: float, level: int = 6) -> "Theta":
        """All paths identically zero: hazard omega/2 for every x and t."""
        grid = DyadicGrid(horizon, level)
        zero = (0.0,) * len(grid.points)
        return cls(omega, tuple(GpPath(grid, zero, "zero") for _ in range(d + 1)))

    @classmethod
    def from_values(cls, omega: float, grid: TimeGrid, values_per_path, kernel_ids=None) -> "Theta":
        ids = kernel_ids or ["unspecified"] * len(values_per_path)
        return cls(omega, tuple(
            GpPath(grid, tuple(v), kid) for v, kid in zip(values_per_path, ids)
        ))

    @classmethod
    def from_weighted(cls, omega: float, grid: TimeGrid, hat_values_per_path) -> "Theta":
        """Build paths whose weighted transform equals the given values.

        Divides by h_d pointwise, so a bounded weighted envelope that decays
        with h_d yields paths compatible with the weighting convention.
        """
        d = len(hat_values_per_path) - 1
        w = h_weight(d, grid.as_array())
        return cls(omega, tuple(
            GpPath(grid, tuple(np.asarray(v, dtype=float) / w)) for v in hat_values_per_path
        ))

    # -- persistence -----------------------------------------------------

    def to_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"eta{j}" for j in range(len(self.paths))])
            for i, t in enumerate(self.grid.points):
                writer.writerow([repr(t)] + [repr(p.values[i]) for p in self.paths])
        grid = self.grid
        meta = {
            "omega": self.omega,
            "kernel_ids": [p.kernel_id for p in self.paths],
            "grid": (
                {"kind": "dyadic", "tau": grid.tau, "level": grid.level}
                if isinstance(grid, DyadicGrid) else {"kind": "plain"}
            ),
        }
        path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def from_csv(cls, path) -> "Theta":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".meta.json").read_text())
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], rows[1:]
        cols = np.array([[float(v) for v in row] for row in data]).T
        ts = cols[0]
        if meta["grid"]["kind"] == "dyadic":
            grid = DyadicGrid(meta["grid"]["tau"], meta["grid"]["level"])
        else:
            grid = TimeGrid(tuple(ts))
        return cls(meta["omega"], tuple(
            GpPath(grid, tuple(col), kid)
            for col, kid in zip(cols[1:], meta["kernel_ids"])
        ))


# -- evaluation ---------------------------------------------------------


@dataclass(frozen=True)
class HazardPoint:
    y: float
    hazard: float
    cum_hazard: float
    survival: float
    density: float


class HazardCurve:
    """Precomputed hazard machinery for one (theta, x) pair.

    Linear interpolation of the combined path Y is exact on the refined
    grid because refinement keeps every original knot; the cumulative
    hazard is the trapezoid rule with knots at the refined grid plus the
    query point.
    """

    def __init__(self, theta: Theta, x):
        cov = _as_covariate(x, theta.d)
        self.theta = theta
        self.x = cov
        base = theta.grid.as_array()
        vals = np.stack([np.asarray(p.values) for p in theta.paths])
        weights = np.concatenate([[1.0], cov.as_array()])
        self._knots = base
        self._y_knots = weights @ vals
        cells = len(base) - 1
        refine = max(1, math.ceil(MIN_PANELS / cells))
        if refine == 1:
            fine = base
        else:
            # per-cell linspace keeps every original knot in the fine grid
            offsets = np.linspace(0.0, 1.0, refine, endpoint=False)
            fine = (base[:-1, None] + offsets[None, :] * np.diff(base)[:, None]).ravel()
            fine = np.append(fine, base[-1])
        self._fine = fine
        self._hazard_fine = self.hazard_at(fine)
        dt = np.diff(fine)
        self._cum = np.concatenate(
            [[0.0], np.cumsum(0.5 * (self._hazard_fine[1:] + self._hazard_fine[:-1]) * dt)]
        )

    def _check_domain(self, t) -> np.ndarray:
        arr = np.asarray(t, dtype=float)
        if np.any(arr < 0) or np.any(arr > self.theta.horizon):
            raise DomainError(
                f"time outside [0, {self.theta.horizon}]; evaluation does not extrapolate"
            )
        return arr

    def y_at(self, t):
        arr = self._check_domain(t)
        out = np.interp(arr, self._knots, self._y_knots)
        return out if arr.ndim else float(out)

    def hazard_at(self, t):
        arr = self._check_domain(t)
        out = self.theta.omega * expit(np.interp(arr, self._knots, self._y_knots))
        return out if arr.ndim else float(out)

    def cum_hazard_at(self, t):
        arr = self._check_domain(t)
        flat = np.atleast_1d(arr)
        idx = np.clip(np.searchsorted(self._fine, flat, side="right") - 1, 0, len(self._fine) - 1)
        t0 = self._fine[idx]
        out = self._cum[idx] + 0.5 * (self._hazard_fine[idx] + self.hazard_at(flat)) * (flat - t0)
        return (out if arr.ndim else float(out[0]))

    def survival_at(self, t):
        return np.exp(-self.cum_hazard_at(t))

    def density_at(self, t):
        return self.hazard_at(t) * self.survival_at(t)

    def point(self, t: float) -> HazardPoint:
        return HazardPoint(
            y=self.y_at(t),
            hazard=self.hazard_at(t),
            cum_hazard=self.cum_hazard_at(t),
            survival=float(self.survival_at(t)),
            density=float(self.density_at(t)),
        )


def evaluate(theta: Theta, x, t: float) -> HazardPoint:
    """Hazard, cumulative hazard, survival and density at one (x, t)."""
    return HazardCurve(theta, x).point(float(t))


def survival_matrix(theta: Theta, xs, ts) -> np.ndarray:
    """S_x(t) for each covariate row x and shared times t, shape (nx, nt).

    Same refined grid, trapezoid cumulative and partial-cell correction as
    HazardCurve, vectorized across rows; results agree with the per-row
    curve up to float reassociation.
    """
    xs = np.asarray(xs, dtype=float).reshape(len(xs), -1)
    if xs.shape[1] != theta.d:
        raise DomainError(f"covariate rows have d={xs.shape[1]}, theta has d={theta.d}")
    if xs.size and (xs.min() < 0 or xs.max() > 1):
        raise DomainError("covariates must lie in [0, 1]")
    ts = np.asarray(ts, dtype=float)
    if ts.size and (ts.min() < 0 or ts.max() > theta.horizon):
        raise DomainError(
            f"time outside [0, {theta.horizon}]; evaluation does not extrapolate"
        )
    base = theta.grid.as_array()
    vals = np.stack([np.asarray(p.values) for p in theta.paths])
    cells = len(base) - 1
    refine = max(1, math.ceil(MIN_PANELS / cells))
    if refine == 1:
        fine = base
    else:
        offsets = np.linspace(0.0, 1.0, refine, endpoint=False)
        fine = (base[:-1, None] + offsets[None, :] * np.diff(base)[:, None]).ravel()
        fine = np.append(fine, base[-1])
    design = np.concatenate([np.ones((len(xs), 1)), xs], axis=1)
    y_fine = np.stack([np.interp(fine, base, v) for v in vals])
    haz_fine = theta.omega * expit(design @ y_fine)
    dt = np.diff(fine)
    cum = np.concatenate(
        [
            np.zeros((len(xs), 1)),
            np.cumsum(0.5 * (haz_fine[:, 1:] + haz_fine[:, :-1]) * dt, axis=1),
        ],
        axis=1,
    )
    idx = np.clip(np.searchsorted(fine, ts, side="right") - 1, 0, len(fine) - 1)
    y_t = np.stack([np.interp(ts, base, v) for v in vals])
    haz_t = theta.omega * expit(design @ y_t)
    lam = cum[:, idx] + 0.5 * (haz_fine[:, idx] + haz_t) * (ts - fine[idx])[None, :]
    return np.exp(-lam)


# -- exact simulation by thinning ---------------------------------------


def sample_time(theta: Theta, x, horizon: float, seed=None, rng=None):
    """Draw one survival time by thinning at the dominating rate omega.

    Returns the time, or None when no event occurs by the horizon.  The
    horizon must not exceed the path grid horizon.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    if horizon <= 0 or horizon > theta.horizon:
        raise DomainError(f"horizon must lie in (0, {theta.horizon}]")
    curve = HazardCurve(theta, x)
    s = 0.0
    while True:
        s += rng.exponential(1.0 / theta.omega)
        if s > horizon:
            return None
        if rng.uniform() < expit(curve.y_at(s)):
            return float(s)


def sample_times_batch(theta: Theta, x, horizon: float, n: int, seed: int):
    """Vectorized thinning: n survival times for one covariate.

    Returns (times, censored): censored entries of times hold NaN.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if horizon <= 0 or horizon > theta.horizon:
        raise DomainError(f"horizon must lie in (0, {theta.horizon}]")
    rng = np.random.default_rng(seed)
    curve = HazardCurve(theta, x)
    times = np.full(n, np.nan)
    s = np.zeros(n)
    active = np.arange(n)
    while active.size:
        s[active] += rng.exponential(1.0 / theta.omega, size=active.size)
        over = s[active] > horizon
        done_over = active[over]
        times[done_over] = np.nan
        active = active[~over]
        if not active.size:
            break
        accept = rng.uniform(size=active.size) < expit(curve.y_at(s[active]))
        times[active[accept]] = s[active[accept]]
        active = active[~accept]
    return times, np.isnan(times)


# -- covariate laws ------------------------------------------------------


@dataclass(frozen=True)
class UniformQ:
    """Uniform law on [0,1]^d."""

    d: int

    def sample(self, rng, n: int) -> np.ndarray:
        return rng.uniform(size=(n, self.d))

    def descriptor(self) -> dict:
        return {"family": "uniform", "d": self.d}


@dataclass(frozen=True)
class ProductBetaQ:
    """Independent Beta(alpha_j, beta_j) coordinates."""

    alphas: tuple
    betas: tuple

    def __post_init__(self):
        if len(self.alphas) != len(self.betas) or not self.alphas:
            raise DomainError("alphas and betas must be equal-length and nonempty")
        if any(a <= 0 for a in self.alphas) or any(b <= 0 for b in self.betas):
            raise DomainError("beta parameters must be positive")

    @property
    def d(self) -> int:
        return len(self.alphas)

    def sample(self, rng, n: int) -> np.ndarray:
        cols = [rng.beta(a, b, size=n) for a, b in zip(self.alphas, self.betas)]
        return np.stack(cols, axis=1)

    def descriptor(self) -> dict:
        return {"family": "product_beta", "alphas": list(self.alphas), "betas": list(self.betas)}


@dataclass(frozen=True)
class TableQ:
    """Finite support law: atoms (m, d) with probabilities (m,)."""

    atoms: tuple
    probs: tuple

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if atoms.ndim != 2 or atoms.shape[0] != probs.size or not probs.size:
            raise DomainError("atoms must be (m, d) with one probability per atom")
        if np.any(atoms < 0) or np.any(atoms > 1):
            raise DomainError("atoms must lie in [0,1]^d")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise DomainError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", tuple(tuple(row) for row in atoms))
        object.__setattr__(self, "probs", tuple(float(p) for p in probs))

    @property
    def d(self) -> int:
        return len(self.atoms[0])

    def sample(self, rng, n: int) -> np.ndarray:
        idx = rng.choice(len(self.probs), size=n, p=np.asarray(self.probs))
        return np.asarray(self.atoms, dtype=float)[idx]

    def descriptor(self) -> dict:
        return {"family": "table", "atoms": [list(a) for a in self.atoms], "probs": list(self.probs)}


# -- datasets -------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalDataset:
    """Observed times and covariates plus the design that produced them."""

    times: tuple
    covariates: tuple       # n rows, each a d-tuple
    design: str             # 'RD' | 'NRD'
    q_descriptor: dict
    horizon: float

    def __post_init__(self):
        if self.design not in ("RD", "NRD"):
            raise DomainError(f"design must be 'RD' or 'NRD', got {self.design!r}")
        if len(self.times) != len(self.covariates):
            raise DomainError("times and covariates must have equal length")

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def d(self) -> int:
        return len(self.covariates[0]) if self.covariates else 0

    def times_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)

    def covariates_array(self) -> np.ndarray:
        return np.asarray(self.covariates, dtype=float).reshape(self.n, -1) if self.n else np.empty((0, 0))

    def to_csv(self, path) -> None:
        path = Path(path)
        d = self.d
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{j + 1}" for j in range(d)])
            for t, row in zip(self.times, self.covariates):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        meta = {
            "design": self.design,
            "q_descriptor": self.q_descriptor,
            "horizon": self.horizon,
        }
        path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def from_csv(cls, path) -> "SurvivalDataset":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".meta.json").read_text())
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = [[float(v) for v in row] for row in rows[1:]]
        return cls(
            times=tuple(r[0] for r in data),
            covariates=tuple(tuple(r[1:]) for r in data),
            design=meta["design"],
            q_descriptor=meta["q_descriptor"],
            horizon=meta["horizon"],
        )


def generate_dataset(theta0: Theta, n: int, design: str, q, horizon: float, seed: int) -> SurvivalDataset:
    """Simulate n uncensored records from theta0.

    design 'RD': q is a covariate law (UniformQ / ProductBetaQ / TableQ)
    sampled i.i.d.  design 'NRD': q is a fixed (>= n, d) array of
    covariates used in order.  A record censored at the horizon is retried
    with the horizon doubled (capped at the path grid horizon) up to
    MAX_HORIZON_DOUBLINGS times before erroring.

    Each record consumes its own spawned random stream, so the dataset is
    reproducible and records are independent.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if horizon <= 0 or horizon > theta0.horizon:
        raise DomainError(f"horizon must lie in (0, {theta0.horizon}]")
    root = np.random.SeedSequence(seed)
    cov_ss, *record_ss = root.spawn(n + 1)

    if design == "RD":
        xs = q.sample(np.random.default_rng(cov_ss), n)
        descriptor = q.descriptor()
    elif design == "NRD":
        xs = np.asarray(q, dtype=float).reshape(len(q), -1)
        if len(xs) < n:
            raise DomainError(f"NRD design needs >= {n} covariate rows, got {len(xs)}")
        xs = xs[:n]
        descriptor = {"family": "fixed", "n": int(n), "d": int(xs.shape[1])}
    else:
        raise DomainError(f"design must be 'RD' or 'NRD', got {design!r}")
    if np.any(xs < 0) or np.any(xs > 1):
        raise DomainError("covariates must lie in [0,1]^d")

    times = np.empty(n)
    for i in range(n):
        rng = np.random.default_rng(record_ss[i])
        h = float(horizon)
        t = None
        for _ in range(MAX_HORIZON_DOUBLINGS + 1):
            t = sample_time(theta0, xs[i], h, rng=rng)
            if t is not None:
                break
            h = min(2.0 * h, theta0.horizon)
        if t is None:
            raise GenerationError(
                f"record {i}: still censored after {MAX_HORIZON_DOUBLINGS} horizon doublings "
                f"(final horizon {h:g}); extend the path grid or lower the horizon"
            )
        times[i] = t
    return SurvivalDataset(
        times=tuple(float(t) for t in times),
        covariates=tuple(tuple(float(v) for v in row) for row in xs),
        design=design,
        q_descriptor=descriptor,
        horizon=float(horizon),
    )


# -- marginal hazard Monte Carlo ------------------------------------------


def mc_mean_hazard(omega: float, kernels, x, t: float, reps: int, seed: int):
    """Estimate E[lambda_x(t)] over path draws; the exact value is omega/2.

    The combined path value at a fixed time is a centred normal, so the
    sigmoid averages to one half regardless of kernels, x, or t.  Returns
    (estimate, ci_halfwidth).
    """
    if not omega > 0:
        raise DomainError(f"omega must be positive, got {omega}")
    if reps < MC_MIN_REPS:
        raise DomainError(f"reps must be >= {MC_MIN_REPS}, got {reps}")
    cov = _as_covariate(x, len(kernels) - 1)
    sds = np.sqrt([k.kappa0 for k in kernels])
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((reps, len(kernels))) * sds
    y = z[:, 0] + (z[:, 1:] @ cov.as_array() if cov.d else 0.0)
    hazards = omega * expit(y)
    estimate = float(hazards.mean())
    ci = CI_Z * float(hazards.std(ddof=1) / np.sqrt(reps))
    return estimate, ci
