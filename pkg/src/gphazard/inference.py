"""Posterior sampling on a knot grid and the empirical consistency experiment.

The sampler works on a finite-dimensional surrogate of the path prior:
each latent path is represented by its values at K fixed knots and
linearly interpolated in between, so the prior on a path is the
multivariate normal its kernel induces at the knots.  Updates are
random-walk Metropolis for the hazard scale and prior-reversible
whole-path moves for the paths, accepted on the likelihood ratio alone.
K is a convergence knob, not part of the model; reports carry it.

The consistency experiment generates datasets of growing size from a
fixed truth, runs the sampler on each, and tracks how much posterior
mass sits outside a metric ball around the truth.  The decision device
is a rank correlation across the size ladder; the theory predicts decay
but no rate, so no rate is asserted.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit
from scipy.stats import spearmanr

from .errors import DomainError, GpHazardError, NumericError
from .gp_paths import TimeGrid, _covariance_cholesky
from .hazard import SurvivalDataset, Theta, generate_dataset, log_sigmoid
from .kernels import StationaryKernel
from .vc import GridSpec, sup_deviation_metric

__all__ = [
    "LIKELIHOOD_PANELS",
    "ThetaRep",
    "OmegaPrior",
    "ModelPrior",
    "McmcConfig",
    "McmcReport",
    "ExperimentSpec",
    "CellResult",
    "ExperimentReport",
    "log_likelihood",
    "log_posterior",
    "mcmc_run",
    "posterior_outside_mass",
    "consistency_experiment",
]

# Trapezoid panels for the likelihood integral; the knot grid is merged
# in so interpolation of the paths stays exact at the knots.
LIKELIHOOD_PANELS = 512

_CHUNK_ROWS = 512


@dataclass(frozen=True)
class ThetaRep:
    """Finite-dimensional state: hazard scale plus path values at knots.

    knots are shared by all d+1 paths, strictly increasing from 0;
    values holds one row of K reals per path.
    """

    omega: float
    knots: tuple
    values: tuple

    def __post_init__(self):
        if not (np.isfinite(self.omega) and self.omega > 0):
            raise DomainError(f"omega must be a positive real, got {self.omega}")
        kn = np.asarray(self.knots, dtype=float)
        if kn.ndim != 1 or kn.size < 2:
            raise DomainError("need at least 2 knots")
        if kn[0] != 0.0 or not np.all(np.diff(kn) > 0):
            raise DomainError("knots must start at 0 and increase strictly")
        rows = tuple(tuple(float(v) for v in row) for row in self.values)
        if not rows:
            raise DomainError("need at least one path row")
        k = kn.size
        for j, row in enumerate(rows):
            if len(row) != k:
                raise DomainError(f"path {j} has {len(row)} values for {k} knots")
            if not all(np.isfinite(row)):
                raise DomainError(f"path {j} has non-finite values")
        object.__setattr__(self, "knots", tuple(float(t) for t in kn))
        object.__setattr__(self, "values", rows)

    @property
    def d(self) -> int:
        return len(self.values) - 1

    @property
    def horizon(self) -> float:
        return self.knots[-1]

    def to_theta(self) -> Theta:
        return Theta.from_values(self.omega, TimeGrid(self.knots), self.values)

    @classmethod
    def from_theta(cls, theta: Theta, knots) -> "ThetaRep":
        """Sample the theta's paths at the given knots."""
        kn = np.asarray(knots, dtype=float)
        if kn.size and kn[-1] > theta.horizon:
            raise DomainError("knots extend past the theta horizon")
        src = np.asarray(theta.grid.points, dtype=float)
        rows = tuple(
            tuple(float(v) for v in np.interp(kn, src, np.asarray(p.values, dtype=float)))
            for p in theta.paths
        )
        return cls(theta.omega, tuple(float(t) for t in kn), rows)


@dataclass(frozen=True)
class OmegaPrior:
    """Gamma law for the hazard scale, by shape and rate."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (np.isfinite(self.shape) and self.shape > 0):
            raise DomainError(f"shape must be a positive real, got {self.shape}")
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise DomainError(f"rate must be a positive real, got {self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def logpdf(self, omega: float) -> float:
        if not omega > 0:
            return -math.inf
        return (
            self.shape * math.log(self.rate)
            - math.lgamma(self.shape)
            + (self.shape - 1.0) * math.log(omega)
            - self.rate * omega
        )


@dataclass(frozen=True)
class ModelPrior:
    """One kernel per path plus the law of the hazard scale."""

    kernels: tuple
    omega: OmegaPrior

    def __post_init__(self):
        ks = tuple(self.kernels)
        if not ks:
            raise DomainError("need at least one kernel")
        for k in ks:
            if not isinstance(k, StationaryKernel):
                raise DomainError(f"kernels must be StationaryKernel, got {type(k).__name__}")
        object.__setattr__(self, "kernels", ks)


@dataclass(frozen=True)
class McmcConfig:
    iterations: int
    burn_in: int
    thinning: int
    proposal_scale_omega: float
    proposal_scale_path: float
    seed: int

    def __post_init__(self):
        for name in ("iterations", "burn_in", "thinning"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise DomainError(f"{name} must be an integer, got {v!r}")
        if self.iterations < 1:
            raise DomainError(f"iterations must be >= 1, got {self.iterations}")
        if self.burn_in < 1:
            raise DomainError(f"burn_in must be >= 1, got {self.burn_in}")
        if self.burn_in >= self.iterations:
            raise DomainError(
                f"burn_in must be < iterations, got {self.burn_in} >= {self.iterations}"
            )
        if self.thinning < 1:
            raise DomainError(f"thinning must be >= 1, got {self.thinning}")
        if not (np.isfinite(self.proposal_scale_omega) and self.proposal_scale_omega > 0):
            raise DomainError("proposal_scale_omega must be positive")
        if not (np.isfinite(self.proposal_scale_path) and 0 < self.proposal_scale_path <= 1):
            raise DomainError("proposal_scale_path must lie in (0, 1]")


class _Likelihood:
    """Per-dataset workspace for the observed-data log likelihood.

    The integral of the hazard link over [0, t_i] is a trapezoid rule on
    one shared refined grid; each record then needs only a cumulative
    lookup plus its fractional last panel.  With no covariates all
    records share one path, so evaluation is linear in n; otherwise
    records are processed in row chunks.
    """

    def __init__(self, dataset: SurvivalDataset, knots):
        kn = np.asarray(knots, dtype=float)
        t = dataset.times_array()
        horizon = float(kn[-1])
        if dataset.horizon > horizon:
            raise DomainError(
                f"dataset horizon {dataset.horizon:g} exceeds representation horizon {horizon:g}"
            )
        if t.size and float(t.max()) > horizon:
            raise DomainError("a record time lies past the representation horizon")
        base = np.linspace(0.0, horizon, LIKELIHOOD_PANELS + 1)
        grid = np.union1d(base, kn)
        self.knots = kn
        self.grid = grid
        self.dg = np.diff(grid)
        self.t = t
        self.x = dataset.covariates_array()
        self.d = dataset.d
        self.n = dataset.n
        self.pos = np.clip(np.searchsorted(grid, t, side="left") - 1, 0, grid.size - 2)
        self.rem = t - grid[self.pos]
        if self.d > 0:
            # trapezoid weights per record over grid nodes, truncated at
            # t_i; the off-grid half of the last panel stays separate
            active = np.arange(grid.size - 1)[None, :] < self.pos[:, None]
            w = np.zeros((self.n, grid.size))
            w[:, :-1] += 0.5 * self.dg * active
            w[:, 1:] += 0.5 * self.dg * active
            w[np.arange(self.n), self.pos] += 0.5 * self.rem
            self.weights = w

    def pieces(self, values) -> tuple:
        """(log link at each record time, integrated link over [0, t_i])."""
        vals = np.asarray(values, dtype=float)
        on_grid = np.vstack([np.interp(self.grid, self.knots, row) for row in vals])
        at_t = np.vstack([np.interp(self.t, self.knots, row) for row in vals])
        if self.d == 0:
            yt = at_t[0]
            sig = expit(on_grid[0])
            cum = np.concatenate(
                ([0.0], np.cumsum(0.5 * (sig[1:] + sig[:-1]) * self.dg))
            )
            lam = cum[self.pos] + 0.5 * (sig[self.pos] + expit(yt)) * self.rem
            return log_sigmoid(yt), lam
        yt = at_t[0] + np.einsum("nd,dn->n", self.x, at_t[1:])
        lam = np.empty(self.n)
        for a in range(0, self.n, _CHUNK_ROWS):
            b = min(a + _CHUNK_ROWS, self.n)
            y = on_grid[0][None, :] + self.x[a:b] @ on_grid[1:]
            sig = expit(y)
            lam[a:b] = np.einsum("ng,ng->n", sig, self.weights[a:b])
        lam += 0.5 * self.rem * expit(yt)
        return log_sigmoid(yt), lam

    def parts(self, values) -> tuple:
        logsig, lam = self.pieces(values)
        return float(np.sum(logsig)), float(np.sum(lam))

    def per_record(self, omega: float, values) -> np.ndarray:
        logsig, lam = self.pieces(values)
        with np.errstate(over="ignore"):
            # overflow here is the non-finite case the caller reports
            return math.log(omega) + logsig - omega * lam


def _require_compatible(rep: ThetaRep, dataset: SurvivalDataset):
    if rep.d != dataset.d:
        raise DomainError(f"representation has d={rep.d}, dataset has d={dataset.d}")


def log_likelihood(rep: ThetaRep, dataset: SurvivalDataset) -> float:
    """Sum of log densities of the observed records under rep."""
    _require_compatible(rep, dataset)
    if dataset.n == 0:
        raise DomainError("dataset is empty")
    per = _Likelihood(dataset, rep.knots).per_record(rep.omega, rep.values)
    bad = np.flatnonzero(~np.isfinite(per))
    if bad.size:
        raise NumericError(f"record {int(bad[0])}: non-finite log-likelihood")
    return float(np.sum(per))


def _path_log_prior(values, knots, kernels) -> float:
    kn = np.asarray(knots, dtype=float)
    k = kn.size
    lp = 0.0
    for row, kernel in zip(values, kernels):
        chol = _covariance_cholesky(kernel, kn)
        z = solve_triangular(chol, np.asarray(row, dtype=float), lower=True)
        lp += -0.5 * float(z @ z) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * k * math.log(2.0 * math.pi)
    return lp


def log_posterior(rep: ThetaRep, dataset: SurvivalDataset, prior: ModelPrior) -> float:
    """Log likelihood plus log prior of the knot values and the scale."""
    if len(prior.kernels) != rep.d + 1:
        raise DomainError(
            f"prior has {len(prior.kernels)} kernels for d={rep.d} (need {rep.d + 1})"
        )
    lik = log_likelihood(rep, dataset)
    return lik + _path_log_prior(rep.values, rep.knots, prior.kernels) + prior.omega.logpdf(rep.omega)


def _pcn_step(row, chol, beta, loglik_fn, current_ll, rng):
    """One prior-reversible path update, accepted on likelihood ratio.

    The proposal sqrt(1-beta^2) row + beta noise leaves the prior
    invariant, so the prior density cancels from the acceptance ratio.
    Returns (row, loglik, accepted).
    """
    noise = chol @ rng.standard_normal(len(row))
    prop = math.sqrt(1.0 - beta * beta) * np.asarray(row, dtype=float) + beta * noise
    ll = float(loglik_fn(prop))
    delta = ll - current_ll
    if delta >= 0.0 or rng.random() < math.exp(max(delta, -745.0)):
        return prop, ll, True
    return np.asarray(row, dtype=float), current_ll, False


@dataclass(frozen=True)
class McmcReport:
    """Thinned post-burn-in draws plus per-block acceptance accounting."""

    draws: tuple
    acceptance_omega: float
    acceptance_paths: float
    warnings: tuple
    knots: tuple
    prior_only: bool

    def as_record(self) -> dict:
        return {
            "n_draws": len(self.draws),
            "acceptance_omega": self.acceptance_omega,
            "acceptance_paths": self.acceptance_paths,
            "warnings": list(self.warnings),
            "n_knots": len(self.knots),
            "prior_only": self.prior_only,
        }


def mcmc_run(
    dataset,
    prior: ModelPrior,
    config: McmcConfig,
    knots,
    prior_only: bool = False,
) -> McmcReport:
    """Random-walk sampler over (omega, path values at knots).

    Blocks per iteration: a multiplicative log-normal move on omega
    (Metropolis-Hastings against prior times likelihood), then one
    prior-reversible move per path accepted on the likelihood ratio.
    With prior_only the likelihood is dropped: path moves always accept
    and omega targets its prior, which makes the draws a prior sample
    for calibration checks.  Deterministic given config.seed.

    Acceptance rates are measured after burn_in; rates below 1% or
    above 99% are reported as warnings, not errors.
    """
    kn = tuple(float(t) for t in np.asarray(knots, dtype=float))
    if len(kn) < 2 or kn[0] != 0.0 or not all(b > a for a, b in zip(kn, kn[1:])):
        raise DomainError("knots must start at 0 and increase strictly")
    d = len(prior.kernels) - 1
    lik = None
    if not prior_only:
        if dataset is None or dataset.n == 0:
            raise DomainError("dataset must be nonempty unless prior_only")
        if dataset.d != d:
            raise DomainError(f"dataset has d={dataset.d}, prior covers d={d}")
        lik = _Likelihood(dataset, kn)
    n = 0 if lik is None else lik.n

    k = len(kn)
    chols = [_covariance_cholesky(kernel, np.asarray(kn)) for kernel in prior.kernels]
    rng = np.random.default_rng(config.seed)
    beta = config.proposal_scale_path

    omega = prior.omega.mean
    values = np.vstack([chol @ rng.standard_normal(k) for chol in chols])
    s_cur, i_cur = lik.parts(values) if lik is not None else (0.0, 0.0)

    draws = []
    acc = {"omega": 0, "paths": 0}
    tries = {"omega": 0, "paths": 0}
    post_burn = lambda it: it >= config.burn_in

    stash = [None]

    def path_ll(candidate_rows):
        s, i = lik.parts(candidate_rows)
        stash[0] = (s, i)
        return s - omega * i

    for it in range(config.iterations):
        # omega block
        z = rng.standard_normal()
        w_new = omega * math.exp(config.proposal_scale_omega * z)
        hastings = math.log(w_new / omega)
        if prior_only:
            delta = prior.omega.logpdf(w_new) - prior.omega.logpdf(omega) + hastings
        else:
            delta = (
                n * (math.log(w_new) - math.log(omega))
                - (w_new - omega) * i_cur
                + prior.omega.logpdf(w_new)
                - prior.omega.logpdf(omega)
                + hastings
            )
        if post_burn(it):
            tries["omega"] += 1
        if delta >= 0.0 or rng.random() < math.exp(max(delta, -745.0)):
            omega = w_new
            if post_burn(it):
                acc["omega"] += 1

        # path blocks
        for j in range(d + 1):
            if post_burn(it):
                tries["paths"] += 1
            if prior_only:
                noise = chols[j] @ rng.standard_normal(k)
                values[j] = math.sqrt(1.0 - beta * beta) * values[j] + beta * noise
                if post_burn(it):
                    acc["paths"] += 1
                continue
            cur_ll = s_cur - omega * i_cur

            def one_path_ll(row, j=j):
                cand = values.copy()
                cand[j] = row
                return path_ll(cand)

            row, _, accepted = _pcn_step(values[j], chols[j], beta, one_path_ll, cur_ll, rng)
            if accepted:
                values[j] = row
                s_cur, i_cur = stash[0]
                if post_burn(it):
                    acc["paths"] += 1

        if post_burn(it) and (it - config.burn_in) % config.thinning == 0:
            draws.append(
                ThetaRep(omega, kn, tuple(tuple(float(v) for v in row) for row in values))
            )

    rate_omega = acc["omega"] / tries["omega"] if tries["omega"] else 0.0
    rate_paths = acc["paths"] / tries["paths"] if tries["paths"] else 0.0
    warnings = []
    if rate_omega < 0.01:
        warnings.append(f"omega acceptance rate {rate_omega:.4f} below 1% after burn-in")
    elif rate_omega > 0.99:
        warnings.append(f"omega acceptance rate {rate_omega:.4f} above 99% after burn-in")
    if not prior_only:
        # prior-only path moves accept by construction, nothing to flag
        if rate_paths < 0.01:
            warnings.append(f"path acceptance rate {rate_paths:.4f} below 1% after burn-in")
        elif rate_paths > 0.99:
            warnings.append(f"path acceptance rate {rate_paths:.4f} above 99% after burn-in")

    return McmcReport(
        draws=tuple(draws),
        acceptance_omega=rate_omega,
        acceptance_paths=rate_paths,
        warnings=tuple(warnings),
        knots=kn,
        prior_only=prior_only,
    )


def posterior_outside_mass(
    draws,
    theta0: Theta,
    epsilon: float,
    design: str,
    q_grid,
    grid: GridSpec,
) -> float:
    """Fraction of draws farther than epsilon from theta0 in the sup metric."""
    draws = tuple(draws)
    if not draws:
        raise DomainError("need at least one draw")
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise DomainError(f"epsilon must be a positive real, got {epsilon}")
    outside = 0
    for rep in draws:
        value = sup_deviation_metric(rep.to_theta(), theta0, design, q_grid, grid).value
        if value > epsilon:
            outside += 1
    return outside / len(draws)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one consistency run needs, fixed up front.

    Datasets are generated from theta0 at each ladder size, the sampler
    runs with mcmc (its seed field is replaced per cell), and the
    outside mass is measured with (design, q, metric_grid) at epsilon.
    Per-cell streams derive from (seed, n, rep).
    """

    theta0: Theta
    prior: ModelPrior
    n_ladder: tuple
    epsilon: float
    design: str
    q: object
    replications: int
    mcmc: McmcConfig
    knots: tuple
    metric_grid: GridSpec
    horizon: float
    seed: int = 0

    def __post_init__(self):
        ladder = tuple(int(n) for n in self.n_ladder)
        if not ladder or any(n < 1 for n in ladder):
            raise DomainError("n_ladder must be nonempty positive integers")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise DomainError("n_ladder must increase strictly")
        object.__setattr__(self, "n_ladder", ladder)
        if isinstance(self.replications, bool) or not isinstance(self.replications, (int, np.integer)):
            raise DomainError(f"replications must be an integer, got {self.replications!r}")
        if self.replications < 1:
            raise DomainError(f"replications must be >= 1, got {self.replications}")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise DomainError(f"epsilon must be a positive real, got {self.epsilon}")
        if not 0 < self.horizon <= self.theta0.horizon:
            raise DomainError("horizon must be positive and within the truth's grid")
        kn = tuple(float(t) for t in self.knots)
        if kn[-1] < self.theta0.horizon:
            raise DomainError(
                "knots must cover the truth horizon; censored records are retried "
                "with doubled horizons up to it"
            )
        object.__setattr__(self, "knots", kn)


@dataclass(frozen=True)
class CellResult:
    n: int
    rep: int
    outside_mass: float
    acceptance_omega: float
    acceptance_paths: float
    wall_time: float
    error: str = ""


@dataclass(frozen=True)
class ExperimentReport:
    """Per-cell results plus the ladder-level trend verdict."""

    cells: tuple
    per_n: tuple
    spearman: float
    consistent_trend: bool
    epsilon: float

    def to_csv(self) -> str:
        lines = ["n,rep,outside_mass,acceptance_omega,acceptance_paths,wall_time"]
        for c in self.cells:
            lines.append(
                f"{c.n},{c.rep},{c.outside_mass!r},{c.acceptance_omega!r},"
                f"{c.acceptance_paths!r},{c.wall_time!r}"
            )
        return "\n".join(lines) + "\n"

    def as_record(self) -> dict:
        return {
            "spearman": self.spearman,
            "consistent_trend": self.consistent_trend,
            "epsilon": self.epsilon,
            "per_n": {str(n): m for n, m in self.per_n},
            "cells": len(self.cells),
            "failures": sum(1 for c in self.cells if c.error),
        }


def consistency_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """Outside-mass trend across a ladder of dataset sizes.

    Every (n, replication) cell generates its own dataset, runs its own
    chain, and records the posterior mass outside the epsilon ball; a
    cell that raises a package error is recorded with the message and
    the rest of the grid still runs.  The trend statistic is the
    Spearman correlation between n and outside mass over successful
    cells; at or below -0.8 the report declares a consistent trend.
    """
    cells = []
    for n in spec.n_ladder:
        for rep in range(spec.replications):
            seq = np.random.SeedSequence(spec.seed, spawn_key=(n, rep))
            data_seed, chain_seed = (int(s) for s in seq.generate_state(2))
            start = time.perf_counter()
            try:
                dataset = generate_dataset(
                    spec.theta0, n, spec.design, spec.q, spec.horizon, data_seed
                )
                run = mcmc_run(
                    dataset, spec.prior, replace(spec.mcmc, seed=chain_seed), spec.knots
                )
                mass = posterior_outside_mass(
                    run.draws, spec.theta0, spec.epsilon, spec.design, spec.q, spec.metric_grid
                )
                cells.append(
                    CellResult(
                        n=n,
                        rep=rep,
                        outside_mass=mass,
                        acceptance_omega=run.acceptance_omega,
                        acceptance_paths=run.acceptance_paths,
                        wall_time=time.perf_counter() - start,
                    )
                )
            except GpHazardError as exc:
                cells.append(
                    CellResult(
                        n=n,
                        rep=rep,
                        outside_mass=math.nan,
                        acceptance_omega=math.nan,
                        acceptance_paths=math.nan,
                        wall_time=time.perf_counter() - start,
                        error=str(exc),
                    )
                )

    good = [c for c in cells if not c.error]
    per_n = []
    for n in spec.n_ladder:
        masses = [c.outside_mass for c in good if c.n == n]
        if masses:
            per_n.append((n, float(np.mean(masses))))
    ns = np.array([c.n for c in good], dtype=float)
    ms = np.array([c.outside_mass for c in good], dtype=float)
    if ns.size < 2 or np.all(ms == ms[0]) or np.all(ns == ns[0]):
        rho = math.nan
    else:
        rho = float(spearmanr(ns, ms).statistic)
    consistent = bool(np.isfinite(rho) and rho <= -0.8)
    return ExperimentReport(
        cells=tuple(cells),
        per_n=tuple(per_n),
        spearman=rho,
        consistent_trend=consistent,
        epsilon=spec.epsilon,
    )
