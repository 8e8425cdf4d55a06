"""Divergence diagnostics between hazard model parameters.

Given a reference parameter theta0 and a candidate theta, this module
computes the log density ratio and its first two moments under theta0,
decides membership in the perturbation neighborhood that the posterior
consistency argument relies on, checks the sigmoid-link sup inequalities
that neighborhood buys, and assembles the matching closed-form upper
bounds so every displayed inequality can be instantiated numerically.

All time integrals split at a finite cutoff: the body is Simpson
quadrature on [0, t_cut], the remainder is bounded analytically against
the dominating envelope omega0 * exp(-omega0 * sigma_min * t), where
sigma_min is the grid minimum of the reference link value.  Tail bounds
are reported separately from the body so callers can see what part of a
number is quadrature and what part is envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.special import expit, polygamma

from .errors import DomainError, GenerationError, NumericError
from .gp_paths import h_weight
from .hazard import Covariate, HazardCurve, Theta, log_sigmoid
from .vc import QAtoms, q_atoms_from_law

DEFAULT_PANELS = 2048
T_CUT_SCALE = 40.0
B_GRID_REFINE = 129
SUP_GRID_REFINE = 257


@dataclass(frozen=True)
class BSetParams:
    """Size delta and changeover time tau of a perturbation neighborhood.

    delta must lie in (0, 1/2).  tau >= 1 is accepted; the sup and decay
    conditions are stated relative to it.
    """

    delta: float
    tau: float
    d: int

    def __post_init__(self):
        if not 0.0 < self.delta < 0.5:
            raise DomainError(f"delta must lie in (0, 1/2), got {self.delta}")
        if not self.tau >= 1.0:
            raise DomainError(f"tau must be >= 1, got {self.tau}")
        if int(self.d) != self.d or self.d < 0:
            raise DomainError(f"d must be a nonnegative integer, got {self.d}")
        object.__setattr__(self, "d", int(self.d))

    @property
    def sup_limit(self) -> float:
        return self.delta / (1.0 + self.tau)


@dataclass(frozen=True)
class Quadrature:
    """Body cutoff and Simpson panel count for the moment integrals."""

    t_cut: float
    panels: int = DEFAULT_PANELS

    def __post_init__(self):
        if not self.t_cut > 0:
            raise DomainError(f"t_cut must be positive, got {self.t_cut}")
        if self.panels < 8 or self.panels % 2:
            raise DomainError(f"panels must be even and >= 8, got {self.panels}")

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_cut, self.panels + 1)


def default_quadrature(theta0: Theta, theta: Theta | None = None) -> Quadrature:
    """Cutoff 40/omega0 clipped to the shortest horizon involved."""
    t_cut = min(T_CUT_SCALE / theta0.omega, theta0.horizon)
    if theta is not None:
        t_cut = min(t_cut, theta.horizon)
    return Quadrature(t_cut=t_cut)


def _log_density(curve: HazardCurve, ts: np.ndarray) -> np.ndarray:
    # log f = log(omega) + log sigmoid(Y) - cumulative hazard, stable form
    return (
        math.log(curve.theta.omega)
        + log_sigmoid(curve.y_at(ts))
        - curve.cum_hazard_at(ts)
    )


def upsilon(theta0: Theta, theta: Theta, x, t: float) -> float:
    """Log density ratio log f_x(t; theta0) - log f_x(t; theta).

    Finite for every t inside both horizons because the hazard is pinned
    inside (0, omega].  Refuses t outside either grid.
    """
    t = float(t)
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    c0 = HazardCurve(theta0, x)
    c1 = HazardCurve(theta, x)
    ts = np.asarray([t])
    return float(_log_density(c0, ts)[0] - _log_density(c1, ts)[0])


def _exp_tail_moments(rate: float, t0: float) -> tuple:
    """Integrals of t^k e^{-rate (t - t0)} over [t0, inf) for k = 0, 1, 2."""
    e0 = 1.0 / rate
    e1 = t0 / rate + 1.0 / rate ** 2
    e2 = t0 ** 2 / rate + 2.0 * t0 / rate ** 2 + 2.0 / rate ** 3
    return e0, e1, e2


def _same_parameter(theta0: Theta, theta: Theta) -> bool:
    if theta0 is theta:
        return True
    if theta0.omega != theta.omega or theta0.d != theta.d:
        return False
    if theta0.grid.points != theta.grid.points:
        return False
    return all(a.values == b.values for a, b in zip(theta0.paths, theta.paths))


@dataclass(frozen=True)
class KlTerms:
    """First two moments of the log ratio, body quadrature plus tail bound.

    k and v are the reported divergence and variance; k_tail_bound and
    v2_tail_bound are the envelope parts already included in them.
    """

    k: float
    v: float
    k_body: float
    k_tail_bound: float
    v2_body: float
    v2_tail_bound: float
    sigma_min: float
    t_cut: float

    def as_record(self) -> dict:
        return {
            "k": self.k,
            "v": self.v,
            "k_body": self.k_body,
            "k_tail_bound": self.k_tail_bound,
            "v2_body": self.v2_body,
            "v2_tail_bound": self.v2_tail_bound,
            "sigma_min": self.sigma_min,
            "t_cut": self.t_cut,
        }


def kl_terms(theta0: Theta, theta: Theta, x, quad: Quadrature | None = None) -> KlTerms:
    """Divergence K and variance V of the log ratio under theta0 at one x.

    The body integrates the exact log ratio against the theta0 density on
    [0, t_cut].  Beyond the cutoff the ratio obeys the linear growth
    envelope |log ratio| <= |log(omega0/omega)| + (2 + omega0 + omega) t,
    valid on the decay-regular class where the link stays above e^{-t};
    it is integrated against the density cap
    omega0 * S0(t_cut) * e^{-omega0 sigma_min (t - t_cut)}, which anchors
    the envelope at the survival already accumulated by the cutoff, and
    added.  Identical parameters short-circuit to exact zeros.
    """
    if quad is None:
        quad = default_quadrature(theta0, theta)
    if theta0.d != theta.d:
        raise DomainError("parameters must share the covariate dimension")
    if quad.t_cut > theta0.horizon or quad.t_cut > theta.horizon:
        raise DomainError("quadrature cutoff exceeds a parameter horizon")
    ts = quad.nodes()
    c0 = HazardCurve(theta0, x)
    y0 = c0.y_at(ts)
    sigma_min = float(np.min(expit(y0)))
    if _same_parameter(theta0, theta):
        return KlTerms(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, sigma_min, quad.t_cut)
    c1 = HazardCurve(theta, x)
    cum0 = c0.cum_hazard_at(ts)
    ups = (
        math.log(theta0.omega / theta.omega)
        + (log_sigmoid(y0) - log_sigmoid(c1.y_at(ts)))
        - (cum0 - c1.cum_hazard_at(ts))
    )
    f0 = np.exp(math.log(theta0.omega) + log_sigmoid(y0) - cum0)
    k_body = float(simpson(ups * f0, x=ts))
    v2_body = float(simpson(ups * ups * f0, x=ts))
    if not (math.isfinite(k_body) and math.isfinite(v2_body)):
        raise NumericError("log-ratio quadrature is not finite")
    if sigma_min <= 0.0:
        raise NumericError(
            "link lower bound underflows to zero on the grid; tail envelope degenerate"
        )
    rate = theta0.omega * sigma_min
    a = abs(math.log(theta0.omega / theta.omega))
    b = 2.0 + theta0.omega + theta.omega
    s_cut = math.exp(-float(cum0[-1]))
    e0, e1, e2 = _exp_tail_moments(rate, quad.t_cut)
    k_tail = theta0.omega * s_cut * (a * e0 + b * e1)
    v2_tail = theta0.omega * s_cut * (a * a * e0 + 2.0 * a * b * e1 + b * b * e2)
    k = k_body + k_tail
    v = v2_body + v2_tail - k * k
    return KlTerms(k, v, k_body, k_tail, v2_body, v2_tail, sigma_min, quad.t_cut)


def _coerce_x(x, d: int) -> Covariate:
    if isinstance(x, Covariate):
        cov = x
    else:
        cov = Covariate(tuple(np.asarray(x, dtype=float).ravel()))
    if cov.d != d:
        raise DomainError(f"covariate has {cov.d} coordinates, model expects {d}")
    return cov


@dataclass(frozen=True)
class KlAggregate:
    """Design-level reduction of per-covariate divergence terms."""

    design: str
    value: float
    per_x: tuple
    v_weighted_partial: float | None = None
    v_weighted_tail_bound: float | None = None
    n: int | None = None

    def as_record(self) -> dict:
        rec = {"design": self.design, "value": self.value}
        if self.design == "NRD":
            rec["v_weighted_partial"] = self.v_weighted_partial
            rec["v_weighted_tail_bound"] = self.v_weighted_tail_bound
            rec["n"] = self.n
        return rec


def kl_aggregate(
    theta0: Theta,
    theta: Theta,
    design: str,
    q_grid=None,
    xs=None,
    quad: Quadrature | None = None,
) -> KlAggregate:
    """Average (RD) or worst-case (NRD) divergence over the covariates.

    RD needs a covariate law or explicit atoms and returns the weighted
    mean of K.  NRD needs the covariate sequence x_1..x_n and returns the
    max of K, plus the position-weighted variance sum Sum V_i / i^2 with
    its remainder bounded by (max V) * Sum_{i>n} i^{-2}.
    """
    if quad is None:
        quad = default_quadrature(theta0, theta)
    d = theta0.d
    if design == "RD":
        if q_grid is None:
            raise DomainError("RD aggregation needs a covariate law or atoms")
        atoms = q_grid if isinstance(q_grid, QAtoms) else q_atoms_from_law(q_grid)
        if atoms.d != d:
            raise DomainError(f"atoms have d={atoms.d}, model expects {d}")
        per = []
        total = 0.0
        for row, w in zip(atoms.nodes, atoms.weights):
            terms = kl_terms(theta0, theta, Covariate(tuple(row)), quad)
            per.append((tuple(row), terms.k, terms.v, float(w)))
            total += w * terms.k
        return KlAggregate("RD", total, tuple(per))
    if design == "NRD":
        if xs is None or not len(xs):
            raise DomainError("NRD aggregation needs the fixed covariate list")
        coords = [_coerce_x(x, d).coords for x in xs]
        cache: dict = {}
        for c in coords:
            if c not in cache:
                cache[c] = kl_terms(theta0, theta, Covariate(c), quad)
        n = len(coords)
        ks = np.asarray([cache[c].k for c in coords])
        vs = np.asarray([cache[c].v for c in coords])
        idx = np.arange(1, n + 1, dtype=float)
        partial = float(np.sum(vs / idx ** 2))
        tail = float(np.max(vs)) * float(polygamma(1, n + 1))
        per = tuple((c, t.k, t.v, coords.count(c) / n) for c, t in cache.items())
        return KlAggregate("NRD", float(np.max(ks)), per, partial, tail, n)
    raise DomainError(f"design must be 'RD' or 'NRD', got {design!r}")


# -- neighborhood membership ---------------------------------------------


def _paths_on(theta: Theta, ts: np.ndarray) -> np.ndarray:
    knots = np.asarray(theta.grid.points)
    return np.stack([
        np.interp(ts, knots, np.asarray(p.values, dtype=float)) for p in theta.paths
    ])


@dataclass(frozen=True)
class BSetReport:
    """Outcome of the three defining neighborhood conditions."""

    omega_ok: bool
    sup_ok: tuple
    inf_ok: tuple
    member: bool
    truncated: bool
    omega_gap: float
    sup_gaps: tuple
    inf_values: tuple

    def as_record(self) -> dict:
        return {
            "omega_ok": self.omega_ok,
            "sup_ok": list(self.sup_ok),
            "inf_ok": list(self.inf_ok),
            "member": self.member,
            "truncated": self.truncated,
            "omega_gap": self.omega_gap,
            "sup_gaps": list(self.sup_gaps),
            "inf_values": list(self.inf_values),
        }


def b_set_membership(theta: Theta, theta0: Theta, params: BSetParams) -> BSetReport:
    """Check the scale band, the sup band on [0, tau], and the decay floor.

    The scale condition |omega/omega0 - 1| < delta is strict, the sup
    condition is inclusive, and the weighted floor eta_j * h_d > -1 is
    strict, evaluated for t > tau on the grid only; the report is flagged
    truncated because the grid horizon cuts that infimum short.
    """
    if theta.d != theta0.d:
        raise DomainError("parameters must share the covariate dimension")
    if params.d != theta.d:
        raise DomainError(f"params expect d={params.d}, parameters have d={theta.d}")
    horizon = min(theta.horizon, theta0.horizon)
    if params.tau >= horizon:
        raise DomainError(
            f"tau={params.tau} leaves no grid beyond it inside horizon {horizon}"
        )
    knots = np.union1d(np.asarray(theta.grid.points), np.asarray(theta0.grid.points))
    omega_gap = abs(theta.omega / theta0.omega - 1.0)
    omega_ok = omega_gap < params.delta

    body = np.union1d(knots[knots <= params.tau], [0.0, params.tau])
    gaps = np.max(np.abs(_paths_on(theta, body) - _paths_on(theta0, body)), axis=1)
    sup_ok = tuple(bool(g <= params.sup_limit) for g in gaps)

    beyond = np.union1d(
        knots[(knots > params.tau) & (knots <= horizon)],
        np.linspace(params.tau, horizon, B_GRID_REFINE)[1:],
    )
    weighted = _paths_on(theta, beyond) * h_weight(theta.d, beyond)[None, :]
    inf_vals = np.min(weighted, axis=1)
    inf_ok = tuple(bool(v > -1.0) for v in inf_vals)

    member = omega_ok and all(sup_ok) and all(inf_ok)
    return BSetReport(
        omega_ok=bool(omega_ok),
        sup_ok=sup_ok,
        inf_ok=inf_ok,
        member=member,
        truncated=theta.horizon < math.inf,
        omega_gap=float(omega_gap),
        sup_gaps=tuple(float(g) for g in gaps),
        inf_values=tuple(float(v) for v in inf_vals),
    )


@dataclass(frozen=True)
class LinkSupReport:
    """Observed link gaps on [0, tau] against the (d+1) delta/(1+tau) cap."""

    max_sigma_gap: float
    max_logsigma_gap: float
    bound: float
    passed: bool
    vacuous: bool

    def as_record(self) -> dict:
        return {
            "max_sigma_gap": self.max_sigma_gap,
            "max_logsigma_gap": self.max_logsigma_gap,
            "bound": self.bound,
            "passed": self.passed,
            "vacuous": self.vacuous,
        }


def link_sup_check(theta: Theta, theta0: Theta, params: BSetParams, x_samples) -> LinkSupReport:
    """Max gap of sigmoid(Y_x) and log sigmoid(Y_x) over times and samples.

    Valid as an inequality only for neighborhood members; if membership
    fails (or cannot be established), the report is flagged vacuous but
    the maxima are still returned.
    """
    if theta.d != theta0.d or params.d != theta.d:
        raise DomainError("dimension mismatch between parameters and params")
    horizon = min(theta.horizon, theta0.horizon)
    if params.tau > horizon:
        raise DomainError(f"tau={params.tau} exceeds horizon {horizon}")
    try:
        vacuous = not b_set_membership(theta, theta0, params).member
    except DomainError:
        vacuous = True
    knots = np.union1d(np.asarray(theta.grid.points), np.asarray(theta0.grid.points))
    ts = np.union1d(knots[knots <= params.tau], np.linspace(0.0, params.tau, SUP_GRID_REFINE))
    eta = _paths_on(theta, ts)
    eta0 = _paths_on(theta0, ts)
    sig_gap = 0.0
    log_gap = 0.0
    for x in x_samples:
        cov = _coerce_x(x, theta.d)
        w = np.concatenate([[1.0], cov.as_array()])
        y = w @ eta
        y0 = w @ eta0
        sig_gap = max(sig_gap, float(np.max(np.abs(expit(y) - expit(y0)))))
        log_gap = max(log_gap, float(np.max(np.abs(log_sigmoid(y) - log_sigmoid(y0)))))
    bound = (theta.d + 1) * params.delta / (1.0 + params.tau)
    return LinkSupReport(
        max_sigma_gap=sig_gap,
        max_logsigma_gap=log_gap,
        bound=bound,
        passed=sig_gap <= bound and log_gap <= bound,
        vacuous=vacuous,
    )


# -- closed-form bounds ----------------------------------------------------


@dataclass(frozen=True)
class MomentInputs:
    """Reference-law moments the closed-form bounds are assembled from.

    e_t and e_t2 are full first and second moments of the lifetime;
    e_t_tail and p_tail are E(T 1{T>tau}) and P(T>tau) at the params tau.
    """

    e_t: float
    e_t_tail: float
    p_tail: float
    e_t2: float

    def __post_init__(self):
        for name in ("e_t", "e_t_tail", "p_tail", "e_t2"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class KlBounds:
    """The four assembled upper bounds plus the scale-log constant."""

    head_bound: float
    tail_bound: float
    var_head_bound: float
    var_tail_bound: float
    k0: float

    def as_record(self) -> dict:
        return {
            "head_bound": self.head_bound,
            "tail_bound": self.tail_bound,
            "var_head_bound": self.var_head_bound,
            "var_tail_bound": self.var_tail_bound,
            "k0": self.k0,
        }


def analytic_kl_bounds(params: BSetParams, omega0: float, moments: MomentInputs) -> KlBounds:
    """Closed-form caps for K (head/tail) and V (head/tail) on the set.

    head_bound caps the body integral of the log ratio, tail_bound the
    remainder past tau using the density cap omega0 for the squared-density
    term; the variance pair does the same for the second moment.  k0 is
    the largest |log omega| over the admissible scale band.
    """
    if not omega0 > 0:
        raise DomainError(f"omega0 must be positive, got {omega0}")
    delta, tau, d = params.delta, params.tau, params.d
    k0 = max(
        abs(math.log(omega0 * (1.0 - delta))),
        abs(math.log(omega0 * (1.0 + delta))),
    )
    head = delta * (
        1.0 / (1.0 - delta)
        + (d + 1) / (tau + 1.0)
        + omega0 * (d + 1)
        + omega0 * moments.e_t
    )
    tail = (
        omega0 * moments.p_tail
        + k0 * moments.p_tail
        + (1.0 + omega0 * (1.0 + delta)) * moments.e_t_tail
    )
    var_head = (
        12.0 * delta
        + 1.5 * (d + 1) ** 2 * delta
        + 6.0 * omega0 ** 2 * delta ** 2 * moments.e_t2
        + 6.0 * omega0 ** 2 * (d + 1) ** 2 * delta ** 2
    )
    var_tail = (
        2.0 * (omega0 ** 2 + 1.0) * moments.p_tail
        + 6.0 * k0 ** 2 * moments.p_tail
        + 6.0 * moments.e_t2
        + 6.0 * omega0 ** 2 * (1.0 + delta) ** 2 * moments.e_t2
    )
    return KlBounds(head, tail, var_head, var_tail, k0)


def moments_for(theta0: Theta, x, tau: float, quad: Quadrature | None = None) -> MomentInputs:
    """Survival-form moment estimates at one covariate, tails enveloped up.

    Uses E(T) = int S, E(T^2) = int 2 t S, E(T 1{T>tau}) = tau S(tau) +
    int_tau S; beyond the quadrature cutoff every integrand is capped by
    S(t_cut) e^{-rate (t - t_cut)}, so the outputs are upper estimates and
    safe to feed the bound assembly.
    """
    if quad is None:
        quad = default_quadrature(theta0)
    if not 0 < tau < quad.t_cut:
        raise DomainError(f"tau must sit inside (0, {quad.t_cut}), got {tau}")
    curve = HazardCurve(theta0, x)
    ts = quad.nodes()
    surv = curve.survival_at(ts)
    sigma_min = float(np.min(expit(curve.y_at(ts))))
    if sigma_min <= 0.0:
        raise NumericError("link lower bound underflows to zero on the grid")
    rate = theta0.omega * sigma_min
    h = quad.t_cut
    s_h = float(surv[-1])
    e_t = float(simpson(surv, x=ts)) + s_h / rate
    e_t2 = float(simpson(2.0 * ts * surv, x=ts)) + 2.0 * s_h * (h / rate + 1.0 / rate ** 2)
    s_tau = float(curve.survival_at(tau))
    mask = ts >= tau
    # one trapezoid correction for the panel straddling tau
    cut_ts = np.concatenate([[tau], ts[mask]])
    cut_s = np.concatenate([[s_tau], surv[mask]])
    int_s_tail = float(np.trapezoid(cut_s, cut_ts)) + s_h / rate
    e_t_tail = tau * s_tau + int_s_tail
    return MomentInputs(e_t=e_t, e_t_tail=e_t_tail, p_tail=s_tau, e_t2=e_t2)


# -- moment condition checks ----------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    """First-moment and uniform-integrability estimates for a reference law."""

    a3_estimate: float
    a3prime_worst: float
    a3_pass: bool
    a3prime_pass: bool
    truncation_ladder: tuple
    ladder_decreasing: bool
    inconclusive: bool
    note: str

    def as_record(self) -> dict:
        return {
            "a3_estimate": self.a3_estimate,
            "a3prime_worst": self.a3prime_worst,
            "a3_pass": self.a3_pass,
            "a3prime_pass": self.a3prime_pass,
            "truncation_ladder": [list(p) for p in self.truncation_ladder],
            "ladder_decreasing": self.ladder_decreasing,
            "inconclusive": self.inconclusive,
            "note": self.note,
        }


def _tail_second_moment(curve: HazardCurve, ts: np.ndarray, surv: np.ndarray,
                        m: float, rate: float) -> float:
    # E(T^2 1{T>m}) = m^2 S(m) + int_m 2 t S dt, envelope past the cutoff
    s_m = float(curve.survival_at(m))
    mask = ts >= m
    cut_ts = np.concatenate([[m], ts[mask]])
    cut_s = np.concatenate([[s_m], surv[mask]])
    h = float(ts[-1])
    body = float(np.trapezoid(2.0 * cut_ts * cut_s, cut_ts))
    env = 2.0 * float(surv[-1]) * (h / rate + 1.0 / rate ** 2)
    return m * m * s_m + body + env


def moment_checks(
    theta0: Theta,
    design: str,
    q_grid=None,
    xs=None,
    quad: Quadrature | None = None,
    m: float = 10.0,
    delta: float = 0.05,
) -> MomentReport:
    """Estimate E(T) and the worst second-moment tail past m.

    The first moment aggregates over the design (weighted mean for RD,
    max for NRD); the uniform-integrability surrogate is the max over
    covariate points of E(T^2 1{T>m}), which must fall below delta to
    pass.  Also reports E(T 1{T>n}) on a doubling ladder of n values.
    The report is inconclusive when the cutoff is not well past m or the
    envelope rate degenerates.
    """
    if quad is None:
        quad = default_quadrature(theta0)
    if design == "RD":
        if q_grid is None:
            raise DomainError("RD checks need a covariate law or atoms")
        atoms = q_grid if isinstance(q_grid, QAtoms) else q_atoms_from_law(q_grid)
        points = [Covariate(tuple(r)) for r in atoms.nodes]
        weights = np.asarray(atoms.weights)
    elif design == "NRD":
        if xs is None or not len(xs):
            raise DomainError("NRD checks need the fixed covariate list")
        seen = dict.fromkeys(_coerce_x(x, theta0.d).coords for x in xs)
        points = [Covariate(c) for c in seen]
        weights = None
    else:
        raise DomainError(f"design must be 'RD' or 'NRD', got {design!r}")

    h = quad.t_cut
    if h < 2.0 * m:
        return MomentReport(
            a3_estimate=math.nan, a3prime_worst=math.nan,
            a3_pass=False, a3prime_pass=False,
            truncation_ladder=(), ladder_decreasing=False,
            inconclusive=True,
            note=f"cutoff {h} is not well past m={m}; no usable tail estimate",
        )
    ts = quad.nodes()
    ladder_ns = []
    n = 1.0
    while n <= h / 2.0:
        ladder_ns.append(n)
        n *= 2.0
    e_ts = []
    worsts = []
    ladder_vals = np.zeros(len(ladder_ns))
    for cov in points:
        curve = HazardCurve(theta0, cov)
        surv = curve.survival_at(ts)
        sigma_min = float(np.min(expit(curve.y_at(ts))))
        if sigma_min <= 0.0:
            return MomentReport(
                a3_estimate=math.nan, a3prime_worst=math.nan,
                a3_pass=False, a3prime_pass=False,
                truncation_ladder=(), ladder_decreasing=False,
                inconclusive=True,
                note="link lower bound underflows to zero; envelope invalid",
            )
        rate = theta0.omega * sigma_min
        s_h = float(surv[-1])
        e_ts.append(float(simpson(surv, x=ts)) + s_h / rate)
        worsts.append(_tail_second_moment(curve, ts, surv, m, rate))
        for i, nv in enumerate(ladder_ns):
            s_n = float(curve.survival_at(nv))
            mask = ts >= nv
            cut_ts = np.concatenate([[nv], ts[mask]])
            cut_s = np.concatenate([[s_n], surv[mask]])
            val = nv * s_n + float(np.trapezoid(cut_s, cut_ts)) + s_h / rate
            if weights is not None:
                ladder_vals[i] += weights[len(e_ts) - 1] * val
            else:
                ladder_vals[i] = max(ladder_vals[i], val)
    e_arr = np.asarray(e_ts)
    a3 = float(weights @ e_arr) if weights is not None else float(np.max(e_arr))
    worst = float(np.max(worsts))
    ladder = tuple((float(nv), float(v)) for nv, v in zip(ladder_ns, ladder_vals))
    decreasing = all(b[1] <= a[1] for a, b in zip(ladder, ladder[1:]))
    return MomentReport(
        a3_estimate=a3,
        a3prime_worst=worst,
        a3_pass=math.isfinite(a3),
        a3prime_pass=worst <= delta,
        truncation_ladder=ladder,
        ladder_decreasing=decreasing,
        inconclusive=False,
        note="",
    )


# -- neighborhood sampling -------------------------------------------------


def sample_b_member(theta0: Theta, params: BSetParams, seed: int,
                    max_tries: int = 20) -> Theta:
    """Draw a random parameter inside the neighborhood around theta0.

    The scale moves inside 90% of the admissible band; each path gets a
    smooth cosine perturbation capped at 90% of the sup limit, so the sup
    condition holds by construction and membership is verified before
    returning.  Raises when theta0 sits too close to the decay floor for
    any perturbation to stay above it.
    """
    rng = np.random.default_rng(seed)
    if params.d != theta0.d:
        raise DomainError(f"params expect d={params.d}, theta0 has d={theta0.d}")
    ts = theta0.grid.as_array()
    cap = 0.9 * params.sup_limit
    for _ in range(max_tries):
        omega = theta0.omega * (1.0 + 0.9 * params.delta * rng.uniform(-1.0, 1.0))
        values = []
        for p in theta0.paths:
            amp = cap * rng.uniform(0.2, 1.0)
            freq = rng.uniform(0.3, 3.0)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            values.append(np.asarray(p.values) + amp * np.cos(freq * ts + phase))
        cand = Theta.from_values(omega, theta0.grid, values)
        if b_set_membership(cand, theta0, params).member:
            return cand
        cap *= 0.5
    raise GenerationError(
        "no neighborhood member found; reference parameter hugs the decay floor"
    )
