"""Rectangle-class measures and deviation statistics.

The comparison class consists of rectangles [a,b] x B, where [a,b] is a
time interval and B a product of coordinate intervals in the covariate
cube.  A parameter theta induces a law mu_theta of (T, X); the distance
between parameters is the supremum over rectangles of the difference in
mass, realized as a maximum over grid-anchored rectangles.  The test
statistic compares the empirical measure of a dataset against a reference
parameter over rectangles anchored on the data coordinates; that maximum
is found exactly by branch and bound over anchor pairs, which keeps the
search tractable on one core at n in the thousands.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import CapacityError, DomainError
from .hazard import (
    ProductBetaQ,
    SurvivalDataset,
    TableQ,
    Theta,
    UniformQ,
    survival_matrix,
)

MAX_RECTANGLES = 10_000_000

# Default per-axis midpoint-rule resolution for covariate quadrature.
Q_CELLS_1D = 64
Q_CELLS_2D = 16

# Anchored-search tuning: dense row matrices below this cell count,
# streaming block rebuilds above it.
_DENSE_CELLS = 6_000_000
_BLOCK = 64
_CACHE_BLOCKS = 48
_WF_CELLS = 4_000_000


@dataclass(frozen=True)
class Rectangle:
    """[a, b] x prod_j [lo_j, hi_j]; all intervals closed."""

    time: tuple
    box: tuple = ()

    def __post_init__(self):
        a, b = self.time
        if not 0 <= a <= b:
            raise DomainError(f"bad time interval {self.time}")
        for lo, hi in self.box:
            if not 0.0 <= lo <= hi <= 1.0:
                raise DomainError(f"bad covariate interval ({lo}, {hi})")
        object.__setattr__(self, "time", (float(a), float(b)))
        object.__setattr__(self, "box", tuple((float(lo), float(hi)) for lo, hi in self.box))

    @property
    def d(self) -> int:
        return len(self.box)


@dataclass(frozen=True)
class GridSpec:
    """Anchor knots for rectangle enumeration, strictly increasing per axis."""

    time_knots: tuple
    covariate_knots: tuple = ()

    def __post_init__(self):
        tk = np.asarray(self.time_knots, dtype=float)
        if tk.size < 2 or not np.all(np.diff(tk) > 0) or tk[0] < 0:
            raise DomainError("time knots must be >= 2, nonnegative, strictly increasing")
        object.__setattr__(self, "time_knots", tuple(float(t) for t in tk))
        cleaned = []
        for knots in self.covariate_knots:
            ck = np.asarray(knots, dtype=float)
            if ck.size < 2 or not np.all(np.diff(ck) > 0) or ck[0] < 0 or ck[-1] > 1:
                raise DomainError("covariate knots must be >= 2, strictly increasing, in [0,1]")
            cleaned.append(tuple(float(c) for c in ck))
        object.__setattr__(self, "covariate_knots", tuple(cleaned))

    @classmethod
    def regular(cls, horizon: float, time_knots: int, d: int, covariate_knots: int = 17) -> "GridSpec":
        return cls(
            tuple(np.linspace(0.0, horizon, time_knots)),
            tuple(tuple(np.linspace(0.0, 1.0, covariate_knots)) for _ in range(d)),
        )

    def rectangle_count(self) -> int:
        k = len(self.time_knots)
        count = k * (k - 1) // 2
        for knots in self.covariate_knots:
            m = len(knots)
            count *= m * (m - 1) // 2
        return count


# -- covariate atoms ----------------------------------------------------------


@dataclass(frozen=True)
class QAtoms:
    """Weighted-atom reduction of a covariate law (quadrature or data)."""

    nodes: tuple    # (m, d) rows
    weights: tuple  # (m,)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(len(self.nodes), -1)
        weights = np.asarray(self.weights, dtype=float)
        if len(nodes) != weights.size or not weights.size:
            raise DomainError("one weight per node required")
        if np.any(weights < 0):
            raise DomainError("weights must be nonnegative")
        object.__setattr__(self, "nodes", tuple(tuple(r) for r in nodes))
        object.__setattr__(self, "weights", tuple(float(w) for w in weights))

    @property
    def d(self) -> int:
        return len(self.nodes[0]) if self.nodes else 0

    def nodes_array(self) -> np.ndarray:
        return np.asarray(self.nodes, dtype=float).reshape(len(self.nodes), -1)

    def weights_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def q_atoms_from_law(law, cells_per_axis: int | None = None) -> QAtoms:
    """Midpoint-rule atoms for a covariate law on [0,1]^d.

    Uniform and product-beta laws discretize each axis into equal-width
    cells carrying the cell probability; finite-table laws pass through
    exactly.
    """
    if isinstance(law, TableQ):
        return QAtoms(nodes=law.atoms, weights=law.probs)
    if isinstance(law, (UniformQ, ProductBetaQ)):
        d = law.d
        if d == 0:
            return QAtoms(nodes=((),), weights=(1.0,))
        cells = cells_per_axis or (Q_CELLS_1D if d == 1 else Q_CELLS_2D)
        edges = np.linspace(0.0, 1.0, cells + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        if isinstance(law, UniformQ):
            axis_masses = [np.full(cells, 1.0 / cells) for _ in range(d)]
        else:
            axis_masses = [
                np.diff(stats.beta.cdf(edges, a, b)) for a, b in zip(law.alphas, law.betas)
            ]
        grids = np.meshgrid(*[mids] * d, indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        mass = axis_masses[0]
        for w in axis_masses[1:]:
            mass = np.multiply.outer(mass, w)
        return QAtoms(nodes=tuple(tuple(r) for r in nodes), weights=tuple(mass.ravel()))
    raise DomainError(f"unsupported covariate law {type(law).__name__}")


def q_atoms_from_rows(rows, weights=None) -> QAtoms:
    """Equal-weight atoms at fixed covariate rows (the fixed-design case)."""
    rows = np.asarray(rows, dtype=float).reshape(len(rows), -1)
    n = len(rows)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    return QAtoms(nodes=tuple(tuple(r) for r in rows), weights=tuple(w))


def resolve_atoms(design: str, q_grid, cells_per_axis: int | None = None) -> QAtoms:
    """Normalize the q_grid argument of measure operations to atoms."""
    if isinstance(q_grid, QAtoms):
        return q_grid
    if design == "RD":
        return q_atoms_from_law(q_grid, cells_per_axis)
    if design == "NRD":
        return q_atoms_from_rows(q_grid)
    raise DomainError(f"design must be 'RD' or 'NRD', got {design!r}")


# -- measures -----------------------------------------------------------------


def _box_mask(nodes: np.ndarray, box) -> np.ndarray:
    mask = np.ones(len(nodes), dtype=bool)
    for j, (lo, hi) in enumerate(box):
        mask &= (nodes[:, j] >= lo) & (nodes[:, j] <= hi)
    return mask


def measure_mu(theta: Theta, rect: Rectangle, design: str, q_grid) -> float:
    """mu_theta(rect): probability that (T, X) falls in the rectangle."""
    if rect.d != theta.d:
        raise DomainError(f"rectangle has {rect.d} covariate axes, theta has {theta.d}")
    a, b = rect.time
    if b > theta.horizon:
        raise DomainError(f"rectangle reaches past the grid horizon {theta.horizon}")
    atoms = resolve_atoms(design, q_grid)
    if atoms.d != theta.d:
        raise DomainError(f"atoms have d={atoms.d}, theta has d={theta.d}")
    nodes = atoms.nodes_array()
    mask = _box_mask(nodes, rect.box)
    if not mask.any():
        return 0.0
    weights = atoms.weights_array()[mask]
    surv = survival_matrix(theta, nodes[mask], np.asarray([a, b]))
    return float(np.sum(weights * (surv[:, 0] - surv[:, 1])))


def empirical_measure(dataset: SurvivalDataset, rect: Rectangle) -> float:
    """Fraction of records in the closed rectangle."""
    if dataset.n < 1:
        raise DomainError("dataset is empty")
    if rect.d != dataset.d:
        raise DomainError(f"rectangle has {rect.d} covariate axes, data has {dataset.d}")
    times = dataset.times_array()
    xs = dataset.covariates_array()
    a, b = rect.time
    mask = (times >= a) & (times <= b)
    for j, (lo, hi) in enumerate(rect.box):
        mask &= (xs[:, j] >= lo) & (xs[:, j] <= hi)
    return float(mask.mean())


# -- sup-deviation metric ------------------------------------------------------


@dataclass(frozen=True)
class MetricResult:
    value: float
    argmax: Rectangle
    rectangles: int


def sup_deviation_metric(theta_a: Theta, theta_b: Theta, design: str, q_grid, grid: GridSpec) -> MetricResult:
    """max over grid rectangles of |mu_a - mu_b|, with one maximizer.

    For a fixed covariate box B the best time interval over the knots is
    the range of D_B(t) = sum_{x in B} w_x (S^a_x - S^b_x)(t), so only
    boxes are enumerated; the rectangle count is still capped.
    """
    if theta_a.d != theta_b.d:
        raise DomainError("thetas must share the covariate dimension")
    d = theta_a.d
    if len(grid.covariate_knots) != d:
        raise DomainError(f"grid has {len(grid.covariate_knots)} covariate axes, theta has {d}")
    if d > 2:
        raise DomainError("rectangle enumeration supports d <= 2")
    count = grid.rectangle_count()
    if count > MAX_RECTANGLES:
        raise CapacityError(
            f"{count} rectangles exceed the cap of {MAX_RECTANGLES}; use a coarser grid"
        )
    ts = np.asarray(grid.time_knots)
    horizon = min(theta_a.horizon, theta_b.horizon)
    if ts[-1] > horizon:
        raise DomainError(f"time knots reach past the grid horizon {horizon}")
    atoms = resolve_atoms(design, q_grid)
    if atoms.d != d:
        raise DomainError(f"atoms have d={atoms.d}, theta has d={d}")
    nodes = atoms.nodes_array()
    weights = atoms.weights_array()
    diff = survival_matrix(theta_a, nodes, ts) - survival_matrix(theta_b, nodes, ts)
    diff *= weights[:, None]

    best = (-1.0, None)

    def consider(curve: np.ndarray, box) -> None:
        nonlocal best
        hi_k = int(np.argmax(curve))
        lo_k = int(np.argmin(curve))
        value = float(curve[hi_k] - curve[lo_k])
        if value > best[0]:
            t_pair = tuple(sorted((ts[hi_k], ts[lo_k])))
            best = (value, Rectangle(time=t_pair, box=box))

    if d == 0:
        consider(diff.sum(axis=0), ())
    elif d == 1:
        order = np.argsort(nodes[:, 0], kind="stable")
        pref = np.concatenate([np.zeros((1, len(ts))), np.cumsum(diff[order], axis=0)])
        xs_sorted = nodes[order, 0]
        knots = np.asarray(grid.covariate_knots[0])
        lo = np.searchsorted(xs_sorted, knots, side="left")
        hi = np.searchsorted(xs_sorted, knots, side="right")
        for i in range(len(knots) - 1):
            for j in range(i + 1, len(knots)):
                consider(pref[hi[j]] - pref[lo[i]], ((knots[i], knots[j]),))
    else:
        knots0 = np.asarray(grid.covariate_knots[0])
        knots1 = np.asarray(grid.covariate_knots[1])
        order0 = np.argsort(nodes[:, 0], kind="stable")
        sorted0 = nodes[order0, 0]
        lo0 = np.searchsorted(sorted0, knots0, side="left")
        hi0 = np.searchsorted(sorted0, knots0, side="right")
        for i0 in range(len(knots0) - 1):
            for j0 in range(i0 + 1, len(knots0)):
                subset = order0[lo0[i0]:hi0[j0]]
                if subset.size == 0:
                    continue
                sub = nodes[subset, 1]
                order1 = np.argsort(sub, kind="stable")
                pref = np.concatenate(
                    [np.zeros((1, len(ts))), np.cumsum(diff[subset][order1], axis=0)]
                )
                lo1 = np.searchsorted(sub[order1], knots1, side="left")
                hi1 = np.searchsorted(sub[order1], knots1, side="right")
                for i1 in range(len(knots1) - 1):
                    for j1 in range(i1 + 1, len(knots1)):
                        consider(
                            pref[hi1[j1]] - pref[lo1[i1]],
                            ((knots0[i0], knots0[j0]), (knots1[i1], knots1[j1])),
                        )
    return MetricResult(value=best[0], argmax=best[1], rectangles=count)


# -- shatter and deviation bounds ----------------------------------------------


@dataclass(frozen=True)
class ShatterBound:
    n: int
    d: int
    log_value: float
    value: float
    overflowed: bool


def shatter_bound(n: int, d: int) -> ShatterBound:
    """(n+1)^(2(d+1)), reported in log form when it overflows a double."""
    if n < 1 or d < 0:
        raise DomainError("need n >= 1 and d >= 0")
    log_value = 2.0 * (d + 1) * math.log(n + 1.0)
    overflowed = log_value > math.log(np.finfo(float).max)
    value = math.inf if overflowed else float((n + 1) ** (2 * (d + 1)))
    return ShatterBound(n=n, d=d, log_value=log_value, value=value, overflowed=overflowed)


@dataclass(frozen=True)
class DeviationBounds:
    expected_dev_bound: float
    type1_bound: float


def deviation_bounds(n: int, d: int, epsilon: float) -> DeviationBounds:
    """Finite-sample deviation controls for the rectangle class.

    expected_dev_bound = 2 sqrt(log(2 (n+1)^(2(d+1))) / n) bounds the mean
    supremum deviation; type1_bound = 2 exp(-n eps^2 / 2) bounds the
    rejection rate under the reference.
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    sb = shatter_bound(n, d)
    expected = 2.0 * math.sqrt((math.log(2.0) + sb.log_value) / n)
    rate = 2.0 * math.exp(-n * epsilon ** 2 / 2.0)
    return DeviationBounds(expected_dev_bound=expected, type1_bound=rate)


# -- anchored test statistic ----------------------------------------------------


@dataclass(frozen=True)
class TestStatResult:
    sup_dev: float
    threshold: float
    phi: int
    argmax: Rectangle
    n: int
    d: int
    epsilon: float

    def as_record(self) -> dict:
        db = deviation_bounds(self.n, self.d, self.epsilon)
        return {
            "n": self.n,
            "d": self.d,
            "epsilon": self.epsilon,
            "sup_dev": self.sup_dev,
            "phi": self.phi,
            "threshold": self.threshold,
            "expected_dev_bound": db.expected_dev_bound,
            "type1_bound": db.type1_bound,
        }


def _dir1(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """max over anchor pairs a <= b of u[..., b] - w[..., a]."""
    wmin = np.minimum.accumulate(w, axis=-1)
    return (u - wmin).max(axis=-1)


def _dir2(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """max over anchor pairs a <= b of w[..., a] - u[..., b]."""
    umin = np.minimum.accumulate(u[..., ::-1], axis=-1)[..., ::-1]
    return (w - umin).max(axis=-1)


def _best_time_interval(u: np.ndarray, w: np.ndarray):
    """max over time-anchor pairs a <= b of |mass([T_a, T_b])|, with indices.

    u is the inclusive and w the exclusive prefix discrepancy, so the mass
    of [T_a, T_b] is u[b] - w[a] and both signed directions reduce to
    running minima.
    """
    w_cummin = np.minimum.accumulate(w)
    diff1 = u - w_cummin
    b1 = int(np.argmax(diff1))
    v1 = float(diff1[b1])
    a1 = int(np.argmin(w[: b1 + 1]))

    u_revmin = np.minimum.accumulate(u[::-1])[::-1]
    diff2 = w - u_revmin
    a2 = int(np.argmax(diff2))
    v2 = float(diff2[a2])
    b2 = a2 + int(np.argmin(u[a2:]))

    if v1 >= v2:
        return v1, (a1, b1)
    return v2, (a2, b2)


def _block_ranges(m: int, size: int) -> list:
    return [(s, min(m, s + size)) for s in range(0, m, size)]


def _seed_stride(m: int) -> np.ndarray:
    return np.arange(0, m, max(1, -(-m // 64)))


class _DenseRows:
    """Anchor-row matrices held fully in memory (small m*K)."""

    def __init__(self, p_le, p_lt, q_le, q_lt, blocks):
        self.p_le, self.p_lt, self.q_le, self.q_lt = p_le, p_lt, q_le, q_lt
        self.blocks = blocks
        starts = [s for s, _ in blocks]
        self.ext = {
            "ple_max": np.maximum.reduceat(p_le, starts, axis=0),
            "ple_min": np.minimum.reduceat(p_le, starts, axis=0),
            "plt_max": np.maximum.reduceat(p_lt, starts, axis=0),
            "plt_min": np.minimum.reduceat(p_lt, starts, axis=0),
            "qle_max": np.maximum.reduceat(q_le, starts, axis=0),
            "qle_min": np.minimum.reduceat(q_le, starts, axis=0),
            "qlt_max": np.maximum.reduceat(q_lt, starts, axis=0),
            "qlt_min": np.minimum.reduceat(q_lt, starts, axis=0),
        }
        idx = _seed_stride(len(p_le))
        self.seed = (idx, p_le[idx], p_lt[idx], q_le[idx], q_lt[idx])

    def p_block(self, jb: int):
        s, e = self.blocks[jb]
        return self.p_le[s:e], self.p_lt[s:e]

    def q_block(self, ib: int):
        s, e = self.blocks[ib]
        return self.q_le[s:e], self.q_lt[s:e]


class _StreamRows:
    """Anchor rows rebuilt per block from per-block snapshots.

    Keeps memory at O(blocks * K) for large n: one forward sweep records
    count/reference state at each block start and the blockwise extreme
    matrices; the walk stage rebuilds only the blocks it actually visits.
    """

    def __init__(self, n, anchors_t, hi_idx, lo_idx, bin_le, bin_lt,
                 node_rows, node_w, node_hi, node_lo, theta0, blocks):
        self.K = len(anchors_t)
        self.inv_n = 1.0 / n
        self.anchors_t = anchors_t
        self.hi_idx, self.lo_idx = hi_idx, lo_idx
        self.bin_le, self.bin_lt = bin_le, bin_lt
        self.node_rows, self.node_w = node_rows, node_w
        self.node_hi, self.node_lo = node_hi, node_lo
        self.theta0 = theta0
        self.blocks = blocks
        self._wf = None
        if len(node_rows) * self.K <= _WF_CELLS:
            self._wf = node_w[:, None] * (1.0 - survival_matrix(theta0, node_rows, anchors_t))
        self.p_snap, self.q_snap = [], []
        self.ext = {}
        self._p_cache: OrderedDict = OrderedDict()
        self._q_cache: OrderedDict = OrderedDict()
        self._sweep()

    def _wf_sum(self, a: int, b: int) -> np.ndarray:
        if self._wf is not None:
            return self._wf[a:b].sum(axis=0)
        out = np.zeros(self.K)
        for c in range(a, b, 512):
            e = min(b, c + 512)
            f = 1.0 - survival_matrix(self.theta0, self.node_rows[c:e], self.anchors_t)
            out += self.node_w[c:e] @ f
        return out

    def _build(self, block: int, side: str):
        s, e = self.blocks[block]
        snap = (self.p_snap if side == "p" else self.q_snap)[block]
        row_le, row_lt, refrow, pos, npos = snap
        row_le, row_lt, refrow = row_le.copy(), row_lt.copy(), refrow.copy()
        anchor_pos = self.hi_idx if side == "p" else self.lo_idx
        node_pos = self.node_hi if side == "p" else self.node_lo
        out_le = np.empty((e - s, self.K))
        out_lt = np.empty((e - s, self.K))
        for t, j in enumerate(range(s, e)):
            np_ = int(anchor_pos[j])
            if np_ > pos:
                row_le += np.cumsum(np.bincount(self.bin_le[pos:np_], minlength=self.K + 1)[: self.K])
                row_lt += np.cumsum(np.bincount(self.bin_lt[pos:np_], minlength=self.K + 1)[: self.K])
                pos = np_
            nn = int(node_pos[j])
            if nn > npos:
                refrow = refrow + self._wf_sum(npos, nn)
                npos = nn
            out_le[t] = row_le * self.inv_n - refrow
            out_lt[t] = row_lt * self.inv_n - refrow
        return out_le, out_lt, (row_le, row_lt, refrow, pos, npos)

    def _sweep(self) -> None:
        nb = len(self.blocks)
        m = self.blocks[-1][1]
        idx = _seed_stride(m)
        seed_rows = {"p": ([], []), "q": ([], [])}
        ext = {k: np.empty((nb, self.K)) for k in (
            "ple_max", "ple_min", "plt_max", "plt_min",
            "qle_max", "qle_min", "qlt_max", "qlt_min")}
        for side, snaps, prefix in (("p", self.p_snap, "p"), ("q", self.q_snap, "q")):
            state = (
                np.zeros(self.K, dtype=np.int64),
                np.zeros(self.K, dtype=np.int64),
                np.zeros(self.K),
                0,
                0,
            )
            for b in range(nb):
                snaps.append(state)
                out_le, out_lt, state = self._build(b, side)
                ext[f"{prefix}le_max"][b] = out_le.max(axis=0)
                ext[f"{prefix}le_min"][b] = out_le.min(axis=0)
                ext[f"{prefix}lt_max"][b] = out_lt.max(axis=0)
                ext[f"{prefix}lt_min"][b] = out_lt.min(axis=0)
                s, e = self.blocks[b]
                local = idx[(idx >= s) & (idx < e)] - s
                if local.size:
                    seed_rows[side][0].append(out_le[local])
                    seed_rows[side][1].append(out_lt[local])
        self.ext = ext
        self.seed = (
            idx,
            np.concatenate(seed_rows["p"][0]),
            np.concatenate(seed_rows["p"][1]),
            np.concatenate(seed_rows["q"][0]),
            np.concatenate(seed_rows["q"][1]),
        )

    def _cached(self, cache: OrderedDict, block: int, side: str):
        if block in cache:
            cache.move_to_end(block)
            return cache[block]
        out_le, out_lt, _ = self._build(block, side)
        cache[block] = (out_le, out_lt)
        if len(cache) > _CACHE_BLOCKS:
            cache.popitem(last=False)
        return out_le, out_lt

    def p_block(self, jb: int):
        return self._cached(self._p_cache, jb, "p")

    def q_block(self, ib: int):
        return self._cached(self._q_cache, ib, "q")


def _pair_bounds(ext: dict, nb: int) -> np.ndarray:
    """Upper bound on the exact value for every (i-block, j-block) pair."""
    bounds = np.full((nb, nb), -np.inf)
    for jb in range(nb):
        ub = ext["ple_max"][jb][None, :] - ext["qle_min"][: jb + 1]
        wb = ext["plt_min"][jb][None, :] - ext["qlt_max"][: jb + 1]
        v1 = _dir1(ub, wb)
        ub2 = ext["ple_min"][jb][None, :] - ext["qle_max"][: jb + 1]
        wb2 = ext["plt_max"][jb][None, :] - ext["qlt_min"][: jb + 1]
        v2 = _dir2(ub2, wb2)
        bounds[: jb + 1, jb] = np.maximum(v1, v2)
    return bounds


def _anchored_search(provider, blocks) -> tuple:
    """Branch-and-bound walk over anchor-block pairs; returns (i*, j*).

    A strided exact pass seeds the incumbent first, so most block pairs
    prune on their envelope bound without being expanded.
    """
    ext = provider.ext
    nb = len(blocks)
    bounds = _pair_bounds(ext, nb)
    order = np.argsort(bounds, axis=None)[::-1]
    flat = bounds.ravel()
    best_val = -np.inf
    best_pair = None
    idx, sp_le, sp_lt, sq_le, sq_lt = provider.seed
    for a in range(len(idx)):
        u = sp_le[a:] - sq_le[a]
        w = sp_lt[a:] - sq_lt[a]
        vals = np.maximum(_dir1(u, w), _dir2(u, w))
        jj = int(np.argmax(vals))
        if vals[jj] > best_val:
            best_val = float(vals[jj])
            best_pair = (int(idx[a]), int(idx[a + jj]))
    for pos in order:
        if flat[pos] <= best_val:
            break
        ib, jb = divmod(int(pos), nb)
        p_le, p_lt = provider.p_block(jb)
        q_le, q_lt = provider.q_block(ib)
        js, je = blocks[jb]
        is_, _ = blocks[ib]
        ub = ext["ple_max"][jb][None, :] - q_le
        wb = ext["plt_min"][jb][None, :] - q_lt
        ub2 = ext["ple_min"][jb][None, :] - q_le
        wb2 = ext["plt_max"][jb][None, :] - q_lt
        row_bound = np.maximum(_dir1(ub, wb), _dir2(ub2, wb2))
        j_global = np.arange(js, je)
        for ii in np.argsort(row_bound)[::-1]:
            if row_bound[ii] <= best_val:
                break
            i_g = is_ + int(ii)
            u = p_le - q_le[ii]
            w = p_lt - q_lt[ii]
            vals = np.maximum(_dir1(u, w), _dir2(u, w))
            vals[j_global < i_g] = -np.inf
            jj = int(np.argmax(vals))
            if vals[jj] > best_val:
                best_val = float(vals[jj])
                best_pair = (i_g, js + jj)
    return best_val, best_pair


def _reference_atoms(dataset: SurvivalDataset, q_grid) -> QAtoms:
    if q_grid is not None:
        return resolve_atoms(dataset.design, q_grid)
    if dataset.design == "NRD":
        return q_atoms_from_rows(dataset.covariates_array())
    desc = dataset.q_descriptor
    family = desc.get("family")
    if family == "uniform":
        return q_atoms_from_law(UniformQ(int(desc["d"])))
    if family == "product_beta":
        return q_atoms_from_law(ProductBetaQ(tuple(desc["alphas"]), tuple(desc["betas"])))
    if family == "table":
        return q_atoms_from_law(
            TableQ(tuple(tuple(a) for a in desc["atoms"]), tuple(desc["probs"]))
        )
    raise DomainError(
        f"cannot rebuild a covariate law from descriptor {desc!r}; pass q_grid explicitly"
    )


def test_statistic(dataset: SurvivalDataset, theta0: Theta, design: str, q_grid, epsilon: float) -> TestStatResult:
    """sup over data-anchored rectangles of |mu_n - mu_theta0|, and the test.

    Anchors are the observed coordinates plus the domain endpoints on each
    axis; the rejection threshold is epsilon / 4.  The time axis is swept
    exactly per covariate box via prefix discrepancies; covariate anchor
    pairs are searched by branch and bound with blockwise envelope bounds,
    so the result is the exact anchored maximum without enumerating all
    pairs.
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if dataset.n < 1:
        raise DomainError("dataset is empty")
    if design != dataset.design:
        raise DomainError(f"dataset was generated under {dataset.design}, not {design}")
    if dataset.d != theta0.d:
        raise DomainError(f"dataset has d={dataset.d}, theta0 has d={theta0.d}")
    times = dataset.times_array()
    if times.max() > theta0.horizon:
        raise DomainError("observed times reach past the reference grid horizon")
    n = dataset.n
    d = dataset.d
    threshold = epsilon / 4.0

    anchors_t = np.unique(np.concatenate([[0.0, theta0.horizon], times]))
    K = len(anchors_t)
    atoms = _reference_atoms(dataset, q_grid)
    if atoms.d != d:
        raise DomainError(f"reference atoms have d={atoms.d}, data has d={d}")

    if d == 0:
        t_sorted = np.sort(times)
        emp_le = np.searchsorted(t_sorted, anchors_t, side="right") / n
        emp_lt = np.searchsorted(t_sorted, anchors_t, side="left") / n
        fmat = 1.0 - survival_matrix(theta0, atoms.nodes_array(), anchors_t)
        ref = atoms.weights_array() @ fmat
        value, (ka, kb) = _best_time_interval(emp_le - ref, emp_lt - ref)
        rect = Rectangle(time=(anchors_t[ka], anchors_t[kb]), box=())
        return TestStatResult(
            sup_dev=value, threshold=threshold, phi=int(value > threshold),
            argmax=rect, n=n, d=d, epsilon=epsilon,
        )
    if d > 1:
        raise DomainError("the anchored statistic supports d <= 1; use the metric for d = 2")

    xs = dataset.covariates_array()[:, 0]
    order = np.argsort(xs, kind="stable")
    xs_sorted = xs[order]
    t_by_x = times[order]
    anchors_x = np.unique(np.concatenate([[0.0, 1.0], xs]))
    m = len(anchors_x)
    lo_idx = np.searchsorted(xs_sorted, anchors_x, side="left")
    hi_idx = np.searchsorted(xs_sorted, anchors_x, side="right")

    nodes = atoms.nodes_array()
    node_order = np.argsort(nodes[:, 0], kind="stable")
    node_rows = nodes[node_order]
    node_w = atoms.weights_array()[node_order]
    node_hi = np.searchsorted(node_rows[:, 0], anchors_x, side="right")
    node_lo = np.searchsorted(node_rows[:, 0], anchors_x, side="left")

    blocks = _block_ranges(m, _BLOCK)
    if m * K <= _DENSE_CELLS:
        le = np.cumsum(t_by_x[:, None] <= anchors_t[None, :], axis=0, dtype=np.int32)
        cnt_le = np.vstack([np.zeros((1, K), np.int32), le])
        lt = np.cumsum(t_by_x[:, None] < anchors_t[None, :], axis=0, dtype=np.int32)
        cnt_lt = np.vstack([np.zeros((1, K), np.int32), lt])
        wf = node_w[:, None] * (1.0 - survival_matrix(theta0, node_rows, anchors_t))
        ref_pref = np.vstack([np.zeros((1, K)), np.cumsum(wf, axis=0)])
        ref_le = ref_pref[node_hi]
        ref_lt = ref_pref[node_lo]
        inv_n = 1.0 / n
        provider = _DenseRows(
            p_le=cnt_le[hi_idx] * inv_n - ref_le,
            p_lt=cnt_lt[hi_idx] * inv_n - ref_le,
            q_le=cnt_le[lo_idx] * inv_n - ref_lt,
            q_lt=cnt_lt[lo_idx] * inv_n - ref_lt,
            blocks=blocks,
        )
    else:
        bin_le = np.searchsorted(anchors_t, t_by_x, side="left")
        bin_lt = np.searchsorted(anchors_t, t_by_x, side="right")
        provider = _StreamRows(
            n, anchors_t, hi_idx, lo_idx, bin_le, bin_lt,
            node_rows, node_w, node_hi, node_lo, theta0, blocks,
        )

    best_val, (i_star, j_star) = _anchored_search(provider, blocks)

    # recover the maximizing time interval from the winning anchor pair
    ib = next(b for b, (s, e) in enumerate(blocks) if s <= i_star < e)
    jb = next(b for b, (s, e) in enumerate(blocks) if s <= j_star < e)
    p_le, p_lt = provider.p_block(jb)
    q_le, q_lt = provider.q_block(ib)
    u = p_le[j_star - blocks[jb][0]] - q_le[i_star - blocks[ib][0]]
    w = p_lt[j_star - blocks[jb][0]] - q_lt[i_star - blocks[ib][0]]
    value, (ka, kb) = _best_time_interval(u, w)
    rect = Rectangle(
        time=(anchors_t[ka], anchors_t[kb]),
        box=((anchors_x[i_star], anchors_x[j_star]),),
    )
    return TestStatResult(
        sup_dev=value, threshold=threshold, phi=int(value > threshold),
        argmax=rect, n=n, d=d, epsilon=epsilon,
    )
