"""Multiplicity experiments in a Brownian reference filtration.

The reference martingale is ``X_t = B_{c(t)}`` for a standard Brownian motion
``B`` and a deterministic continuous clock ``c`` (``c(t) = sigma2 t`` for a
scaled Brownian motion, ``c = C`` for the Cantor time change).  Paths are
never stored: a :class:`BridgeCellSource` draws ``X_T`` first and walks the
grid backwards with Brownian-bridge steps, so memory is ``O(n_paths)``.
Normals for a block of cells come from their own counter-based generator,
which makes every sweep over the source reproduce the same paths.

For singular hazards the grid follows the Cantor set: each level-``n``
Cantor interval is one cell and the gaps are subdivided uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import kernels, rng
from .engine import FitRequest, RIDGE, backward_sweep, relative_residual
from .errors import ConfigurationError, DomainError, ModelError, StatisticalPowerError
from .features import CellState, FeatureSet, Payoff, payoff
from .random_time import HazardSpec, cantor_set_distance

#: verdict thresholds in units of the payoff standard deviation
MULTIPLICITY_TOL = 0.05
MULTIPLICITY_GAP = 0.10
#: width of the time buckets sharing integrand coefficients
POOL = 2.0 ** -6
#: cells per bridge normal block
BLOCK = 256


@dataclass(frozen=True)
class CantorGrid:
    """Grid adapted to the Cantor set on ``[0, s_max]``.

    Attributes
    ----------
    grid : (K+1,) array
    clock : (K+1,) array
        Exact Cantor function ``C(min(t / s_max, 1))`` at the nodes.
    in_cantor : (K,) bool array
        Cells that are level-``level`` Cantor intervals.
    """

    grid: np.ndarray
    clock: np.ndarray
    in_cantor: np.ndarray
    level: int
    s_max: float


def cantor_adapted_grid(level: int, s_max: float = 1.0, horizon: float = 1.0,
                        max_step: float = 2.0 ** -10) -> CantorGrid:
    """Nodes at the endpoints of the ``2**level`` Cantor intervals, gaps split to ``max_step``."""
    if not 0 <= level <= 18:
        raise DomainError(f"level must be in [0, 18], got {level}")
    if horizon < s_max or s_max <= 0:
        raise DomainError("need 0 < s_max <= horizon")
    unit = 3 ** level
    lefts = np.zeros(1, dtype=np.int64)
    for j in range(1, level + 1):
        lefts = np.concatenate([lefts, lefts + 2 * 3 ** (level - j)])
    lefts = np.sort(lefts)
    n_int = lefts.size
    step_units = max_step / s_max * unit
    # segments: interval i, then gap i (between interval i and i+1)
    gap_lo = lefts[:-1] + 1
    gap_hi = lefts[1:]
    pieces = np.maximum(1, np.ceil((gap_hi - gap_lo) / step_units).astype(np.int64))
    nodes = [np.array([0.0])]
    clock = [np.array([0.0])]
    flags = []
    # interleave: for interval i -> right end; for gap i -> subdivided nodes
    seg_nodes = []
    seg_clock = []
    seg_flags = []
    for i in range(n_int):
        seg_nodes.append(np.array([(lefts[i] + 1) / unit]))
        seg_clock.append(np.array([(i + 1) / 2.0 ** level]))
        seg_flags.append(np.array([True]))
        if i < n_int - 1:
            m = pieces[i]
            frac = np.arange(1, m + 1) / m
            pts = (gap_lo[i] + frac * (gap_hi[i] - gap_lo[i])) / unit
            pts[-1] = gap_hi[i] / unit
            seg_nodes.append(pts)
            seg_clock.append(np.full(m, (i + 1) / 2.0 ** level))
            seg_flags.append(np.zeros(m, dtype=bool))
    nodes.extend(seg_nodes)
    clock.extend(seg_clock)
    flags.extend(seg_flags)
    grid = np.concatenate(nodes) * s_max
    clk = np.concatenate(clock)
    in_cantor = np.concatenate(flags)
    if horizon > s_max:
        m = int(np.ceil((horizon - s_max) / max_step))
        tail = s_max + (horizon - s_max) * np.arange(1, m + 1) / m
        grid = np.concatenate([grid, tail])
        clk = np.concatenate([clk, np.ones(m)])
        in_cantor = np.concatenate([in_cantor, np.zeros(m, dtype=bool)])
    return CantorGrid(grid, clk, in_cantor, level, s_max)


def uniform_clock_grid(horizon: float, n_steps: int, sigma2: float = 1.0):
    grid = np.arange(n_steps + 1, dtype=np.float64) * (horizon / n_steps)
    return grid, sigma2 * grid


class BridgeCellSource:
    """Backward Brownian-bridge cells for ``X = B o c`` with a Cox random time.

    Members are ``W`` (the increments of ``X``) and ``M``.  The hazard must
    be deterministic.  ``cantor_nodes`` optionally supplies exact values of
    ``C(t / s_max)`` at the nodes (see :func:`cantor_adapted_grid`); all
    singular components must then share that ``s_max``.
    """

    members = ("W", "M")

    def __init__(self, grid: np.ndarray, clock: np.ndarray, spec: HazardSpec, n_paths: int,
                 root_seed: int, block: int = BLOCK, cantor_nodes: np.ndarray | None = None):
        grid = np.asarray(grid, dtype=np.float64)
        clock = np.asarray(clock, dtype=np.float64)
        if grid.shape != clock.shape or np.any(np.diff(grid) <= 0):
            raise DomainError("grid must be strictly increasing and match the clock")
        if clock[0] != 0.0 or np.any(np.diff(clock) < 0):
            raise ModelError("clock must start at 0 and be non-decreasing")
        if spec.path_dependent:
            raise ConfigurationError("bridge sources need a deterministic hazard")
        self.grid, self.clock, self.spec = grid, clock, spec
        self.n_paths = int(n_paths)
        self.root_seed = int(root_seed)
        self.block = int(block)
        theta_seeds = rng.derive_seeds(self.root_seed, rng.THETA, 0, self.n_paths)
        self.theta = np.array([rng.generator(int(s)).standard_exponential() for s in theta_seeds])
        ac, total = spec.nodes(grid)
        if cantor_nodes is not None:
            # exact staircase values at the nodes keep the hazard flat on every gap
            total = ac + sum(c.kappa for c in spec.singular) * np.asarray(cantor_nodes)[None, :]
        kappas, smaxs = spec._singular_arrays()
        tau, gamma_tau = kernels.first_passage(grid, ac, total, self.theta, kappas, smaxs,
                                               spec.cantor_depth, 1e-12)
        self.defaulted = np.isfinite(tau)
        self.tau = np.where(self.defaulted, tau, grid[-1] + 1.0)
        self.gamma_tau = gamma_tau
        self.gamma = total[0]
        g = rng.generator(rng.derive_seed(self.root_seed, rng.BRIDGE, 0))
        self.x_terminal = np.sqrt(clock[-1]) * g.standard_normal(self.n_paths)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def hazard_at(self, node: int) -> np.ndarray:
        return np.full(self.n_paths, self.gamma[node])

    def _lambda(self, k: int) -> np.ndarray:
        return np.where(self.grid[k] < self.tau, self.gamma[k], self.gamma_tau)

    def _m(self, k: int) -> np.ndarray:
        return (self.grid[k] >= self.tau).astype(np.float64) - self._lambda(k)

    def terminal(self) -> dict:
        K = self.grid.size - 1
        return {"L": self.x_terminal.copy(), "W": self.x_terminal.copy(),
                "H": (self.grid[K] >= self.tau).astype(np.float64), "M": self._m(K),
                "Lambda": self._lambda(K), "A": np.full(self.n_paths, np.exp(-self.gamma[K])),
                "tau": self.tau.copy()}

    def _normals(self, b: int) -> np.ndarray:
        g = rng.generator(rng.derive_seed(self.root_seed, rng.BRIDGE, b + 1))
        return g.standard_normal((self.block, self.n_paths))

    def cells(self) -> Iterator[tuple[int, CellState, dict]]:
        K = self.grid.size - 1
        x_next = self.x_terminal.copy()
        m_next = self._m(K)
        h_next = (self.grid[K] >= self.tau).astype(np.float64)
        cur_block, normals = -1, None
        for k in range(K - 1, -1, -1):
            c0, c1 = self.clock[k], self.clock[k + 1]
            if c1 > c0:
                b = k // self.block
                if b != cur_block:
                    normals, cur_block = self._normals(b), b
                if c0 > 0:
                    x = x_next * (c0 / c1) + np.sqrt(c0 * (c1 - c0) / c1) * normals[k % self.block]
                else:
                    x = np.zeros(self.n_paths)
            else:
                x = x_next
            t = float(self.grid[k])
            alive = t < self.tau
            lam = np.where(alive, self.gamma[k], self.gamma_tau)
            h = (~alive).astype(np.float64)
            z = x / np.sqrt(c0) if c0 > 0 else np.zeros(self.n_paths)
            state = CellState(t=t, L=x, z=z, H=h, A=np.full(self.n_paths, np.exp(-self.gamma[k])),
                              Lambda=lam, tau=self.tau, gamma=np.full(self.n_paths, self.gamma[k]))
            state.extra["events"] = {"M": int(np.count_nonzero(h_next - h))}
            m_k = h - lam
            yield k, state, {"W": x_next - x, "M": m_next - m_k}
            x_next, m_next, h_next = x, m_k, h


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PanelRow:
    """Residuals of one payoff.

    ``r_free`` comes from a free regression integrand against ``W + M`` and
    ``r_splice`` from ``1_D U + 1_{D^c} V`` built from the pair integrands.
    Both are integrals against the single driver, so ``r_single`` is the
    smaller of the two.
    """

    payoff: str
    r_pair: float
    r_free: float
    r_splice: float
    se_pair: float
    se_free: float

    @property
    def r_single(self) -> float:
        return min(self.r_free, self.r_splice)

    @property
    def gap(self) -> float:
        return self.r_single - self.r_pair


@dataclass(frozen=True)
class SingularityReport:
    """How the hazard measure and the reference clock sit on the grid.

    ``hazard_mass_on_d`` is the fraction of ``dGamma`` on the cells flagged
    ``d`` (the support of the hazard for singular hazards), ``clock_mass_on_d``
    the same for the reference clock, ``lebesgue_on_d`` the total length of
    those cells and ``max_tau_distance`` the largest distance from
    ``tau / s_max`` to the Cantor set over defaulted paths.
    """

    hazard_mass_on_d: float
    clock_mass_on_d: float
    lebesgue_on_d: float
    max_tau_distance: float


@dataclass(frozen=True)
class MultiplicityReport:
    """Panel residuals with the verdict.

    ``verdict`` is ``multiplicity-one`` when the single driver ``W + M``
    loses at most ``tol`` against the pair on every payoff,
    ``multiplicity-two`` when it loses at least ``gap`` on some payoff and
    ``inconclusive`` otherwise.
    """

    rows: tuple
    verdict: str
    tol: float
    gap: float
    n_paths: int
    n_cells: int
    singularity: SingularityReport | None = None
    hazard_kind: str = ""
    d_description: str = ""
    info: dict = field(default_factory=dict)

    @property
    def ordering_holds(self) -> bool:
        """The pair never does worse than the single driver, up to 4 standard errors."""
        return all(r.r_pair <= r.r_single + 4.0 * (r.se_pair + r.se_free) for r in self.rows)

    @property
    def max_gap(self) -> float:
        return max(r.gap for r in self.rows)


def verdict(rows: Sequence[PanelRow], tol: float = MULTIPLICITY_TOL, gap: float = MULTIPLICITY_GAP) -> str:
    gaps = [r.gap for r in rows]
    if all(g <= tol for g in gaps):
        return "multiplicity-one"
    if any(g >= gap for g in gaps):
        return "multiplicity-two"
    return "inconclusive"


def single_driver_features(features: FeatureSet) -> FeatureSet:
    """Features for the free single-driver integrand.

    The integrand may depend on the survival state; sets without a
    random-time atom are doubled with ``1-H`` products.
    """
    if features.uses_random_time:
        return features
    return features + FeatureSet(tuple(f"{n}*1-H" for n in features.names))


def run_panel(source, panel: Sequence[Payoff], d_cells: np.ndarray, ridge: float = RIDGE,
              min_paths: int = 10_000, pool: float | None = None) -> list[PanelRow]:
    """Pair fit ``{W, M}``, single fit ``W + M`` and the splice ``1_D U + 1_{D^c} V``.

    Integrand coefficients are shared within time buckets of width ``pool``,
    separately on ``D`` and off ``D``.
    """
    if source.n_paths < min_paths:
        raise StatisticalPowerError(f"regression needs at least {min_paths} paths, got {source.n_paths}")
    term = source.terminal()
    requests = []
    for p in panel:
        xi = p(term)
        feats = p.default_features(source.horizon)
        requests.append(FitRequest(xi, feats, (("W",), ("M",)), p.label + " pair"))
        requests.append(FitRequest(xi, single_driver_features(feats), (("W", "M"),), p.label + " single"))

    def hook(k, state, inc, levels):
        dz = inc["W"] + inc["M"]
        out = []
        for j in range(len(panel)):
            if d_cells[k]:
                # D is restricted to t <= tau: M is stopped afterwards and its integrand is void there
                on_d = state.H == 0.0
                out.append(((j, 1), 2 * j, 1, np.where(on_d, dz, 0.0)))
                out.append(((j, 0), 2 * j, 0, np.where(on_d, 0.0, dz)))
            else:
                out.append(((j, 0), 2 * j, 0, dz))
        return out

    sweep = backward_sweep(source, requests, ridge, pool=pool, groups=np.asarray(d_cells, dtype=np.int64),
                           hook=hook)
    rows = []
    for j, p in enumerate(panel):
        pair, single = sweep.fits[2 * j], sweep.fits[2 * j + 1]
        rp, sp = relative_residual(pair.request.xi, pair.reconstruction)
        rs, ss = relative_residual(single.request.xi, single.reconstruction)
        splice = sum(v for key, v in sweep.functionals.items() if key[0] == j)
        rz, _ = relative_residual(pair.request.xi, pair.x0 + splice)
        rows.append(PanelRow(p.label, rp, rs, rz, sp, ss))
    return rows


def default_panel(horizon: float, level: float = 2.0) -> tuple:
    """``W_T``, ``M_T``, ``H_T`` and ``clip(L_T, -level, level) 1{tau > T/2}``."""
    return (payoff("W_T"), payoff("M_T"), payoff("H_T"),
            payoff("clipped_L_survival", level=level, s=horizon / 2))


def validate_panel(panel: Sequence[Payoff]) -> None:
    """A panel needs a reference functional, ``H_T`` and a mixed survival payoff.

    Raises
    ------
    ConfigurationError
        If one of the three kinds is missing.
    """
    names = {p.name for p in panel}
    missing = []
    if not names & {"W_T", "L_T", "clipped_L"}:
        missing.append("a functional of W or L (W_T, L_T or clipped_L)")
    if "H_T" not in names:
        missing.append("H_T")
    if "clipped_L_survival" not in names:
        missing.append("a mixed payoff (clipped_L_survival)")
    if missing:
        raise ConfigurationError("payoff panel lacks " + ", ".join(missing))


def singularity_report(grid: np.ndarray, clock: np.ndarray, gamma: np.ndarray, d_cells: np.ndarray,
                       tau: np.ndarray, defaulted: np.ndarray, s_max: float | None) -> SingularityReport:
    dg = np.diff(gamma)
    dc = np.diff(clock)
    hz = float(dg[d_cells].sum() / dg.sum()) if dg.sum() > 0 else 0.0
    ck = float(dc[d_cells].sum() / dc.sum()) if dc.sum() > 0 else 0.0
    leb = float(np.diff(grid)[d_cells].sum())
    dist = 0.0
    if s_max is not None and defaulted.any():
        dist = float(np.max(cantor_set_distance(np.minimum(tau[defaulted] / s_max, 1.0))))
    return SingularityReport(hz, ck, leb, dist)


def multiplicity_experiment(spec: HazardSpec, n_paths: int, root_seed: int, horizon: float = 1.0,
                            sigma2: float = 1.0, level: int = 12, n_steps: int = 1024,
                            panel: Sequence[Payoff] | None = None, max_step: float = 2.0 ** -10,
                            tol: float = MULTIPLICITY_TOL, gap: float = MULTIPLICITY_GAP,
                            ridge: float = RIDGE, min_paths: int = 10_000,
                            pool: float | None = POOL) -> MultiplicityReport:
    """Compare the pair ``{W, M}`` with the single driver ``W + M`` on a payoff panel.

    Hazards with a singular component use a Cantor-adapted grid of the given
    ``level`` and ``D`` = Cantor cells; purely absolutely continuous hazards
    use ``n_steps`` uniform cells and ``D`` is empty.
    """
    if spec.path_dependent:
        raise ConfigurationError("the multiplicity experiment needs a deterministic hazard")
    sing = spec.singular
    if sing:
        s_max = sing[0].s_max
        if any(c.s_max != s_max for c in sing):
            raise ConfigurationError("singular components must share s_max")
        cg = cantor_adapted_grid(level, s_max, horizon, max_step)
        grid, d_cells = cg.grid, cg.in_cantor
        clock = sigma2 * grid
    else:
        s_max = None
        grid, clock = uniform_clock_grid(horizon, n_steps, sigma2)
        d_cells = np.zeros(n_steps, dtype=bool)
    source = BridgeCellSource(grid, clock, spec, n_paths, root_seed,
                              cantor_nodes=cg.clock if sing else None)
    panel = default_panel(horizon) if panel is None else tuple(panel)
    validate_panel(panel)
    rows = run_panel(source, panel, d_cells, ridge, min_paths, pool)
    sr = singularity_report(grid, clock, source.gamma, d_cells, source.tau, source.defaulted, s_max)
    d_text = (f"Cantor cells of level {level} on [0, {s_max!r}] intersected with t <= tau" if sing
              else "empty (no singular hazard component)")
    return MultiplicityReport(tuple(rows), verdict(rows, tol, gap), tol, gap, n_paths, grid.size - 1, sr,
                              spec.kind, d_text)


@dataclass(frozen=True)
class TimeChangeReport:
    """Quadratic variation of ``X = W o C`` and the multiplicity panel against ``M``."""

    qv_mean: float
    qv_se: float
    qv_target: float
    qv_steps: int
    multiplicity: MultiplicityReport

    @property
    def qv_rel_error(self) -> float:
        return abs(self.qv_mean - self.qv_target) / self.qv_target


def time_change_qv(n_steps: int, n_paths: int, root_seed: int, s_max: float = 1.0,
                   horizon: float = 1.0, depth: int = 48) -> tuple[float, float]:
    """Batch mean and SE of the realised ``[X, X]_T`` for ``X = W o C`` on a uniform grid."""
    grid = np.arange(n_steps + 1) * (horizon / n_steps)
    c = kernels.cantor(np.minimum(grid / s_max, 1.0), depth)
    dc = np.diff(c)
    if np.any(dc < 0):
        raise ModelError("clock is not monotone")
    qv = np.empty(n_paths)
    chunk = 1024
    for b, lo in enumerate(range(0, n_paths, chunk)):
        hi = min(lo + chunk, n_paths)
        g = rng.generator(rng.derive_seed(root_seed, rng.PATHS, b))
        dx = np.sqrt(dc)[None, :] * g.standard_normal((hi - lo, n_steps))
        qv[lo:hi] = np.sum(dx * dx, axis=1)
    return float(qv.mean()), float(qv.std(ddof=1) / np.sqrt(n_paths))


def time_change_example(n_paths: int, root_seed: int, rate: float = 1.0, horizon: float = 1.0,
                        level: int = 14, qv_steps: int = 2 ** 12, qv_paths: int = 10_000,
                        panel: Sequence[Payoff] | None = None, max_step: float = 2.0 ** -10,
                        tol: float = MULTIPLICITY_TOL, gap: float = MULTIPLICITY_GAP,
                        ridge: float = RIDGE, min_paths: int = 10_000,
                        pool: float | None = POOL) -> TimeChangeReport:
    """``X_t = W_{C_t}`` with a constant-rate Cox time.

    ``X`` moves only on the Cantor set while the hazard is absolutely
    continuous, so ``D`` is the complement of the Cantor cells: the splice
    uses the ``M`` integrand off the Cantor set and the ``X`` integrand on it.
    """
    spec = HazardSpec.constant(rate)
    cg = cantor_adapted_grid(level, 1.0, horizon, max_step)
    source = BridgeCellSource(cg.grid, cg.clock, spec, n_paths, root_seed)
    panel = default_panel(horizon) if panel is None else tuple(panel)
    validate_panel(panel)
    d_cells = ~cg.in_cantor
    rows = run_panel(source, panel, d_cells, ridge, min_paths, pool)
    sr = singularity_report(cg.grid, cg.clock, source.gamma, d_cells, source.tau, source.defaulted, None)
    report = MultiplicityReport(tuple(rows), verdict(rows, tol, gap), tol, gap, n_paths, cg.grid.size - 1, sr,
                                spec.kind, f"gaps of the level-{level} Cantor cover, intersected with t <= tau")
    mean, se = time_change_qv(qv_steps, qv_paths, root_seed, 1.0, horizon)
    return TimeChangeReport(mean, se, float(cg.clock[-1]), qv_steps, report)
