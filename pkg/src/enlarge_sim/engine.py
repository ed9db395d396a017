"""Backward least-squares sweep for martingale representations.

On each cell ``(t_k, t_{k+1}]``, going backwards, the current estimate
``X_{k+1}`` of the martingale is projected on features ``phi`` of the state
at ``t_k``, which gives ``X_k``.  The innovations ``X_{k+1} - X_k`` are
regressed on ``[phi * dI^1_k, ..., phi * dI^m_k]``, where ``dI^j_k`` are the
increments of the chosen integrators, which gives the integrands.  Because
the levels do not depend on the integrands, the innovation regressions may
be pooled over several cells (a time bucket) to share coefficients where a
single cell carries too little information, e.g. too few defaults.

Cells are supplied by a *cell source*: any object with ``grid``, ``n_paths``, ``members``, ``terminal()`` and
``cells()`` (an iterator of ``(k, CellState, increments)`` from the last
cell to the first).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError
from .features import CellState, FeatureSet
from .levy_sim import LevyModel
from .random_time import ScenarioBatch

#: default Tikhonov weight relative to the mean eigenvalue of the scaled Gram matrix
RIDGE = 1e-8
#: integrator increments with RMS below this are rounding noise; their block is dropped
NEGLIGIBLE_INCREMENT = 1e-13
#: blocks driven by jumps need this many jumps per coefficient in a window
MIN_EVENTS_PER_COEF = 2.0


class BatchCellSource:
    """Cells of a stored :class:`~enlarge_sim.random_time.ScenarioBatch`.

    Members are ``W`` (the Gaussian part, if ``sigma2 > 0``), ``X1..Xn``
    (compensated jump martingales of ``basis``) and ``M``.
    """

    def __init__(self, scenarios: ScenarioBatch, basis=None):
        self.scenarios = scenarios
        self.batch = scenarios.batch
        self.model: LevyModel = self.batch.model
        self.grid = self.batch.grid
        self.n_paths = self.batch.n_paths
        self.basis = basis
        members = []
        if self.model.sigma2 > 0:
            members.append("W")
        if basis is not None:
            members.extend(f"X{i + 1}" for i in range(basis.dim))
        members.append("M")
        self.members = tuple(members)
        led = self.batch.ledger
        cell = np.searchsorted(self.grid, led.time, side="left") - 1
        self._order = np.argsort(cell, kind="stable")
        self._cell_sorted = cell[self._order]
        if basis is not None:
            self._f_marks = basis.values
            self._f_comp = basis.compensators

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def hazard_at(self, node: int) -> np.ndarray:
        return np.asarray(self.scenarios.gamma_at([node])[:, 0])

    def terminal(self) -> dict:
        s = self.scenarios
        K = self.grid.size - 1
        return {
            "L": self.batch.l_at([K])[:, 0],
            "W": self.batch.w[:, K].copy(),
            "H": s.h_at([K])[:, 0],
            "M": s.m_at([K])[:, 0],
            "Lambda": s.lambda_at([K])[:, 0],
            "A": s.a_at([K])[:, 0],
            "tau": s.tau.copy(),
        }

    def _state(self, k: int, L: np.ndarray) -> CellState:
        s = self.scenarios
        t = float(self.grid[k])
        sd = np.sqrt(self.model.variance_rate * t)
        z = (L - self.model.mean_rate * t) / sd if sd > 0 else np.zeros_like(L)
        gamma = np.ascontiguousarray(s.gamma_at([k])[:, 0])
        alive = t < s.tau
        return CellState(t=t, L=L, z=z, H=(~alive).astype(np.float64), A=np.exp(-gamma),
                         Lambda=np.where(alive, gamma, s.gamma_tau), tau=s.tau, gamma=gamma)

    def cells(self) -> Iterator[tuple[int, CellState, dict]]:
        K = self.grid.size - 1
        led = self.batch.ledger
        drift = self.model.path_drift
        jumps = self.batch.jump_sums(nodes=[K])[:, 0]
        s = self.scenarios
        m_next = s.m_at([K])[:, 0]
        h_next = s.h_at([K])[:, 0]
        for k in range(K - 1, -1, -1):
            lo, hi = np.searchsorted(self._cell_sorted, [k, k + 1])
            sel = self._order[lo:hi]
            paths = led.path[sel]
            np.subtract.at(jumps, paths, led.size[sel])
            L = drift * self.grid[k] + self.batch.w[:, k] + jumps
            state = self._state(k, L)
            events = {"M": int(np.count_nonzero(h_next - state.H))}
            events.update({f"X{i + 1}": int(sel.size) for i in range(self.basis.dim)} if self.basis else {})
            state.extra["events"] = events
            h_next = state.H
            m_k = state.H - state.Lambda
            inc = {"M": m_next - m_k}
            if "W" in self.members:
                inc["W"] = self.batch.w[:, k + 1] - self.batch.w[:, k]
            if self.basis is not None:
                dt = self.grid[k + 1] - self.grid[k]
                for i in range(self.basis.dim):
                    d = np.full(self.n_paths, -dt * self._f_comp[i])
                    np.add.at(d, paths, self._f_marks[i, led.mark[sel]])
                    inc[f"X{i + 1}"] = d
            m_next = m_k
            yield k, state, inc


@dataclass
class FitRequest:
    """One regression problem: payoff values, features and integrators.

    Each integrator is a tuple of member names whose increments are summed,
    e.g. ``("W",)``, ``("M",)`` or ``("W", "M")`` for a single driver.
    """

    xi: np.ndarray
    features: FeatureSet
    integrators: tuple[tuple[str, ...], ...]
    label: str = ""

    @property
    def integrator_names(self) -> tuple[str, ...]:
        return tuple("+".join(i) for i in self.integrators)


@dataclass
class FitOutcome:
    """Result of one backward sweep.

    ``level_coefs[k]`` gives ``X_k = phi(t_k) @ level_coefs[k]`` and
    ``integrand_coefs[k, m]`` the integrand of integrator ``m`` on cell ``k``.
    """

    request: FitRequest
    x0: float
    reconstruction: np.ndarray
    level_coefs: np.ndarray
    integrand_coefs: np.ndarray
    rank_deficient_cells: list = field(default_factory=list)
    ridge_bumped_cells: list = field(default_factory=list)

    @property
    def residual(self) -> np.ndarray:
        return self.request.xi - self.reconstruction


@dataclass
class SweepResult:
    """Outcomes per request plus the linear functionals accumulated for the hook."""

    fits: list
    functionals: dict


def relative_residual(xi: np.ndarray, approx: np.ndarray) -> tuple[float, float]:
    """``||xi - approx|| / ||xi - E xi||`` in empirical L2 and its delta-method SE."""
    d = (xi - approx) ** 2
    e = (xi - xi.mean()) ** 2
    md, me = d.mean(), e.mean()
    if me <= 1e-24:
        return float(np.sqrt(md) / 1e-12), 0.0
    r = float(np.sqrt(md / me))
    if md <= 0:
        return 0.0, 0.0
    infl = d / md - e / me
    se = 0.5 * r * float(np.sqrt(np.var(infl) / xi.size))
    return r, se


def _solve(G: np.ndarray, b: np.ndarray, n: int, ridge: float):
    """Ridge solution of the normal equations after scaling to a unit diagonal.

    Returns ``(c, deficient, bumped)``: the coefficients, whether the scaled
    Gram matrix is numerically singular and whether the ridge had to be raised.
    """
    d = np.diag(G) / n
    scale = np.sqrt(np.where(d > 0, d, 1.0))
    Gs = G / np.outer(scale, scale) / n
    bs = b / scale / n
    lam = ridge * float(np.trace(Gs)) / Gs.shape[0]
    q = Gs.shape[0]
    try:
        L = np.linalg.cholesky(Gs + lam * np.eye(q))
        piv = np.diag(L) ** 2
        if piv.min() > 1e-6 * piv.max():
            y = np.linalg.solve(L, bs)
            return np.linalg.solve(L.T, y) / scale, False, False
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(Gs)
    top = max(float(w[-1]), 1e-300)
    deficient = float(w[0]) < 1e-12 * top
    bumped = False
    for _ in range(6):
        with np.errstate(divide="ignore", invalid="ignore"):
            c = V @ ((V.T @ bs) / (w + lam))
        if np.all(np.isfinite(c)):
            break
        lam = max(lam * 1e4, 1e-12 * top)
        bumped = True
    return c / scale, deficient, bumped


class _Window:
    """Sufficient statistics of the innovation regressions over a group of cells."""

    def __init__(self, requests, n):
        self.cells = []
        q = [len(r.features) * len(r.integrators) for r in requests]
        self.gram = [np.zeros((m, m)) for m in q]
        self.rhs = [np.zeros(m) for m in q]
        self.design_sum = [None] * len(requests)
        self.n = n
        # jumps seen per integrator; inf for blocks with a continuous member
        self.events = [np.zeros(len(r.integrators)) for r in requests]
        self.functionals = {}

    def add(self, j, D, eps, cols):
        """Accumulate the design ``D`` whose columns are ``cols`` (a slice or index array)."""
        if self.design_sum[j] is None:
            self.design_sum[j] = np.zeros((self.n, self.gram[j].shape[0]))
        if isinstance(cols, slice):
            self.gram[j][cols, cols] += D.T @ D
            self.design_sum[j][:, cols] += D
        else:
            self.gram[j][np.ix_(cols, cols)] += D.T @ D
            self.design_sum[j][:, cols] += D
        self.rhs[j][cols] += D.T @ eps


def backward_sweep(source, requests: Sequence[FitRequest], ridge: float = RIDGE,
                   pool: float | None = None, groups: np.ndarray | None = None,
                   hook: Callable | None = None) -> SweepResult:
    """Run all ``requests`` in one pass over ``source``.

    Parameters
    ----------
    source : cell source
    requests : sequence of FitRequest
    ridge : float
        Tikhonov weight relative to the mean scaled eigenvalue.
    pool : float, optional
        Width of the time buckets over which integrand coefficients are
        shared.  ``None`` estimates them cell by cell.
    groups : (K,) int array, optional
        Cell labels; cells of different groups never share coefficients.
    hook : callable, optional
        ``hook(k, state, increments, levels)`` returning ``(key, j, m, vec)``
        tuples.  For each, ``sum_k (vec * phi_j(t_k)) @ c_{j,m,k}`` is
        accumulated into ``SweepResult.functionals[key]``, where ``c`` are
        the integrand coefficients of integrator ``m`` of request ``j``.
        ``levels[j]`` is ``X_k`` of request ``j``.
    """
    K = source.grid.size - 1
    n = source.n_paths
    for r in requests:
        for integ in r.integrators:
            for name in integ:
                if name not in source.members:
                    raise ConfigurationError(f"integrator {name!r} not among {source.members}")
    groups = np.zeros(K, dtype=np.int64) if groups is None else np.asarray(groups)
    xhat = [np.asarray(r.xi, dtype=np.float64).copy() for r in requests]
    recon = [np.zeros(n) for _ in requests]
    level = [np.zeros((K + 1, len(r.features))) for r in requests]
    integ_c = [np.zeros((K, len(r.integrators), len(r.features))) for r in requests]
    deficient = [[] for _ in requests]
    bumped = [[] for _ in requests]
    functionals: dict = {}
    buffers = [np.empty((n, len(r.features) * len(r.integrators))) for r in requests]
    open_windows: dict = {}
    current_bucket = None

    thresholds = [MIN_EVENTS_PER_COEF * len(r.features) for r in requests]
    latest = [np.zeros((len(r.integrators), len(r.features))) for r in requests]
    # until a block has been identified once, it is fitted whatever its jump count
    identified = [np.zeros(len(r.integrators), dtype=bool) for r in requests]

    def fit_window(j, gram, rhs, keep, fixed_c, cells):
        """Solve for the kept blocks with the other blocks held at ``fixed_c``."""
        p = len(requests[j].features)
        kc = np.repeat(keep, p)
        c = fixed_c.ravel().copy()
        c[kc] = 0.0
        if kc.any():
            b = rhs[kc] - gram[np.ix_(kc, ~kc)] @ c[~kc]
            ck, bad, bump = _solve(gram[np.ix_(kc, kc)], b, n, ridge)
            c[kc] = ck
            if bad:
                deficient[j].extend(cells)
            if bump:
                bumped[j].extend(cells)
        return c

    def close(windows):
        for j, r in enumerate(requests):
            wins = [w for w in windows if w.design_sum[j] is not None]
            if not wins:
                continue
            p = len(r.features)
            events = sum(w.events[j] for w in wins)
            # blocks with too few jumps (a handful of defaults) in a window are not
            # identified there: they take the bucket-wide fit, else the latest one
            keep = (events >= thresholds[j]) | ~identified[j]
            pooled = len(wins) > 1 and not all((w.events[j] >= thresholds[j]).all() for w in wins)
            if pooled:
                cb = fit_window(j, sum(w.gram[j] for w in wins), sum(w.rhs[j] for w in wins), keep,
                                latest[j], [])
                fallback = np.where(np.repeat(keep, p), cb, latest[j].ravel()).reshape(-1, p)
                latest[j][keep] = fallback[keep]
            else:
                fallback = latest[j].copy()
            for w in wins:
                seen = (w.events[j] >= thresholds[j]) | (~identified[j] & (not pooled))
                c = fit_window(j, w.gram[j], w.rhs[j], seen, fallback, w.cells).reshape(-1, p)
                recon[j] += w.design_sum[j] @ c.ravel()
                integ_c[j][w.cells] = c
                if not pooled:
                    latest[j][seen] = c[seen]
            identified[j] |= events > 0
        for w in windows:
            for key, (j, m, acc) in w.functionals.items():
                c = integ_c[j][w.cells[0], m]
                functionals[key] = functionals.get(key, 0.0) + acc @ c

    for k, state, inc in source.cells():
        bucket = k if pool is None else int(np.floor(source.grid[k] / pool))
        if bucket != current_bucket:
            close(list(open_windows.values()))
            open_windows = {}
            current_bucket = bucket
        window = open_windows.get(groups[k])
        if window is None:
            window = open_windows[groups[k]] = _Window(requests, n)
        window.cells.append(k)
        events = state.extra.get("events", {})
        feats = []
        for j, r in enumerate(requests):
            F = r.features.evaluate(state)
            feats.append(F)
            p = F.shape[1]
            c_lev, bad, bump = _solve(F.T @ F, F.T @ xhat[j], n, ridge)
            if bad:
                deficient[j].append(k)
            level[j][k] = c_lev
            new = F @ c_lev
            eps = xhat[j] - new
            active = []
            for m, integ in enumerate(r.integrators):
                d = inc[integ[0]]
                for name in integ[1:]:
                    d = d + inc[name]
                if np.dot(d, d) > n * NEGLIGIBLE_INCREMENT ** 2:
                    active.append((m, d))
                    window.events[j][m] += sum(events.get(name, np.inf) for name in integ)
            if active:
                D = buffers[j][:, :p * len(active)]
                for i, (m, d) in enumerate(active):
                    np.multiply(F, d[:, None], out=D[:, p * i:p * (i + 1)])
                ms = [m for m, _ in active]
                if ms == list(range(ms[0], ms[0] + len(ms))):
                    cols = slice(p * ms[0], p * (ms[-1] + 1))
                else:
                    cols = np.concatenate([np.arange(p * m, p * (m + 1)) for m in ms])
                window.add(j, D, eps, cols)
            xhat[j] = new
        if hook is not None:
            for key, j, m, vec in hook(k, state, inc, xhat):
                entry = window.functionals.get(key)
                contrib = vec[:, None] * feats[j]
                if entry is None:
                    window.functionals[key] = (j, m, contrib)
                else:
                    entry[2][...] += contrib
    close(list(open_windows.values()))
    fits = []
    for j, r in enumerate(requests):
        x0 = float(np.mean(xhat[j]))
        fits.append(FitOutcome(r, x0, x0 + recon[j], level[j], integ_c[j], sorted(set(deficient[j])),
                               sorted(set(bumped[j]))))
    return SweepResult(fits, functionals)


def replay(fit: FitOutcome, source) -> np.ndarray:
    """``x0 + sum_k phi(t_k) c_k dI_k`` of a fitted coefficient table on another source.

    Evaluating on an independent batch gives an out-of-sample residual.
    """
    out = np.full(source.n_paths, fit.x0)
    r = fit.request
    for k, state, inc in source.cells():
        F = r.features.evaluate(state)
        for m, integ in enumerate(r.integrators):
            d = inc[integ[0]]
            for name in integ[1:]:
                d = d + inc[name]
            out += (F @ fit.integrand_coefs[k, m]) * d
    return out
