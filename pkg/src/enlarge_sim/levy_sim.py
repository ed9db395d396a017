"""Finite-activity Levy processes: characteristic exponent, simulation and
a characteristic-function check of the simulated law.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels, rng
from .errors import DomainError, ModelError, StatisticalPowerError

#: minimum batch for Monte Carlo z-score tests
MIN_TEST_PATHS = 10_000


@dataclass(frozen=True)
class LevyModel:
    """Levy triplet with a finite Levy measure on finitely many atoms.

    Parameters
    ----------
    beta : float
        Drift in the truncated-compensation convention: small jumps
        (``|x| <= 1``) are compensated inside the exponent.
    sigma2 : float
        Diffusion variance rate.
    nu : sequence of (size, rate)
        Atoms of the Levy measure.  Sizes must be distinct and non-zero,
        rates strictly positive.
    """

    beta: float = 0.0
    sigma2: float = 1.0
    nu: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        nu = tuple((float(x), float(r)) for x, r in self.nu)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not np.isfinite(self.beta) or not np.isfinite(self.sigma2):
            raise ModelError("beta and sigma2 must be finite")
        if self.sigma2 < 0:
            raise ModelError(f"sigma2 must be non-negative, got {self.sigma2}")
        sizes = [x for x, _ in nu]
        for x, r in nu:
            if not (np.isfinite(x) and np.isfinite(r)):
                raise ModelError("Levy measure atoms must be finite")
            if x == 0.0:
                raise ModelError("Levy measure may not charge 0")
            if r <= 0.0:
                raise ModelError(f"Levy measure rates must be positive, got {r}")
        if len(set(sizes)) != len(sizes):
            raise ModelError("Levy measure atoms must be distinct")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([x for x, _ in self.nu], dtype=np.float64)

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for _, r in self.nu], dtype=np.float64)

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum()) if self.nu else 0.0

    @property
    def path_drift(self) -> float:
        """Drift of the uncompensated path ``L = b t + W + sum of jumps``."""
        if not self.nu:
            return self.beta
        small = np.abs(self.sizes) <= 1.0
        return float(self.beta - np.sum(self.sizes[small] * self.rates[small]))

    @property
    def variance_rate(self) -> float:
        """``Var(L_1) = sigma2 + sum x^2 nu``."""
        return float(self.sigma2 + np.sum(self.sizes**2 * self.rates)) if self.nu else self.sigma2

    @property
    def mean_rate(self) -> float:
        """``E[L_1] = b + sum x nu``."""
        return float(self.path_drift + np.sum(self.sizes * self.rates)) if self.nu else self.beta


def characteristic_exponent(model: LevyModel, u):
    """Levy-Khintchine exponent ``psi(u)`` so that ``E exp(i u L_t) = exp(t psi(u))``.

    Parameters
    ----------
    model : LevyModel
    u : float or array_like
        Real frequencies.

    Returns
    -------
    complex or ndarray of complex
    """
    u_arr = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u_arr)):
        raise DomainError("frequencies must be finite")
    psi = 1j * model.beta * u_arr - 0.5 * model.sigma2 * u_arr**2
    for x, r in model.nu:
        trunc = x if abs(x) <= 1.0 else 0.0
        psi = psi + r * (np.exp(1j * u_arr * x) - 1.0 - 1j * u_arr * trunc)
    if np.ndim(u) == 0:
        return complex(psi)
    return psi


@dataclass(frozen=True)
class JumpLedger:
    """Exact jump record: ``path[e]`` jumps by ``size[e]`` at ``time[e]``.

    Entries are sorted by ``(path, time)``.  ``mark`` is the index of the
    Levy atom (``-1`` for jumps that do not come from the Levy measure).
    """

    path: np.ndarray
    time: np.ndarray
    size: np.ndarray
    mark: np.ndarray

    @classmethod
    def empty(cls) -> "JumpLedger":
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0), np.zeros(0, np.int64))

    def __len__(self) -> int:
        return int(self.time.size)

    def with_sizes(self, size: np.ndarray) -> "JumpLedger":
        return JumpLedger(self.path, self.time, np.asarray(size, dtype=np.float64), self.mark)

    def select(self, paths: np.ndarray) -> "JumpLedger":
        """Ledger restricted to ``paths`` with path ids renumbered ``0..len(paths)-1``."""
        paths = np.asarray(paths, dtype=np.int64)
        lookup = np.full(int(self.path.max(initial=-1)) + 1, -1, dtype=np.int64)
        valid = paths[paths < lookup.size]
        lookup[valid] = np.nonzero(paths < lookup.size)[0]
        new = lookup[self.path] if self.path.size else self.path
        keep = new >= 0
        order = np.lexsort((self.time[keep], new[keep]))
        return JumpLedger(new[keep][order], self.time[keep][order], self.size[keep][order], self.mark[keep][order])


@dataclass(frozen=True)
class PathBundle:
    """One simulated path on a uniform grid."""

    grid: np.ndarray
    l_values: np.ndarray
    w_values: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    jump_marks: np.ndarray
    seed: int
    model: LevyModel = field(repr=False)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    def jump_sum(self, t: np.ndarray | float) -> np.ndarray:
        """Sum of jump sizes with time ``<= t``."""
        cs = np.concatenate([[0.0], np.cumsum(self.jump_sizes)])
        return cs[np.searchsorted(self.jump_times, t, side="right")]


def _check_grid_args(horizon: float, n_steps: int) -> None:
    if not (np.isfinite(horizon) and horizon > 0):
        raise DomainError(f"horizon must be positive, got {horizon}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise DomainError(f"n_steps must be a positive integer, got {n_steps}")


def uniform_grid(horizon: float, n_steps: int) -> np.ndarray:
    _check_grid_args(horizon, n_steps)
    return np.arange(n_steps + 1, dtype=np.float64) * (horizon / n_steps)


def _draw(model: LevyModel, horizon: float, n_steps: int, seed: int):
    g = rng.generator(seed)
    dw = np.sqrt(model.sigma2 * horizon / n_steps) * g.standard_normal(n_steps)
    n_jumps = int(g.poisson(model.total_rate * horizon)) if model.nu else 0
    if n_jumps:
        times = np.sort(horizon * (1.0 - g.random(n_jumps)))
        marks = g.choice(len(model.nu), size=n_jumps, p=model.rates / model.total_rate).astype(np.int64)
    else:
        times = np.zeros(0)
        marks = np.zeros(0, dtype=np.int64)
    return dw, times, marks


def simulate_path(model: LevyModel, horizon: float, n_steps: int, seed: int) -> PathBundle:
    """Simulate one path of ``L = b t + W + sum of jumps`` on a uniform grid.

    Jumps are placed at their exact times; ``l_values[k]`` includes every
    jump with time ``<= grid[k]``.  The draw is a deterministic function of
    ``seed``.
    """
    grid = uniform_grid(horizon, n_steps)
    dw, times, marks = _draw(model, horizon, n_steps, seed)
    w = np.concatenate([[0.0], np.cumsum(dw)])
    sizes = model.sizes[marks] if marks.size else np.zeros(0)
    jumps = np.concatenate([[0.0], np.cumsum(sizes)])[np.searchsorted(times, grid, side="right")]
    l_values = model.path_drift * grid + w + jumps
    return PathBundle(grid, l_values, w, times, sizes, marks, int(seed), model)


@dataclass
class PathBatch:
    """Batch of independent paths sharing a grid.

    Only the Brownian part ``w`` is stored densely; ``L`` and functionals of
    the jumps are assembled on demand from the exact ``ledger``.
    """

    model: LevyModel
    grid: np.ndarray
    w: np.ndarray
    ledger: JumpLedger
    seeds: np.ndarray
    root_seed: int

    @property
    def n_paths(self) -> int:
        return self.w.shape[0]

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def __len__(self) -> int:
        return self.n_paths

    def node_index(self, t) -> np.ndarray:
        """Grid index of each time in ``t``; raises unless ``t`` lies on the grid."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        idx = np.searchsorted(self.grid, t)
        idx = np.minimum(idx, self.grid.size - 1)
        lower = np.maximum(idx - 1, 0)
        pick = np.where(np.abs(self.grid[lower] - t) < np.abs(self.grid[idx] - t), lower, idx)
        if np.any(np.abs(self.grid[pick] - t) > 1e-12 * max(1.0, self.horizon)):
            raise DomainError(f"times {t} are not grid nodes")
        return pick

    def jump_sums(self, weights: np.ndarray | None = None, nodes=None) -> np.ndarray:
        """Cumulative jump marks at grid nodes, shape ``(n_paths, len(nodes))``.

        ``weights`` gives one value per Levy atom (default: the jump sizes).
        """
        if weights is None:
            w = self.ledger.size
        else:
            w = np.asarray(weights, dtype=np.float64)[self.ledger.mark]
        grid = self.grid if nodes is None else self.grid[np.asarray(nodes)]
        return kernels.jump_cumsum(self.n_paths, grid, self.ledger.path, self.ledger.time, w)

    def l_at(self, nodes) -> np.ndarray:
        """``L`` at selected grid nodes, shape ``(n_paths, len(nodes))``."""
        nodes = np.atleast_1d(np.asarray(nodes))
        return self.model.path_drift * self.grid[nodes] + self.w[:, nodes] + self.jump_sums(nodes=nodes)

    @property
    def l_values(self) -> np.ndarray:
        """Dense ``L`` on the full grid (allocates ``n_paths x (n_steps+1)``)."""
        return self.l_at(np.arange(self.grid.size))

    def subset(self, lo: int, hi: int) -> "PathBatch":
        """Paths ``lo..hi-1`` as a batch of their own (``w`` is a view)."""
        led = self.ledger
        a, b = np.searchsorted(led.path, [lo, hi])
        sub = JumpLedger(led.path[a:b] - lo, led.time[a:b], led.size[a:b], led.mark[a:b])
        return PathBatch(self.model, self.grid, self.w[lo:hi], sub, self.seeds[lo:hi], self.root_seed)

    def path(self, i: int) -> PathBundle:
        sel = slice(*np.searchsorted(self.ledger.path, [i, i + 1]))
        times = self.ledger.time[sel]
        sizes = self.ledger.size[sel]
        jumps = np.concatenate([[0.0], np.cumsum(sizes)])[np.searchsorted(times, self.grid, side="right")]
        l_values = self.model.path_drift * self.grid + self.w[i] + jumps
        return PathBundle(self.grid, l_values, self.w[i].copy(), times.copy(), sizes.copy(),
                          self.ledger.mark[sel].copy(), int(self.seeds[i]), self.model)

    def __getitem__(self, i: int) -> PathBundle:
        return self.path(i)


def simulate_batch(model: LevyModel, horizon: float, n_steps: int, n_paths: int,
                   root_seed: int, workers: int = 1, chunk: int = 4096) -> PathBatch:
    """Simulate ``n_paths`` paths; path ``i`` uses seed ``derive_seed(root_seed, PATHS, i)``.

    Row ``i`` is bitwise identical to ``simulate_path(..., seed=batch.seeds[i])``
    whatever the number of ``workers``.
    """
    grid = uniform_grid(horizon, n_steps)
    if n_paths < 1:
        raise DomainError("n_paths must be positive")
    seeds = rng.derive_seeds(root_seed, rng.PATHS, 0, n_paths)
    w = np.zeros((n_paths, n_steps + 1))

    def work(bounds):
        lo, hi = bounds
        out = []
        for i in range(lo, hi):
            dw, times, marks = _draw(model, horizon, n_steps, int(seeds[i]))
            np.cumsum(dw, out=w[i, 1:])
            out.append((times, marks))
        return out

    bounds = [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    records = [rec for part in parts for rec in part]
    counts = np.array([rec[0].size for rec in records], dtype=np.int64)
    if counts.sum():
        times = np.concatenate([rec[0] for rec in records])
        marks = np.concatenate([rec[1] for rec in records])
        ledger = JumpLedger(np.repeat(np.arange(n_paths, dtype=np.int64), counts), times,
                            model.sizes[marks], marks)
    else:
        ledger = JumpLedger.empty()
    return PathBatch(model, grid, w, ledger, seeds, int(root_seed))


@dataclass(frozen=True)
class CharacteristicReport:
    """Empirical versus theoretical ``E exp(i u L_t)`` on a ``(u, t)`` table.

    ``z_real`` and ``z_imag`` are ``(len(u), len(t))`` arrays of z-scores.
    """

    u: np.ndarray
    t: np.ndarray
    empirical: np.ndarray
    theoretical: np.ndarray
    se_real: np.ndarray
    se_imag: np.ndarray
    z_real: np.ndarray
    z_imag: np.ndarray
    n_paths: int
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.z_real)), np.max(np.abs(self.z_imag))))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.threshold

    def rows(self):
        """Flat table rows ``(u, t, emp_re, emp_im, th_re, th_im, z_re, z_im)``."""
        for a, u in enumerate(self.u):
            for b, t in enumerate(self.t):
                e, th = self.empirical[a, b], self.theoretical[a, b]
                yield (u, t, e.real, e.imag, th.real, th.imag, self.z_real[a, b], self.z_imag[a, b])


def _z(diff, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(np.abs(diff) > 1e-14, np.inf, 0.0))
    return z


def verify_levy_characterization(paths: PathBatch | Sequence[PathBundle], model: LevyModel,
                                 u_grid, t_grid, threshold: float = 4.0,
                                 min_paths: int = MIN_TEST_PATHS) -> CharacteristicReport:
    """Compare ``mean exp(i u L_t)`` across paths to ``exp(t psi(u))``.

    Raises
    ------
    StatisticalPowerError
        If fewer than ``min_paths`` paths are supplied.
    """
    u = np.asarray(u_grid, dtype=np.float64)
    t = np.asarray(t_grid, dtype=np.float64)
    if isinstance(paths, PathBatch):
        n = paths.n_paths
        if n < min_paths:
            raise StatisticalPowerError(f"need at least {min_paths} paths, got {n}")
        l_t = paths.l_at(paths.node_index(t))
    else:
        paths = list(paths)
        n = len(paths)
        if n < min_paths:
            raise StatisticalPowerError(f"need at least {min_paths} paths, got {n}")
        grid = paths[0].grid
        idx = np.searchsorted(grid, t)
        l_t = np.stack([p.l_values[idx] for p in paths])
    phase = u[:, None, None] * l_t.T[None, :, :]
    cos, sin = np.cos(phase), np.sin(phase)
    emp = cos.mean(axis=2) + 1j * sin.mean(axis=2)
    se_re = cos.std(axis=2, ddof=1) / np.sqrt(n)
    se_im = sin.std(axis=2, ddof=1) / np.sqrt(n)
    th = np.exp(t[None, :] * characteristic_exponent(model, u)[:, None])
    return CharacteristicReport(u, t, emp, th, se_re, se_im, _z(emp.real - th.real, se_re),
                                _z(emp.imag - th.imag, se_im), n, threshold)
