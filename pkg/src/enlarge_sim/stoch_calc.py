"""Grid stochastic calculus with exact jump bookkeeping.

A :class:`GridProcess` holds values on a grid for one or more paths plus an
optional :class:`~enlarge_sim.levy_sim.JumpLedger` of exact jump times.  Jumps
are never inferred from grid increments: the continuous part of an increment
is the increment minus the ledger jumps inside the cell.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ModelError, StructuralError
from .levy_sim import JumpLedger


@dataclass(frozen=True)
class GridProcess:
    """Process values on a grid.

    Parameters
    ----------
    grid : (K+1,) array
    values : (K+1,) or (n_paths, K+1) array
        For an integrand, ``values[..., k]`` is its (predictable) value on the
        cell ``(grid[k], grid[k+1]]``; the last column is ignored.
    ledger : JumpLedger, optional
        Exact jumps; ``None`` means continuous.
    diffusive : bool
        Whether the continuous part has non-zero quadratic variation.
    error : float, optional
        Discretisation error proxy attached by estimators.
    noise : ndarray, optional
        Grid cross terms that estimators report but do not include.
    """

    grid: np.ndarray
    values: np.ndarray
    ledger: JumpLedger | None = None
    diffusive: bool = True
    error: float | None = None
    noise: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise StructuralError("grid must be strictly increasing with at least two nodes")
        if values.shape[-1] != grid.size:
            raise StructuralError(f"values last axis {values.shape[-1]} != grid size {grid.size}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def n_paths(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]

    @property
    def terminal(self):
        return self.values[..., -1]

    def _matrix(self) -> np.ndarray:
        return np.atleast_2d(self.values)

    def jump_increments(self) -> np.ndarray:
        """Sum of ledger jumps inside each cell, shape ``(n_paths, K)``."""
        out = np.zeros((self.n_paths, self.grid.size - 1))
        if self.ledger is not None and len(self.ledger):
            cell = np.searchsorted(self.grid, self.ledger.time, side="left") - 1
            keep = (cell >= 0) & (cell < self.grid.size - 1)
            np.add.at(out, (self.ledger.path[keep], cell[keep]), self.ledger.size[keep])
        return out

    def continuous_increments(self) -> np.ndarray:
        return np.diff(self._matrix(), axis=1) - self.jump_increments()


def _shape_like(template: GridProcess, other: GridProcess, values: np.ndarray) -> np.ndarray:
    if template.values.ndim == 1 and other.values.ndim == 1:
        return values[0]
    return values


def _check_grids(a: GridProcess, b: GridProcess) -> None:
    if a.grid.shape != b.grid.shape or not np.array_equal(a.grid, b.grid):
        raise StructuralError("processes live on different grids")
    if a.n_paths != b.n_paths and 1 not in (a.n_paths, b.n_paths):
        raise StructuralError(f"path counts differ: {a.n_paths} vs {b.n_paths}")


def _cumulate(increments: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros((increments.shape[0], 1)), np.cumsum(increments, axis=1)], axis=1)


def _left_limits_at(integrand: GridProcess, path: np.ndarray, time: np.ndarray) -> np.ndarray:
    """Integrand just before each ``(path, time)``, including its own ledger jumps in the cell."""
    grid = integrand.grid
    cell = np.clip(np.searchsorted(grid, time, side="left") - 1, 0, grid.size - 2)
    mat = integrand._matrix()
    base = mat[np.where(mat.shape[0] == 1, 0, path), cell]
    led = integrand.ledger
    if led is None or not len(led):
        return base
    # events: own jumps (type 1) sorted before queries (type 2) strictly earlier in time;
    # cell-start markers (type 0) after own jumps at the same time.
    n_q = time.size
    e_path = np.concatenate([led.path, path, path])
    e_time = np.concatenate([led.time, time, grid[cell]])
    e_type = np.concatenate([np.zeros(len(led), np.int64),
                             np.full(n_q, 2, np.int64), np.ones(n_q, np.int64)])
    e_size = np.concatenate([led.size, np.zeros(2 * n_q)])
    # at equal times: queries first (a jump at the query time is not in the left limit),
    # then own jumps, then cell markers (a jump at the cell start belongs to the previous cell).
    rank = np.choose(e_type, [1, 2, 0])
    order = np.lexsort((rank, e_time, e_path))
    cum = np.cumsum(e_size[order])
    pos = np.empty_like(order)
    pos[order] = np.arange(order.size)
    q_pos = pos[len(led):len(led) + n_q]
    m_pos = pos[len(led) + n_q:]
    return base + cum[q_pos] - cum[m_pos]


def stochastic_integral(integrand: GridProcess, integrator: GridProcess) -> GridProcess:
    """Left-point Ito integral ``int K dX`` with exact treatment of jumps.

    Continuous increments are weighted by the integrand value on the cell;
    each ledger jump of the integrator is weighted by the integrand's left
    limit at the jump time.
    """
    _check_grids(integrand, integrator)
    k_mat = integrand._matrix()[:, :-1]
    inc = k_mat * integrator.continuous_increments()
    led = integrator.ledger
    if led is not None and len(led):
        cell = np.searchsorted(integrator.grid, led.time, side="left") - 1
        keep = (cell >= 0) & (cell < integrator.grid.size - 1)
        weights = _left_limits_at(integrand, led.path[keep], led.time[keep])
        jumps = np.zeros_like(inc)
        np.add.at(jumps, (led.path[keep], cell[keep]), weights * led.size[keep])
        inc = inc + jumps
        new_led = JumpLedger(led.path[keep], led.time[keep], weights * led.size[keep], led.mark[keep])
    else:
        new_led = None
    values = _cumulate(inc)
    return GridProcess(integrator.grid, _shape_like(integrand, integrator, values), new_led,
                       integrator.diffusive)


def _common_jumps(a: JumpLedger | None, b: JumpLedger | None):
    if a is None or b is None or not len(a) or not len(b):
        return np.zeros(0, np.int64), np.zeros(0), np.zeros(0)
    ka = np.rec.fromarrays([a.path, a.time])
    kb = np.rec.fromarrays([b.path, b.time])
    _, ia, ib = np.intersect1d(ka, kb, assume_unique=False, return_indices=True)
    return a.path[ia], a.time[ia], a.size[ia] * b.size[ib]


def _qv_parts(x: GridProcess, y: GridProcess):
    cont = x.continuous_increments() * y.continuous_increments()
    path, time, prod = _common_jumps(x.ledger, y.ledger)
    jumps = np.zeros_like(cont)
    cell = np.searchsorted(x.grid, time, side="left") - 1
    keep = (cell >= 0) & (cell < x.grid.size - 1)
    np.add.at(jumps, (path[keep], cell[keep]), prod[keep])
    return cont, jumps


def quadratic_covariation(x: GridProcess, y: GridProcess) -> GridProcess:
    """``[X, Y]`` on the grid.

    The jump part is exact: products of ledger jumps at identical times.  The
    continuous part is the realised covariation of continuous increments when
    both processes are diffusive; otherwise it vanishes in the limit and is
    reported in ``noise`` instead of ``values``.  ``error`` is the root mean
    square change of the terminal value when the grid is coarsened by two.
    """
    _check_grids(x, y)
    cont, jumps = _qv_parts(x, y)
    both = x.diffusive and y.diffusive
    values = _cumulate(jumps + cont) if both else _cumulate(jumps)
    noise = None if both else _cumulate(cont)
    error = None
    if both and (x.grid.size - 1) % 2 == 0:
        coarse = x.grid[::2]
        cx = x._matrix()[:, ::2]
        cy = y._matrix()[:, ::2]
        xc = GridProcess(coarse, cx, x.ledger, x.diffusive)
        yc = GridProcess(coarse, cy, y.ledger, y.diffusive)
        c_cont, c_jumps = _qv_parts(xc, yc)
        coarse_terminal = (c_cont + c_jumps).sum(axis=1)
        error = float(np.sqrt(np.mean((values[:, -1] - coarse_terminal) ** 2)))
    led = None
    path, time, prod = _common_jumps(x.ledger, y.ledger)
    if prod.size:
        order = np.lexsort((time, path))
        led = JumpLedger(path[order], time[order], prod[order], np.full(prod.size, -1, np.int64))
    return GridProcess(x.grid, _shape_like(x, y, values), led, False, error,
                       None if noise is None else _shape_like(x, y, noise))


def lebesgue_stieltjes_integral(integrand: GridProcess, integrator: GridProcess,
                                tol: float = 1e-12) -> GridProcess:
    """Pathwise ``int K dB`` against a non-decreasing ``B``.

    Raises
    ------
    ModelError
        If ``B`` decreases anywhere on the grid.
    """
    _check_grids(integrand, integrator)
    inc = np.diff(integrator._matrix(), axis=1)
    scale = max(1.0, float(np.max(np.abs(integrator.values), initial=0.0)))
    if np.any(inc < -tol * scale):
        raise ModelError("integrator is not monotone non-decreasing")
    values = _cumulate(integrand._matrix()[:, :-1] * inc)
    return GridProcess(integrator.grid, _shape_like(integrand, integrator, values), None, False)


def with_values(process: GridProcess, values: np.ndarray) -> GridProcess:
    """Copy of ``process`` with new values (same grid and ledger)."""
    return replace(process, values=values, error=None, noise=None)
