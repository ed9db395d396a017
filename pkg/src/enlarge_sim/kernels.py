"""Hot loops with a numba implementation and a pure-numpy fallback.

The public functions dispatch on :data:`enlarge_sim._accel.USE_NUMBA`.  Both
implementations are importable as ``<name>_numba`` and ``<name>_numpy`` so
tests and benchmarks can compare them directly.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

#: numerator scale for the exact ternary digit scan
_SHIFT = 62
_ONE = 1 << _SHIFT
_MASK = _ONE - 1


# --------------------------------------------------------------------------
# Cantor function and distance to the Cantor set
# --------------------------------------------------------------------------

def cantor_numpy(x: np.ndarray, depth: int) -> np.ndarray:
    """Cantor function on ``[0, 1]`` by a ``depth``-digit ternary scan."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape)
    num = (np.clip(x, 0.0, 1.0) * float(_ONE)).astype(np.uint64)
    num = np.minimum(num, np.uint64(_MASK))
    active = (x > 0.0) & (x < 1.0)
    weight = 1.0
    for _ in range(depth):
        if not active.any():
            break
        weight *= 0.5
        t = num * np.uint64(3)
        digit = t >> np.uint64(_SHIFT)
        num = t & np.uint64(_MASK)
        out += np.where(active & (digit >= 1), weight, 0.0)
        active &= digit != 1
    out[x >= 1.0] = 1.0
    return out


@njit
def _cantor_scalar(x, depth):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    num = np.uint64(x * 4611686018427387904.0)
    mask = np.uint64(4611686018427387903)
    if num > mask:
        num = mask
    three = np.uint64(3)
    shift = np.uint64(62)
    value = 0.0
    weight = 1.0
    for _ in range(depth):
        weight *= 0.5
        t = num * three
        digit = t >> shift
        num = t & mask
        if digit == 1:
            return value + weight
        if digit == 2:
            value += weight
    return value


@njit
def _cantor_loop(x, depth):
    out = np.empty(x.size)
    for i in range(x.size):
        out[i] = _cantor_scalar(x[i], depth)
    return out


def cantor_numba(x: np.ndarray, depth: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return _cantor_loop(np.ascontiguousarray(x).ravel(), depth).reshape(x.shape)


def cantor_distance_numpy(x: np.ndarray, depth: int) -> np.ndarray:
    """Distance from ``x`` to the Cantor set, resolved to ``3**-depth``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape)
    num = (np.clip(x, 0.0, 1.0) * float(_ONE)).astype(np.uint64)
    num = np.minimum(num, np.uint64(_MASK))
    active = (x > 0.0) & (x < 1.0)
    scale = 1.0
    for _ in range(depth):
        if not active.any():
            break
        scale /= 3.0
        t = num * np.uint64(3)
        digit = t >> np.uint64(_SHIFT)
        num = t & np.uint64(_MASK)
        hit = active & (digit == 1)
        r = num.astype(np.float64) / float(_ONE)
        out = np.where(hit, scale * np.minimum(r, 1.0 - r), out)
        active &= ~hit
    out = np.where(x < 0.0, -x, out)
    out = np.where(x > 1.0, x - 1.0, out)
    return out


@njit
def _cantor_distance_loop(x, depth):
    out = np.zeros(x.size)
    mask = np.uint64(4611686018427387903)
    three = np.uint64(3)
    shift = np.uint64(62)
    for i in range(x.size):
        xi = x[i]
        if xi < 0.0:
            out[i] = -xi
            continue
        if xi == 0.0:
            continue
        if xi >= 1.0:
            out[i] = xi - 1.0
            continue
        num = np.uint64(xi * 4611686018427387904.0)
        if num > mask:
            num = mask
        scale = 1.0
        for _ in range(depth):
            scale /= 3.0
            t = num * three
            digit = t >> shift
            num = t & mask
            if digit == 1:
                r = num / 4611686018427387904.0
                out[i] = scale * min(r, 1.0 - r)
                break
    return out


def cantor_distance_numba(x: np.ndarray, depth: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return _cantor_distance_loop(np.ascontiguousarray(x).ravel(), depth).reshape(x.shape)


# --------------------------------------------------------------------------
# First passage of a cumulative hazard above exponential thresholds
# --------------------------------------------------------------------------

def _singular_numpy(t, kappas, smaxs, depth):
    total = np.zeros(np.shape(t))
    for kappa, smax in zip(kappas, smaxs):
        total = total + kappa * cantor_numpy(np.minimum(np.asarray(t) / smax, 1.0), depth)
    return total


def first_passage_numpy(grid, ac_nodes, total_nodes, theta, kappas, smaxs, depth, tol):
    """First time the cumulative hazard reaches ``theta``, per path.

    Parameters
    ----------
    grid : (K+1,) array
        Grid nodes.
    ac_nodes : (P, K+1) array
        Absolutely continuous part of the hazard on the grid; linear between
        nodes.  ``P`` is either the number of paths or 1 (shared hazard).
    total_nodes : (P, K+1) array
        Full hazard (``ac_nodes`` plus singular components) on the grid.
    theta : (N,) array
        Thresholds.
    kappas, smaxs : (m,) arrays
        Singular components ``kappa * C(min(t / smax, 1))``.
    depth : int
        Cantor digit depth.
    tol : float
        Bisection width.

    Returns
    -------
    tau, gamma_tau : (N,) arrays
        ``tau = inf`` where the threshold is not reached on the grid; in that
        case ``gamma_tau`` is the terminal hazard.
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.size
    shared = total_nodes.shape[0] == 1
    n_nodes = grid.size
    if shared:
        j = np.searchsorted(total_nodes[0], theta, side="left")
    else:
        j = np.argmax(total_nodes >= theta[:, None], axis=1)
        j = np.where(total_nodes[:, -1] >= theta, j, n_nodes)
    rows = np.zeros(n, dtype=np.intp) if shared else np.arange(n)
    tau = np.full(n, np.inf)
    gamma_tau = total_nodes[rows, -1].astype(np.float64).copy()
    at_zero = j == 0
    tau[at_zero] = 0.0
    gamma_tau[at_zero] = total_nodes[rows[at_zero], 0]
    inside = (j > 0) & (j < n_nodes)
    if not inside.any():
        return tau, gamma_tau
    idx = np.nonzero(inside)[0]
    r = rows[idx]
    k = j[idx] - 1
    th = theta[idx]
    t0 = grid[k]
    t1 = grid[k + 1]
    a0 = ac_nodes[r, k]
    a1 = ac_nodes[r, k + 1]

    def gamma(t):
        return a0 + (t - t0) / (t1 - t0) * (a1 - a0) + _singular_numpy(t, kappas, smaxs, depth)

    lo, hi = t0.copy(), t1.copy()
    for _ in range(200):
        open_ = hi - lo > tol
        if not open_.any():
            break
        mid = 0.5 * (lo + hi)
        up = gamma(mid) >= th
        hi = np.where(open_ & up, mid, hi)
        lo = np.where(open_ & ~up, mid, lo)
    tau[idx] = hi
    gamma_tau[idx] = gamma(hi)
    return tau, gamma_tau


@njit
def _first_passage_loop(grid, ac_nodes, total_nodes, theta, kappas, smaxs, depth, tol):
    n = theta.size
    n_nodes = grid.size
    shared = total_nodes.shape[0] == 1
    tau = np.empty(n)
    gamma_tau = np.empty(n)
    for i in range(n):
        r = 0 if shared else i
        th = theta[i]
        row = total_nodes[r]
        lo_j = 0
        hi_j = n_nodes
        while lo_j < hi_j:
            mid_j = (lo_j + hi_j) // 2
            if row[mid_j] < th:
                lo_j = mid_j + 1
            else:
                hi_j = mid_j
        j = lo_j
        if j == n_nodes:
            tau[i] = np.inf
            gamma_tau[i] = row[n_nodes - 1]
            continue
        if j == 0:
            tau[i] = 0.0
            gamma_tau[i] = row[0]
            continue
        k = j - 1
        t0 = grid[k]
        t1 = grid[k + 1]
        a0 = ac_nodes[r, k]
        a1 = ac_nodes[r, k + 1]
        lo = t0
        hi = t1
        for _ in range(200):
            if hi - lo <= tol:
                break
            mid = 0.5 * (lo + hi)
            g = a0 + (mid - t0) / (t1 - t0) * (a1 - a0)
            for c in range(kappas.size):
                g += kappas[c] * _cantor_scalar(min(mid / smaxs[c], 1.0), depth)
            if g >= th:
                hi = mid
            else:
                lo = mid
        g = a0 + (hi - t0) / (t1 - t0) * (a1 - a0)
        for c in range(kappas.size):
            g += kappas[c] * _cantor_scalar(min(hi / smaxs[c], 1.0), depth)
        tau[i] = hi
        gamma_tau[i] = g
    return tau, gamma_tau


def first_passage_numba(grid, ac_nodes, total_nodes, theta, kappas, smaxs, depth, tol):
    return _first_passage_loop(
        np.ascontiguousarray(grid, dtype=np.float64),
        np.ascontiguousarray(ac_nodes, dtype=np.float64),
        np.ascontiguousarray(total_nodes, dtype=np.float64),
        np.ascontiguousarray(theta, dtype=np.float64),
        np.ascontiguousarray(kappas, dtype=np.float64),
        np.ascontiguousarray(smaxs, dtype=np.float64),
        int(depth),
        float(tol),
    )


# --------------------------------------------------------------------------
# Cumulative sums of jump marks on the grid
# --------------------------------------------------------------------------

def jump_cumsum_numpy(n_paths, grid, path, time, weight):
    """``out[i, k] = sum of weight over jumps of path i with time <= grid[k]``."""
    out = np.zeros((n_paths, grid.size))
    node = np.searchsorted(grid, time, side="left")
    keep = node < grid.size
    np.add.at(out, (path[keep], node[keep]), weight[keep])
    return np.cumsum(out, axis=1)


@njit
def _jump_cumsum_loop(n_paths, grid, path, time, weight):
    n_nodes = grid.size
    out = np.zeros((n_paths, n_nodes))
    for e in range(time.size):
        lo = 0
        hi = n_nodes
        while lo < hi:
            mid = (lo + hi) // 2
            if grid[mid] < time[e]:
                lo = mid + 1
            else:
                hi = mid
        if lo < n_nodes:
            out[path[e], lo] += weight[e]
    for i in range(n_paths):
        for k in range(1, n_nodes):
            out[i, k] += out[i, k - 1]
    return out


def jump_cumsum_numba(n_paths, grid, path, time, weight):
    return _jump_cumsum_loop(
        int(n_paths),
        np.ascontiguousarray(grid, dtype=np.float64),
        np.ascontiguousarray(path, dtype=np.int64),
        np.ascontiguousarray(time, dtype=np.float64),
        np.ascontiguousarray(weight, dtype=np.float64),
    )


if USE_NUMBA:
    cantor = cantor_numba
    cantor_distance = cantor_distance_numba
    first_passage = first_passage_numba
    jump_cumsum = jump_cumsum_numba
else:
    cantor = cantor_numpy
    cantor_distance = cantor_distance_numpy
    first_passage = first_passage_numpy
    jump_cumsum = jump_cumsum_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
