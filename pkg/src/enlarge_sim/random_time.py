"""Cox random times driven by a continuous cumulative hazard.

The hazard ``Gamma`` is a sum of components:

* ``AbsolutelyContinuous``: ``int_0^t lambda(s, L_s) ds``, computed by the
  trapezoidal rule on the grid and interpolated linearly between nodes;
* ``SingularContinuous``: ``kappa * C(min(t / s_max, 1))`` with ``C`` the
  Cantor function.

``tau = inf{t : Gamma_t >= Theta}`` with ``Theta ~ Exp(1)`` independent of
the path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels, rng
from .errors import DomainError, ModelError
from .levy_sim import JumpLedger, PathBatch, PathBundle

#: ternary digits used by the Cantor function
CANTOR_DEPTH = 48
#: width of the bisection bracket for tau
TAU_TOL = 1e-12

RateFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


def cantor_function(x, depth: int = CANTOR_DEPTH):
    """Cantor function ``C`` on ``[0, 1]``, clamped outside.

    Evaluated by an exact ternary digit scan; the truncation error is at most
    ``2**-depth``.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(arr)):
        raise DomainError("Cantor function is undefined at NaN")
    if not 1 <= depth <= 60:
        raise DomainError(f"depth must be in [1, 60], got {depth}")
    out = kernels.cantor(arr, depth)
    return float(out) if np.ndim(x) == 0 else out


def cantor_set_distance(x, depth: int = CANTOR_DEPTH):
    """Distance from ``x`` to the Cantor set (0 when within ``3**-depth``)."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(arr)):
        raise DomainError("distance is undefined at NaN")
    out = kernels.cantor_distance(arr, depth)
    return float(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class AbsolutelyContinuous:
    """Hazard rate ``lambda``: a non-negative constant or a function ``(t, L_t) -> rate``."""

    rate: float | RateFunction = 1.0
    name: str = "constant"

    def __post_init__(self):
        if not callable(self.rate):
            if not np.isfinite(self.rate) or self.rate < 0:
                raise ModelError(f"hazard rate must be finite and non-negative, got {self.rate}")

    @property
    def path_dependent(self) -> bool:
        return callable(self.rate)


@dataclass(frozen=True)
class SingularContinuous:
    """Cantor staircase hazard ``kappa * C(min(t / s_max, 1))``."""

    kappa: float = 1.0
    s_max: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ModelError(f"kappa must be positive, got {self.kappa}")
        if not (np.isfinite(self.s_max) and self.s_max > 0):
            raise ModelError(f"s_max must be positive, got {self.s_max}")


@dataclass(frozen=True)
class HazardSpec:
    """Cumulative hazard as a sum of absolutely continuous and singular parts."""

    components: tuple = (AbsolutelyContinuous(1.0),)
    cantor_depth: int = CANTOR_DEPTH

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ModelError("a hazard needs at least one component")
        for c in comps:
            if not isinstance(c, (AbsolutelyContinuous, SingularContinuous)):
                raise ModelError(f"unknown hazard component {c!r}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def constant(cls, rate: float) -> "HazardSpec":
        return cls((AbsolutelyContinuous(float(rate)),))

    @classmethod
    def staircase(cls, kappa: float, s_max: float = 1.0) -> "HazardSpec":
        return cls((SingularContinuous(float(kappa), float(s_max)),))

    @classmethod
    def mixed(cls, components: Sequence) -> "HazardSpec":
        return cls(tuple(components))

    @property
    def kind(self) -> str:
        ac = any(isinstance(c, AbsolutelyContinuous) for c in self.components)
        sc = any(isinstance(c, SingularContinuous) for c in self.components)
        if ac and sc:
            return "mixed"
        return "absolutely_continuous" if ac else "singular_continuous"

    @property
    def path_dependent(self) -> bool:
        return any(isinstance(c, AbsolutelyContinuous) and c.path_dependent for c in self.components)

    @property
    def singular(self) -> tuple[SingularContinuous, ...]:
        return tuple(c for c in self.components if isinstance(c, SingularContinuous))

    @property
    def absolutely_continuous(self) -> tuple[AbsolutelyContinuous, ...]:
        return tuple(c for c in self.components if isinstance(c, AbsolutelyContinuous))

    def _singular_arrays(self):
        s = self.singular
        return (np.array([c.kappa for c in s], dtype=np.float64),
                np.array([c.s_max for c in s], dtype=np.float64))

    def singular_part(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros(t.shape)
        for c in self.singular:
            out = out + c.kappa * kernels.cantor(np.minimum(t / c.s_max, 1.0), self.cantor_depth)
        return out

    def ac_nodes(self, grid: np.ndarray, l_nodes: np.ndarray | None = None) -> np.ndarray:
        """Absolutely continuous part on the grid, shape ``(P, K+1)``.

        ``P`` is 1 for deterministic rates and ``l_nodes.shape[0]`` otherwise.
        """
        grid = np.asarray(grid, dtype=np.float64)
        const = sum(float(c.rate) for c in self.absolutely_continuous if not c.path_dependent)
        out = (const * grid)[None, :]
        dyn = [c for c in self.absolutely_continuous if c.path_dependent]
        if dyn:
            if l_nodes is None:
                raise ModelError("path-dependent hazard needs the path values")
            l_nodes = np.atleast_2d(l_nodes)
            lam = np.zeros(l_nodes.shape)
            for c in dyn:
                lam = lam + np.asarray(c.rate(grid[None, :], l_nodes), dtype=np.float64)
            if np.any(~np.isfinite(lam)) or np.any(lam < 0):
                raise ModelError("hazard rate must be finite and non-negative along the path")
            steps = 0.5 * (lam[:, 1:] + lam[:, :-1]) * np.diff(grid)[None, :]
            dyn_nodes = np.concatenate([np.zeros((lam.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
            out = out + dyn_nodes
        return out

    def nodes(self, grid: np.ndarray, l_nodes: np.ndarray | None = None):
        """``(ac_nodes, total_nodes)`` on the grid."""
        ac = self.ac_nodes(grid, l_nodes)
        return ac, ac + self.singular_part(grid)[None, :]


def hazard_value(spec: HazardSpec, path: PathBundle, t):
    """Cumulative hazard ``Gamma_t`` along ``path`` at times ``t`` in ``[0, T]``."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > path.horizon * (1 + 1e-14)):
        raise DomainError("hazard is only defined on [0, horizon]")
    ac = spec.ac_nodes(path.grid, path.l_values[None, :] if spec.path_dependent else None)[0]
    out = np.interp(t_arr, path.grid, ac) + spec.singular_part(t_arr)
    return float(out) if np.ndim(t) == 0 else out


def _first_passage(spec: HazardSpec, grid, ac, total, theta):
    kappas, smaxs = spec._singular_arrays()
    return kernels.first_passage(grid, ac, total, theta, kappas, smaxs, spec.cantor_depth, TAU_TOL)


@dataclass
class EnlargedScenario:
    """A path together with its random time and the derived processes on the grid.

    ``tau`` equals ``horizon + 1`` when the random time does not occur in
    ``[0, horizon]``; ``defaulted`` tells the two cases apart.
    """

    path: PathBundle
    spec: HazardSpec
    theta: float
    tau: float
    defaulted: bool
    gamma_nodes: np.ndarray
    gamma_tau: float

    @property
    def grid(self) -> np.ndarray:
        return self.path.grid

    @property
    def h_values(self) -> np.ndarray:
        return (self.grid >= self.tau).astype(np.float64)

    @property
    def a_values(self) -> np.ndarray:
        return np.exp(-self.gamma_nodes)

    @property
    def lambda_values(self) -> np.ndarray:
        return np.where(self.grid < self.tau, self.gamma_nodes, self.gamma_tau)

    @property
    def m_values(self) -> np.ndarray:
        return self.h_values - self.lambda_values

    @property
    def y_values(self) -> np.ndarray:
        return np.where(self.grid < self.tau, np.exp(self.gamma_nodes), 0.0)

    @property
    def m_ledger(self) -> JumpLedger:
        if not self.defaulted:
            return JumpLedger.empty()
        return JumpLedger(np.zeros(1, np.int64), np.array([self.tau]), np.ones(1), np.full(1, -1, np.int64))


def draw_random_time(spec: HazardSpec, path: PathBundle, theta_seed: int) -> EnlargedScenario:
    """Draw ``Theta ~ Exp(1)`` from ``theta_seed`` and locate ``tau`` along ``path``."""
    theta = float(rng.generator(theta_seed).standard_exponential())
    ac, total = spec.nodes(path.grid, path.l_values[None, :] if spec.path_dependent else None)
    tau, gamma_tau = _first_passage(spec, path.grid, ac, total, np.array([theta]))
    defaulted = bool(np.isfinite(tau[0]))
    return EnlargedScenario(path, spec, theta, float(tau[0]) if defaulted else path.horizon + 1.0,
                            defaulted, total[0].copy(), float(gamma_tau[0]))


@dataclass
class ScenarioBatch:
    """Batch counterpart of :class:`EnlargedScenario`.

    ``gamma_nodes`` has shape ``(1, K+1)`` for deterministic hazards and
    ``(n_paths, K+1)`` for path-dependent ones.
    """

    batch: PathBatch
    spec: HazardSpec
    theta: np.ndarray
    tau: np.ndarray
    defaulted: np.ndarray
    gamma_nodes: np.ndarray
    gamma_tau: np.ndarray
    theta_seeds: np.ndarray = field(repr=False)

    @property
    def grid(self) -> np.ndarray:
        return self.batch.grid

    @property
    def n_paths(self) -> int:
        return self.batch.n_paths

    def gamma_at(self, nodes) -> np.ndarray:
        g = self.gamma_nodes[:, np.atleast_1d(nodes)]
        return np.broadcast_to(g, (self.n_paths, g.shape[1]))

    def h_at(self, nodes) -> np.ndarray:
        return (self.grid[np.atleast_1d(nodes)][None, :] >= self.tau[:, None]).astype(np.float64)

    def a_at(self, nodes) -> np.ndarray:
        return np.exp(-self.gamma_at(nodes))

    def lambda_at(self, nodes) -> np.ndarray:
        alive = self.grid[np.atleast_1d(nodes)][None, :] < self.tau[:, None]
        return np.where(alive, self.gamma_at(nodes), self.gamma_tau[:, None])

    def m_at(self, nodes) -> np.ndarray:
        return self.h_at(nodes) - self.lambda_at(nodes)

    def y_at(self, nodes) -> np.ndarray:
        alive = self.grid[np.atleast_1d(nodes)][None, :] < self.tau[:, None]
        return np.where(alive, np.exp(self.gamma_at(nodes)), 0.0)

    @property
    def m_ledger(self) -> JumpLedger:
        p = np.nonzero(self.defaulted)[0].astype(np.int64)
        return JumpLedger(p, self.tau[p], np.ones(p.size), np.full(p.size, -1, np.int64))

    def subset(self, lo: int, hi: int) -> "ScenarioBatch":
        """Scenarios ``lo..hi-1`` as a batch of their own."""
        g = self.gamma_nodes if self.gamma_nodes.shape[0] == 1 else self.gamma_nodes[lo:hi]
        return ScenarioBatch(self.batch.subset(lo, hi), self.spec, self.theta[lo:hi], self.tau[lo:hi],
                             self.defaulted[lo:hi], g, self.gamma_tau[lo:hi], self.theta_seeds[lo:hi])

    def scenario(self, i: int) -> EnlargedScenario:
        g = self.gamma_nodes[0 if self.gamma_nodes.shape[0] == 1 else i]
        return EnlargedScenario(self.batch.path(i), self.spec, float(self.theta[i]), float(self.tau[i]),
                                bool(self.defaulted[i]), g.copy(), float(self.gamma_tau[i]))


def draw_random_times(spec: HazardSpec, batch: PathBatch, root_seed: int | None = None) -> ScenarioBatch:
    """Random times for a whole batch.

    Path ``i`` uses ``theta_seed = derive_seed(root_seed, THETA, i)`` so that
    ``draw_random_time(spec, batch.path(i), theta_seed)`` reproduces row ``i``.
    """
    root = batch.root_seed if root_seed is None else int(root_seed)
    seeds = rng.derive_seeds(root, rng.THETA, 0, batch.n_paths)
    theta = np.array([rng.generator(int(s)).standard_exponential() for s in seeds])
    l_nodes = batch.l_values if spec.path_dependent else None
    ac, total = spec.nodes(batch.grid, l_nodes)
    del l_nodes
    tau, gamma_tau = _first_passage(spec, batch.grid, ac, total, theta)
    defaulted = np.isfinite(tau)
    tau = np.where(defaulted, tau, batch.horizon + 1.0)
    return ScenarioBatch(batch, spec, theta, tau, defaulted, total, gamma_tau, seeds)


def stochastic_exponential_of_minus_M(scenario: EnlargedScenario | ScenarioBatch) -> np.ndarray:
    """Doleans-Dade exponential of ``-M`` on the grid.

    Computed as ``exp(-M_t) * prod_{s <= t} (1 - dM_s) exp(dM_s)`` from the
    grid values of ``M`` and its jump ledger, independently of the closed
    form ``Y = exp(Gamma) 1_{t < tau}``.
    """
    if isinstance(scenario, ScenarioBatch):
        nodes = np.arange(scenario.grid.size)
        m = scenario.m_at(nodes)
        ledger = scenario.m_ledger
        n = scenario.n_paths
    else:
        m = scenario.m_values[None, :]
        ledger = scenario.m_ledger
        n = 1
    log_factor = np.zeros((n, scenario.grid.size))
    zero = np.zeros((n, scenario.grid.size), dtype=bool)
    if len(ledger):
        d = ledger.size
        node = np.searchsorted(scenario.grid, ledger.time, side="left")
        keep = node < scenario.grid.size
        one_minus = 1.0 - d
        kills = keep & (one_minus == 0.0)
        live = keep & ~kills
        np.add.at(log_factor, (ledger.path[live], node[live]), np.log(np.abs(one_minus[live])) + d[live])
        marks = np.zeros((n, scenario.grid.size))
        np.add.at(marks, (ledger.path[kills], node[kills]), 1.0)
        zero = np.cumsum(marks, axis=1) > 0
        log_factor = np.cumsum(log_factor, axis=1)
    out = np.where(zero, 0.0, np.exp(-m + log_factor))
    return out if isinstance(scenario, ScenarioBatch) else out[0]
