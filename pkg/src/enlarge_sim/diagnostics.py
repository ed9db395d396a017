"""Statistical checks of the enlarged filtration.

* martingale increment tests ``E[phi(t) (X_{t'} - X_t)] = 0`` for bounded
  test functions ``phi`` of the state at ``t``;
* pathwise identities of the Azema supermartingale and the compensator, and a
  nested Monte Carlo estimate of ``P[tau > t | F_t]``;
* bracket, orthogonality and co-jump audits of the family ``{W, X^f, M}``;
* the multiplicity experiments (re-exported from :mod:`.multiplicity`).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels, rng
from .errors import ConfigurationError, DomainError, StatisticalPowerError
from .levy_sim import LevyModel, MIN_TEST_PATHS, characteristic_exponent, simulate_path
from .multiplicity import (MultiplicityReport, PanelRow, SingularityReport, TimeChangeReport,
                           multiplicity_experiment, time_change_example)
from .random_time import TAU_TOL, HazardSpec, ScenarioBatch, stochastic_exponential_of_minus_M
from .representation import OrthonormalBasis

__all__ = [
    "TEST_FUNCTIONS", "MartingaleTestReport", "martingale_increment_test", "process_at",
    "IdentityReport", "enlargement_identities", "AzemaReport", "azema_crosscheck",
    "BracketReport", "bracket_check", "OrthogonalityReport", "orthogonality_check",
    "CoJumpAudit", "co_jump_audit", "PostDefaultLevyReport", "post_default_levy_check",
    "MultiplicityReport", "PanelRow", "SingularityReport", "TimeChangeReport",
    "multiplicity_experiment", "time_change_example",
]

#: bounded test functions of ``(t, L_t, H_t, A_t)``
TEST_FUNCTIONS: Mapping[str, Callable] = {
    "1": lambda t, L, H, A: np.ones_like(L),
    "cos(L)": lambda t, L, H, A: np.cos(L),
    "sin(L)": lambda t, L, H, A: np.sin(L),
    "tanh(L)": lambda t, L, H, A: np.tanh(L),
    "1-H": lambda t, L, H, A: 1.0 - H,
    "A": lambda t, L, H, A: A,
    "tanh(L)*(1-H)": lambda t, L, H, A: np.tanh(L) * (1.0 - H),
}
DEFAULT_TEST_FUNCTIONS = ("1", "cos(L)", "sin(L)", "tanh(L)", "1-H", "A")

_Z_PROCESS = re.compile(r"^(Re|Im)Z\[([0-9eE.+-]+)\]$")


def _z_scores(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and ``mean / SE`` along axis 0; a zero sample with zero spread scores 0."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mean / np.where(se > 0, se, 1.0), np.where(np.abs(mean) > 1e-14, np.inf, 0.0))
    return mean, z


def process_at(scenarios: ScenarioBatch, name: str, nodes, basis: OrthonormalBasis | None = None) -> np.ndarray:
    """Values of a named process at grid ``nodes``, shape ``(n_paths, len(nodes))``.

    Names: ``M``, ``H`` (not compensated), ``W``, ``X<i>`` (compensated jump
    martingale of basis function ``i``), ``ReZ[u]`` and ``ImZ[u]`` (parts of
    ``exp(i u L_t - t psi(u))``) and ``constant``.
    """
    nodes = np.atleast_1d(np.asarray(nodes))
    batch = scenarios.batch
    t = batch.grid[nodes]
    if name == "M":
        return scenarios.m_at(nodes)
    if name == "H":
        return scenarios.h_at(nodes)
    if name == "W":
        return batch.w[:, nodes]
    if name == "constant":
        return np.ones((scenarios.n_paths, nodes.size))
    if re.fullmatch(r"X\d+", name):
        model = batch.model
        basis = OrthonormalBasis.canonical(model) if basis is None else basis
        i = int(name[1:]) - 1
        if not 0 <= i < basis.dim:
            raise ConfigurationError(f"{name} is outside the basis of dimension {basis.dim}")
        col = [int(np.nonzero(basis.sizes == x)[0][0]) for x in model.sizes]
        weights = basis.values[i, col]
        return batch.jump_sums(weights, nodes) - basis.compensators[i] * t[None, :]
    m = _Z_PROCESS.match(name)
    if m:
        u = float(m.group(2))
        psi = characteristic_exponent(batch.model, u)
        z = np.exp(1j * u * batch.l_at(nodes) - t[None, :] * psi)
        return z.real if m.group(1) == "Re" else z.imag
    raise ConfigurationError(f"unknown process {name!r}")


@dataclass(frozen=True)
class MartingaleTestReport:
    """z-scores of ``E[phi(t_i) (X_{t_{i+1}} - X_{t_i})]`` per interval and test function.

    ``z[i, j]`` belongs to interval ``(times[i], times[i+1]]`` and function
    ``functions[j]``.  With many cells a few ``|z|`` near the threshold are
    expected by chance (no multiplicity correction is applied).
    """

    process: str
    times: np.ndarray
    functions: tuple
    mean: np.ndarray
    z: np.ndarray
    n_paths: int
    seed: int | None
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.threshold

    def rows(self):
        """``(process, t0, t1, function, mean, z)`` per cell."""
        for i in range(self.times.size - 1):
            for j, f in enumerate(self.functions):
                yield (self.process, self.times[i], self.times[i + 1], f, self.mean[i, j], self.z[i, j])


def martingale_increment_test(process: str, scenarios: ScenarioBatch, times: Sequence[float],
                              test_functions: Sequence[str] = DEFAULT_TEST_FUNCTIONS,
                              basis: OrthonormalBasis | None = None, threshold: float = 4.0,
                              min_paths: int = MIN_TEST_PATHS) -> MartingaleTestReport:
    """Test the increments of ``process`` between consecutive ``times`` against 0.

    ``process`` is a name understood by :func:`process_at`.  The test
    functions see ``L``, ``H`` and ``A`` at the left end of each interval, so
    they are adapted to the enlarged filtration.

    Raises
    ------
    StatisticalPowerError
        If the batch has fewer than ``min_paths`` scenarios.
    """
    if scenarios.n_paths < min_paths:
        raise StatisticalPowerError(f"martingale test needs at least {min_paths} paths, got {scenarios.n_paths}")
    for f in test_functions:
        if f not in TEST_FUNCTIONS:
            raise ConfigurationError(f"unknown test function {f!r}")
    times = np.asarray(times, dtype=np.float64)
    if times.size < 2 or np.any(np.diff(times) <= 0):
        raise DomainError("need at least two increasing test times")
    nodes = scenarios.batch.node_index(times)
    x = process_at(scenarios, process, nodes, basis)
    L = scenarios.batch.l_at(nodes)
    H = scenarios.h_at(nodes)
    A = scenarios.a_at(nodes)
    dx = np.diff(x, axis=1)
    samples = np.empty((scenarios.n_paths, times.size - 1, len(test_functions)))
    for j, f in enumerate(test_functions):
        phi = TEST_FUNCTIONS[f](times[None, :-1], L[:, :-1], H[:, :-1], A[:, :-1])
        samples[:, :, j] = phi * dx
    mean, z = _z_scores(samples)
    return MartingaleTestReport(process, times, tuple(test_functions), mean, z, scenarios.n_paths,
                                scenarios.batch.root_seed, threshold)


# --------------------------------------------------------------------------
# pathwise identities and the Azema supermartingale
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityReport:
    """Largest relative errors of the pathwise identities over all scenarios and nodes.

    ``errors`` maps ``A=exp(-Gamma)``, ``Lambda=-log A(tau^t)``,
    ``M=H-Lambda`` and ``Y=E(-M)`` to their maxima; ``A_decreasing`` and
    ``A_positive`` are the structural properties of the Azema supermartingale.
    """

    errors: Mapping[str, float]
    a_decreasing: bool
    a_positive: bool
    tol: float = 1e-10

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values()) and self.a_decreasing and self.a_positive


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)), initial=0.0))


def _gamma_at_tau(scenarios: ScenarioBatch, grid: np.ndarray, total: np.ndarray) -> np.ndarray:
    """``Gamma_{tau ^ T}`` from the hazard specification at the stored random times."""
    spec = scenarios.spec
    tau = np.minimum(scenarios.tau, grid[-1])
    ac = total - spec.singular_part(grid)[None, :]
    if ac.shape[0] == 1:
        ac_tau = np.interp(tau, grid, ac[0])
    else:
        # path-dependent rates are integrated by the trapezoid rule, so linear interpolation is exact
        cell = np.clip(np.searchsorted(grid, tau, side="right") - 1, 0, grid.size - 2)
        rows = np.arange(tau.size)
        w = (tau - grid[cell]) / (grid[cell + 1] - grid[cell])
        ac_tau = (1 - w) * ac[rows, cell] + w * ac[rows, cell + 1]
    return ac_tau + spec.singular_part(tau)


def enlargement_identities(scenarios: ScenarioBatch, tol: float = 1e-10, chunk: int = 8192) -> IdentityReport:
    """Check ``A = exp(-Gamma)``, ``Lambda = -log A_{tau ^ t}``, ``M = H - Lambda`` and ``Y = A^{-1} 1{t < tau}``.

    ``Gamma`` is re-evaluated from the hazard specification, ``A_{tau ^ t}``
    from the hazard at the stored random time and ``Y`` through the
    Doleans-Dade exponential of ``-M`` built from the jump ledger, so each
    side is computed independently of the stored processes.  Paths are
    processed ``chunk`` at a time to bound memory.
    """
    errors: dict = {}
    decreasing = positive = True
    for lo in range(0, scenarios.n_paths, chunk):
        part = _identity_errors(scenarios.subset(lo, min(lo + chunk, scenarios.n_paths)))
        for key, e in part[0].items():
            errors[key] = max(errors.get(key, 0.0), e)
        decreasing &= part[1]
        positive &= part[2]
    return IdentityReport(errors, decreasing, positive, tol)


def _identity_errors(scenarios: ScenarioBatch):
    spec = scenarios.spec
    grid = scenarios.grid
    nodes = np.arange(grid.size)
    l_nodes = scenarios.batch.l_values if spec.path_dependent else None
    _, total = spec.nodes(grid, l_nodes)
    a = scenarios.a_at(nodes)
    errors = {"A=exp(-Gamma)": _rel(a, np.broadcast_to(np.exp(-total), a.shape))}
    alive = grid[None, :] < scenarios.tau[:, None]
    gamma_stop = np.where(alive, np.broadcast_to(total, a.shape), _gamma_at_tau(scenarios, grid, total)[:, None])
    lam = scenarios.lambda_at(nodes)
    errors["Lambda=-log A(tau^t)"] = _rel(lam, -np.log(np.exp(-gamma_stop)))
    h = scenarios.h_at(nodes)
    errors["M=H-Lambda"] = _rel(scenarios.m_at(nodes), h - lam)
    y = stochastic_exponential_of_minus_M(scenarios)
    errors["Y=1{t<tau}/A"] = _rel(y, np.where(alive, 1.0 / a, 0.0))
    return errors, bool(np.all(np.diff(a, axis=1) <= 0)), bool(np.all(a > 0))


@dataclass(frozen=True)
class AzemaReport:
    """Nested Monte Carlo estimate of ``P[tau > t | F_t]`` against ``exp(-Gamma_t)``.

    ``estimate``, ``closed_form`` and ``z`` have shape ``(n_outer, len(times))``;
    the standard error is binomial under ``P = exp(-Gamma_t)``.
    """

    times: np.ndarray
    estimate: np.ndarray
    closed_form: np.ndarray
    z: np.ndarray
    n_outer: int
    n_inner: int
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.threshold

    def rows(self):
        for i in range(self.n_outer):
            for j, t in enumerate(self.times):
                yield (i, t, self.estimate[i, j], self.closed_form[i, j], self.z[i, j])


def azema_crosscheck(spec: HazardSpec, model: LevyModel, n_outer: int = 20, n_inner: int = 10_000,
                     horizon: float = 1.0, n_steps: int = 1024, times: Sequence[float] = (0.0, 0.25, 0.5, 1.0),
                     root_seed: int = 0, threshold: float = 4.0) -> AzemaReport:
    """Estimate ``P[tau > t | path]`` with ``n_inner`` thresholds per reference path.

    Outer path ``i`` uses the ``PATHS`` stream and its thresholds the
    ``INNER`` stream, both at index ``i``.  Each threshold goes through the
    same first-passage search as the scenarios themselves.
    """
    if n_outer < 1 or n_inner < 2:
        raise ConfigurationError("need n_outer >= 1 and n_inner >= 2")
    times = np.asarray(times, dtype=np.float64)
    est = np.empty((n_outer, times.size))
    closed = np.empty((n_outer, times.size))
    kappas, smaxs = spec._singular_arrays()
    for i in range(n_outer):
        path = simulate_path(model, horizon, n_steps, rng.derive_seed(root_seed, rng.PATHS, i))
        idx = np.searchsorted(path.grid, times)
        if np.any(np.abs(path.grid[np.minimum(idx, n_steps)] - times) > 1e-12):
            raise DomainError(f"test times {times} must be grid nodes")
        ac, total = spec.nodes(path.grid, path.l_values[None, :] if spec.path_dependent else None)
        theta = rng.generator(rng.derive_seed(root_seed, rng.INNER, i)).standard_exponential(n_inner)
        tau, _ = kernels.first_passage(path.grid, ac, total, theta, kappas, smaxs, spec.cantor_depth, TAU_TOL)
        est[i] = (tau[:, None] > times[None, :]).mean(axis=0)
        closed[i] = np.exp(-total[0, idx])
    se = np.sqrt(closed * (1.0 - closed) / n_inner)
    diff = est - closed
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(np.abs(diff) > 0, np.inf, 0.0))
    return AzemaReport(times, est, closed, z, n_outer, n_inner, threshold)


# --------------------------------------------------------------------------
# brackets, orthogonality, avoidance
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BracketReport:
    """``[M, M]_T = H_T`` per path and ``E[M_T^2] = E[Lambda_T]`` in mean."""

    max_abs_qv_error: float
    mean_m2: float
    mean_lambda: float
    z: float
    threshold: float = 4.0

    @property
    def passed(self) -> bool:
        return self.max_abs_qv_error == 0.0 and abs(self.z) <= self.threshold


def bracket_check(scenarios: ScenarioBatch, threshold: float = 4.0, chunk: int = 8192) -> BracketReport:
    """Exact optional bracket of ``M`` from its ledger and the mean identity of its predictable bracket."""
    from .stoch_calc import GridProcess, quadratic_covariation

    K = scenarios.grid.size - 1
    err = 0.0
    for lo in range(0, scenarios.n_paths, chunk):
        part = scenarios.subset(lo, min(lo + chunk, scenarios.n_paths))
        # M is continuous between defaults: its grid increments only feed the noise term
        m = GridProcess(part.grid, part.m_at(np.arange(K + 1)), part.m_ledger, diffusive=False)
        qv = quadratic_covariation(m, m)
        err = max(err, float(np.max(np.abs(qv.values[:, -1] - part.h_at([K])[:, 0]))))
    m_t = scenarios.m_at([K])[:, 0]
    lam_t = scenarios.lambda_at([K])[:, 0]
    d = m_t ** 2 - lam_t
    _, z = _z_scores(d[:, None])
    return BracketReport(err, float(np.mean(m_t ** 2)), float(np.mean(lam_t)), float(z[0]), threshold)


@dataclass(frozen=True)
class OrthogonalityReport:
    """Means of pairwise terminal products of family members with their z-scores."""

    pairs: tuple
    means: np.ndarray
    z: np.ndarray
    n_paths: int
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z), initial=0.0))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.threshold

    def rows(self):
        for (a, b), m, z in zip(self.pairs, self.means, self.z):
            yield (a, b, m, z)


def orthogonality_check(scenarios: ScenarioBatch, basis: OrthonormalBasis | None = None,
                        threshold: float = 4.0, min_paths: int = MIN_TEST_PATHS) -> OrthogonalityReport:
    """``E[P_T Q_T] = 0`` for distinct members ``P, Q`` of ``{W, X^f, M}``."""
    if scenarios.n_paths < min_paths:
        raise StatisticalPowerError(f"orthogonality check needs at least {min_paths} paths, got {scenarios.n_paths}")
    model = scenarios.batch.model
    K = scenarios.grid.size - 1
    names = []
    if model.sigma2 > 0:
        names.append("W")
    if model.nu:
        dim = (OrthonormalBasis.canonical(model) if basis is None else basis).dim
        names.extend(f"X{i + 1}" for i in range(dim))
    names.append("M")
    terminal = {n: process_at(scenarios, n, [K], basis)[:, 0] for n in names}
    pairs = tuple((a, b) for i, a in enumerate(names) for b in names[i + 1:])
    if not pairs:
        return OrthogonalityReport((), np.zeros(0), np.zeros(0), scenarios.n_paths, threshold)
    prods = np.stack([terminal[a] * terminal[b] for a, b in pairs], axis=1)
    mean, z = _z_scores(prods)
    return OrthogonalityReport(pairs, mean, z, scenarios.n_paths, threshold)


@dataclass(frozen=True)
class CoJumpAudit:
    """Defaults that coincide with a jump of ``L`` on the same path (should be none)."""

    n_defaults: int
    n_jumps: int
    co_jumps: int
    min_distance: float

    @property
    def passed(self) -> bool:
        return self.co_jumps == 0


def co_jump_audit(scenarios: ScenarioBatch) -> CoJumpAudit:
    """Count exact coincidences of ``tau`` with jump times of ``L`` and the closest approach."""
    led = scenarios.batch.ledger
    dflt = np.nonzero(scenarios.defaulted)[0]
    if dflt.size == 0 or len(led) == 0:
        return CoJumpAudit(int(dflt.size), len(led), 0, float("inf"))
    on = scenarios.defaulted[led.path]
    gaps = np.abs(led.time[on] - scenarios.tau[led.path[on]])
    return CoJumpAudit(int(dflt.size), len(led), int(np.count_nonzero(gaps == 0.0)),
                       float(gaps.min(initial=np.inf)))


@dataclass(frozen=True)
class PostDefaultLevyReport:
    """``E[exp(i u (L_T - L_t)) | tau <= t]`` against ``exp((T - t) psi(u))``."""

    u: np.ndarray
    t: float
    n_conditioned: int
    empirical: np.ndarray
    theoretical: np.ndarray
    z_real: np.ndarray
    z_imag: np.ndarray
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.z_real)), np.max(np.abs(self.z_imag))))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.threshold


def post_default_levy_check(scenarios: ScenarioBatch, u: Sequence[float], t: float,
                            threshold: float = 4.0, min_paths: int = 1000) -> PostDefaultLevyReport:
    """Increments of ``L`` after ``t`` on scenarios that defaulted by ``t``.

    Conditioning on the enlarged information must leave the law of future
    increments unchanged.
    """
    batch = scenarios.batch
    K = batch.grid.size - 1
    k = int(batch.node_index([t])[0])
    sel = scenarios.tau <= batch.grid[k]
    n = int(sel.sum())
    if n < min_paths:
        raise StatisticalPowerError(f"only {n} scenarios defaulted by t={t}; need {min_paths}")
    lv = batch.l_at([k, K])[sel]
    inc = lv[:, 1] - lv[:, 0]
    u = np.asarray(u, dtype=np.float64)
    phase = u[None, :] * inc[:, None]
    c, s = np.cos(phase), np.sin(phase)
    th = np.exp((batch.grid[K] - batch.grid[k]) * characteristic_exponent(batch.model, u))
    _, zr = _z_scores(c - th.real)
    _, zi = _z_scores(s - th.imag)
    return PostDefaultLevyReport(u, float(t), n, c.mean(axis=0) + 1j * s.mean(axis=0), th, zr, zi, threshold)
