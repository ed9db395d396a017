"""Martingale families and representations of terminal variables.

Two routes to the integrands of a square-integrable terminal variable:

* :func:`regression_representation` projects it onto the family
  ``{W, X^f, M}`` (or any combination of members) by a backward sweep;
* :func:`explicit_representation` handles ``g(L_T) 1{tau > s}`` by
  representing ``g(L_T) exp(-Gamma_s)`` in the reference filtration and
  transporting the integrands with ``Y = E(-M)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import BatchCellSource, FitOutcome, FitRequest, RIDGE, backward_sweep, relative_residual
from .errors import DomainError, ModelError, StatisticalPowerError, StructuralError
from .features import BoundedFunction, FeatureSet, Payoff, hermite_features
from .levy_sim import JumpLedger, LevyModel
from .random_time import EnlargedScenario, ScenarioBatch
from .stoch_calc import GridProcess

#: minimum batch for regression representations
MIN_REGRESSION_PATHS = 10_000
#: width of the time buckets sharing integrand coefficients; per-cell fits of
#: the M block see too few defaults and overfit
REGRESSION_POOL = 2.0 ** -6


@dataclass(frozen=True)
class OrthonormalBasis:
    """Functions ``f_i`` on the atoms of ``nu``, orthonormal in ``L^2(nu)``.

    ``values[i, a]`` is ``f_i(x_a)``.  The canonical choice is
    ``f_i = 1_{x_i} / sqrt(nu_i)``.
    """

    sizes: np.ndarray
    rates: np.ndarray
    values: np.ndarray
    tol: float = 1e-12

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.float64)
        rates = np.asarray(self.rates, dtype=np.float64)
        values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if values.shape[1] != sizes.size or rates.size != sizes.size:
            raise StructuralError("basis values must have one column per atom")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "values", values)
        err = np.max(np.abs(self.gram() - np.eye(values.shape[0])), initial=0.0)
        if err > self.tol:
            raise ModelError(f"basis is not orthonormal in L2(nu): max deviation {err:.3g}")

    @classmethod
    def canonical(cls, model: LevyModel) -> "OrthonormalBasis":
        rates = model.rates
        return cls(model.sizes, rates, np.diag(1.0 / np.sqrt(rates)))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def compensators(self) -> np.ndarray:
        """``int f_i d nu``."""
        return self.values @ self.rates

    def gram(self) -> np.ndarray:
        """``int f_i f_j d nu``."""
        return (self.values * self.rates) @ self.values.T

    def __call__(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape)
        for a, xa in enumerate(self.sizes):
            out = np.where(x == xa, self.values[i, a], out)
        return out


@dataclass
class MartingaleFamily:
    """The martingales ``W^sigma``, ``X^{f_i}`` and ``M`` on a common grid.

    ``lambda_values`` is the stopped hazard, the predictable bracket of ``M``.
    """

    w_sigma: GridProcess
    xf: tuple
    m: GridProcess
    basis: OrthonormalBasis | None
    model: LevyModel
    lambda_values: np.ndarray

    def members(self) -> dict:
        out = {"W": self.w_sigma}
        out.update({f"X{i + 1}": p for i, p in enumerate(self.xf)})
        out["M"] = self.m
        return out

    def predictable_bracket(self, a: str, b: str) -> np.ndarray:
        """Predictable covariation ``<a, b>`` on the grid."""
        grid = self.m.grid
        if a == b == "W":
            return self.model.sigma2 * grid
        if a == b == "M":
            return self.lambda_values
        if a.startswith("X") and b.startswith("X"):
            i, j = int(a[1:]) - 1, int(b[1:]) - 1
            return self.basis.gram()[i, j] * grid
        return np.zeros_like(grid)


def build_family(model: LevyModel, basis: OrthonormalBasis | None,
                 scenario: EnlargedScenario | ScenarioBatch) -> MartingaleFamily:
    """Assemble ``W^sigma``, ``X^{f_i} = sum f_i(dL) - t int f_i dnu`` and ``M = H - Lambda``.

    Every member carries its exact jump ledger.
    """
    if basis is None and model.nu:
        basis = OrthonormalBasis.canonical(model)
    if basis is not None and not np.array_equal(np.sort(basis.sizes), np.sort(model.sizes)):
        raise StructuralError("basis atoms differ from the model's Levy measure")
    if isinstance(scenario, ScenarioBatch):
        batch = scenario.batch
        grid = batch.grid
        nodes = np.arange(grid.size)
        w = batch.w
        ledger = batch.ledger
        m_values = scenario.m_at(nodes)
        m_ledger = scenario.m_ledger
        lam = scenario.lambda_at(nodes)

        def jump_values(weights):
            return batch.jump_sums(weights)
    else:
        path = scenario.path
        grid = path.grid
        w = path.w_values
        ledger = JumpLedger(np.zeros(path.jump_times.size, np.int64), path.jump_times,
                            path.jump_sizes, path.jump_marks)
        m_values = scenario.m_values
        m_ledger = scenario.m_ledger
        lam = scenario.lambda_values

        def jump_values(weights):
            cs = np.concatenate([[0.0], np.cumsum(np.asarray(weights)[path.jump_marks])])
            return cs[np.searchsorted(path.jump_times, grid, side="right")]
    w_sigma = GridProcess(grid, w, None, diffusive=model.sigma2 > 0)
    xf = []
    if basis is not None:
        # map basis columns onto the model's atom order
        col = [int(np.nonzero(basis.sizes == x)[0][0]) for x in model.sizes]
        vals = basis.values[:, col]
        comp = basis.compensators
        for i in range(basis.dim):
            values = jump_values(vals[i]) - comp[i] * grid
            xf.append(GridProcess(grid, values, ledger.with_sizes(vals[i][ledger.mark]), diffusive=False))
    return MartingaleFamily(w_sigma, tuple(xf), GridProcess(grid, m_values, m_ledger, diffusive=False),
                            basis, model, lam)


# --------------------------------------------------------------------------
# integrands
# --------------------------------------------------------------------------

class _RegressionEvaluator:
    def __init__(self, features: FeatureSet, coefs: np.ndarray, names: Sequence[str]):
        self.features, self.coefs, self.names = features, coefs, tuple(names)

    def cell_values(self, k, state, inc):
        F = self.features.evaluate(state)
        return {n: F @ self.coefs[k, m] for m, n in enumerate(self.names)}


class _ExplicitEvaluator:
    def __init__(self, features, level_coefs, f_coefs, f_names, k_s, s, gamma_s):
        self.features, self.level, self.f_coefs = features, level_coefs, f_coefs
        self.f_names, self.k_s, self.s, self.gamma_s = tuple(f_names), k_s, s, gamma_s
        self.names = self.f_names + ("M",)

    def weights(self, k, state):
        alive = state.t < state.tau
        y = np.where(alive, np.exp(state.gamma), 0.0)
        if k < self.k_s:
            ys = y
        else:
            ys = np.where(state.tau > self.s, np.exp(self.gamma_s), 0.0)
        return y, ys

    def cell_values(self, k, state, inc):
        F = self.features.evaluate(state)
        y, ys = self.weights(k, state)
        out = {n: ys * (F @ self.f_coefs[k, m]) for m, n in enumerate(self.f_names)}
        out["M"] = -(F @ self.level[k]) * y if k < self.k_s else np.zeros(state.n_paths)
        return out


@dataclass
class IntegrandSet:
    """Integrands of a representation, evaluated lazily from coefficient tables.

    Attributes
    ----------
    names : tuple of str
        Integrator names (``W``, ``X1``, ..., ``M`` or sums such as ``W+M``).
    x0 : float
        Estimated ``E[xi]``.
    residual_rel, residual_se : float
        ``||xi - xi_hat|| / ||xi - E xi||`` and its standard error.
    """

    label: str
    names: tuple
    grid: np.ndarray
    x0: float
    xi: np.ndarray
    reconstruction: np.ndarray
    residual_rel: float
    residual_se: float
    features: FeatureSet
    coefficients: np.ndarray
    source: object = field(repr=False)
    evaluator: object = field(repr=False)
    flags: dict = field(default_factory=dict)

    def evaluate(self, names: Sequence[str] | None = None) -> dict:
        """Dense ``(n_paths, K+1)`` integrand arrays (``values[:, k]`` acts on cell ``k``)."""
        names = self.names if names is None else tuple(names)
        K = self.grid.size - 1
        out = {n: np.zeros((self.source.n_paths, K + 1)) for n in names}
        for k, state, inc in self.source.cells():
            vals = self.evaluator.cell_values(k, state, inc)
            for n in names:
                out[n][:, k] = vals[n]
        for n in names:
            out[n][:, K] = out[n][:, K - 1]
        return out

    def process(self, name: str) -> GridProcess:
        return GridProcess(self.grid, self.evaluate([name])[name], None, diffusive=False)

    @property
    def z(self) -> GridProcess:
        return self.process("W")

    @property
    def v(self) -> list:
        return [self.process(n) for n in self.names if n.startswith("X")]

    @property
    def u(self) -> GridProcess:
        return self.process("M")

    def coefficient_rows(self):
        """``(cell, t_k, integrator, feature, coefficient)`` rows."""
        K = self.grid.size - 1
        for k in range(K):
            for m, n in enumerate(self.names):
                for j, f in enumerate(self.features.names):
                    yield k, self.grid[k], n, f, self.coefficients[k, m, j]


def _as_source(source, basis=None):
    if isinstance(source, ScenarioBatch):
        model = source.batch.model
        if basis is None and model.nu:
            basis = OrthonormalBasis.canonical(model)
        return BatchCellSource(source, basis)
    return source


def _payoff_values(xi, source) -> tuple[np.ndarray, str]:
    if isinstance(xi, Payoff):
        return xi(source.terminal()), xi.label
    arr = np.asarray(xi, dtype=np.float64)
    if arr.shape != (source.n_paths,):
        raise StructuralError(f"payoff has shape {arr.shape}, expected ({source.n_paths},)")
    return arr, "xi"


def regression_representation(xi, source, features: FeatureSet | None = None,
                              integrators: Sequence[Sequence[str]] | None = None,
                              ridge: float = RIDGE, min_paths: int = MIN_REGRESSION_PATHS,
                              baseline: IntegrandSet | None = None,
                              pool: float | None = REGRESSION_POOL) -> IntegrandSet:
    """Project ``xi`` onto stochastic integrals against the family members.

    Parameters
    ----------
    xi : Payoff or (n_paths,) array
    source : ScenarioBatch or cell source
    features : FeatureSet, optional
        Defaults to the payoff's recommended set.
    integrators : sequence of tuples of member names, optional
        Defaults to every member separately.
    baseline : IntegrandSet, optional
        Fit with a smaller feature set; if the new fit does not improve on
        it, the baseline is returned with ``flags["refinement_kept_baseline"]``.
    pool : float, optional
        Width of the time buckets sharing integrand coefficients; ``None``
        fits every cell separately.

    Raises
    ------
    StatisticalPowerError
        If the batch is smaller than ``min_paths``.
    """
    src = _as_source(source)
    if src.n_paths < min_paths:
        raise StatisticalPowerError(f"regression needs at least {min_paths} paths, got {src.n_paths}")
    values, label = _payoff_values(xi, src)
    if features is None:
        features = xi.default_features(src.grid[-1]) if isinstance(xi, Payoff) else FeatureSet(
            ("1", "L", "L^2", "A", "1-H"))
    if integrators is None:
        integrators = tuple((m,) for m in src.members)
    integrators = tuple(tuple(i) for i in integrators)
    req = FitRequest(values, features, integrators, label)
    fit, = backward_sweep(src, [req], ridge, pool=pool).fits
    result = _integrand_set(fit, src)
    if baseline is not None and baseline.residual_rel <= result.residual_rel:
        baseline.flags["refinement_kept_baseline"] = True
        return baseline
    return result


def _integrand_set(fit: FitOutcome, src) -> IntegrandSet:
    r, se = relative_residual(fit.request.xi, fit.reconstruction)
    names = fit.request.integrator_names
    return IntegrandSet(fit.request.label, names, src.grid, fit.x0, fit.request.xi, fit.reconstruction,
                        r, se, fit.request.features, fit.integrand_coefs, src,
                        _RegressionEvaluator(fit.request.features, fit.integrand_coefs, names),
                        {"rank_deficient_cells": len(fit.rank_deficient_cells),
                         "ridge_bumped_cells": len(fit.ridge_bumped_cells)})


def explicit_representation(g: BoundedFunction, s: float, source, features: FeatureSet | None = None,
                            ridge: float = RIDGE, min_paths: int = MIN_REGRESSION_PATHS) -> IntegrandSet:
    """Integrands of ``xi = g(L_T) 1{tau > s}`` through the reference filtration.

    ``g(L_T) exp(-Gamma_s)`` is represented against ``W`` and ``X^f`` by a
    backward sweep with features free of the random time, giving ``X'``,
    ``Z`` and ``V``.  Then, with ``Y = E(-M)`` and ``Y^s = Y_{. ^ s}``,

    ``xi = X'_0 + int Y^s Z dW + int Y^s V dX^f - int X' Y 1_{[0,s]} dM``.

    Raises
    ------
    DomainError
        If ``g`` is unbounded or ``s`` is not a grid node.
    StructuralError
        If ``features`` depend on the random time.
    """
    if not np.isfinite(g.bound):
        raise DomainError(f"g must be bounded, {g.name} is not")
    src = _as_source(source)
    if src.n_paths < min_paths:
        raise StatisticalPowerError(f"regression needs at least {min_paths} paths, got {src.n_paths}")
    grid = src.grid
    k_s = int(np.searchsorted(grid, s))
    if k_s >= grid.size or abs(grid[k_s] - s) > 1e-12 * max(1.0, grid[-1]):
        raise DomainError(f"s = {s} must be a grid node")
    features = hermite_features(7) if features is None else features
    if features.uses_random_time:
        raise StructuralError("reference-filtration features may not depend on the random time")
    term = src.terminal()
    gamma_s = src.hazard_at(k_s)
    xi_f = g(term["L"]) * np.exp(-gamma_s)
    xi = g(term["L"]) * (term["tau"] > s)
    f_members = tuple(m for m in src.members if m != "M")
    req = FitRequest(xi_f, features, tuple((m,) for m in f_members), "reference")
    m_term = np.zeros(src.n_paths)

    def hook(k, state, inc, levels):
        alive = state.t < state.tau
        y = np.where(alive, np.exp(state.gamma), 0.0)
        ys = y if k < k_s else np.where(state.tau > grid[k_s], np.exp(gamma_s), 0.0)
        if k < k_s:
            m_term[:] -= levels[0] * y * inc["M"]
        return [(m, 0, m, ys * inc[name]) for m, name in enumerate(f_members)]

    sweep = backward_sweep(src, [req], ridge, hook=hook)
    fit, = sweep.fits
    recon = fit.x0 + m_term + sum(sweep.functionals.values())
    r, se = relative_residual(xi, recon)
    r_f, _ = relative_residual(xi_f, fit.reconstruction)
    evaluator = _ExplicitEvaluator(features, fit.level_coefs, fit.integrand_coefs, f_members, k_s,
                                   grid[k_s], gamma_s)
    return IntegrandSet(f"explicit[{g.name}, s={s!r}]", evaluator.names, grid, fit.x0, xi, recon, r, se,
                        features, fit.integrand_coefs, src, evaluator,
                        {"reference_residual_rel": r_f,
                         "rank_deficient_cells": len(fit.rank_deficient_cells),
                         "ridge_bumped_cells": len(fit.ridge_bumped_cells)})


@dataclass(frozen=True)
class AgreementReport:
    """L2 distance between two reconstructions, relative to the payoff spread."""

    distance_rel: float
    distance_se: float
    allowance: float

    @property
    def passed(self) -> bool:
        return self.distance_rel <= self.allowance


def compare_representations(a: IntegrandSet, b: IntegrandSet, z: float = 4.0) -> AgreementReport:
    """Check ``||xi_a - xi_b|| <= r_a + r_b + z * SE`` (all relative to ``sd(xi)``)."""
    if a.xi.shape != b.xi.shape:
        raise StructuralError("representations are over different batches")
    xi = a.xi
    sd = float(np.sqrt(np.mean((xi - xi.mean()) ** 2)))
    d = (a.reconstruction - b.reconstruction) ** 2
    dist = float(np.sqrt(d.mean())) / max(sd, 1e-12)
    se = 0.5 * float(np.std(d) / np.sqrt(d.size)) / max(np.sqrt(d.mean()), 1e-300) / max(sd, 1e-12)
    allowance = a.residual_rel + b.residual_rel + z * (se + a.residual_se + b.residual_se)
    return AgreementReport(dist, se, allowance)
