"""Regression features and terminal payoffs.

Features are named products of atoms evaluated on the state at the left end
of a grid cell.  Atoms:

``1``, ``t``, ``L``, ``L^k``, ``He<k>`` (probabilists' Hermite polynomial of
the standardised ``L``), ``A`` (``exp(-Gamma)``), ``expGamma``
(``exp(Gamma)``), ``expGamma[s]`` (``exp(Gamma)`` before ``s``, ``1`` from
``s`` on), ``H``, ``1-H``, ``Lambda`` (the stopped hazard) and ``1-H[s]``
(``1{tau > min(t, s)}``).  A product is written ``a*b``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigurationError, DomainError

#: atoms that depend on the random time and are therefore not F-adapted
G_ATOMS = ("H", "1-H", "Lambda")


@dataclass
class CellState:
    """State of every path at the left node of a cell.

    ``z`` is ``L`` centred and scaled by its model standard deviation; it is
    what the Hermite atoms see.
    """

    t: float
    L: np.ndarray
    z: np.ndarray
    H: np.ndarray
    A: np.ndarray
    Lambda: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.L.shape[0]


_POWER = re.compile(r"^L\^(\d+)$")
_HERMITE = re.compile(r"^He(\d+)$")
_SURVIVAL_AT = re.compile(r"^1-H\[([0-9eE.+-]+)\]$")
_EXP_GAMMA_AT = re.compile(r"^expGamma\[([0-9eE.+-]+)\]$")
_PLAIN = {"1", "t", "L", "A", "expGamma", "H", "1-H", "Lambda"}


def _hermite(state: CellState, k: int) -> np.ndarray:
    """``He_k(z)`` by the three-term recurrence, cached on the state."""
    cache = state.extra.setdefault("_hermite", [])
    if not cache:
        cache.append(np.ones(state.n_paths))
        cache.append(state.z)
    while len(cache) <= k:
        j = len(cache) - 1
        cache.append(state.z * cache[j] - j * cache[j - 1])
    return cache[k]


def _atom(name: str, state: CellState) -> np.ndarray:
    cache = state.extra.setdefault("_atoms", {})
    out = cache.get(name)
    if out is None:
        out = cache[name] = _atom_uncached(name, state)
    return out


def _atom_uncached(name: str, state: CellState) -> np.ndarray:
    n = state.n_paths
    if name == "1":
        return np.ones(n)
    if name == "t":
        return np.full(n, state.t)
    if name == "L":
        return state.L
    if name == "A":
        return np.broadcast_to(state.A, (n,))
    if name == "H":
        return state.H
    if name == "1-H":
        return 1.0 - state.H
    if name == "Lambda":
        return state.Lambda
    if name == "expGamma":
        return np.broadcast_to(np.exp(state.gamma), (n,))
    m = _EXP_GAMMA_AT.match(name)
    if m:
        if state.t < float(m.group(1)):
            return np.broadcast_to(np.exp(state.gamma), (n,))
        return np.ones(n)
    m = _POWER.match(name)
    if m:
        return state.L ** int(m.group(1))
    m = _HERMITE.match(name)
    if m:
        return _hermite(state, int(m.group(1)))
    m = _SURVIVAL_AT.match(name)
    if m:
        s = float(m.group(1))
        return (state.tau > min(state.t, s)).astype(np.float64)
    raise ConfigurationError(f"unknown feature atom {name!r}")


def _validate_atom(name: str) -> None:
    if name in _PLAIN:
        return
    if any(p.match(name) for p in (_POWER, _HERMITE, _SURVIVAL_AT, _EXP_GAMMA_AT)):
        return
    raise ConfigurationError(f"unknown feature atom {name!r}")


@dataclass(frozen=True)
class FeatureSet:
    """Ordered list of feature names."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        if not names:
            raise ConfigurationError("a feature set needs at least one feature")
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate features in {names}")
        for n in names:
            for a in n.split("*"):
                _validate_atom(a.strip())
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def uses_random_time(self) -> bool:
        atoms = [a.strip() for n in self.names for a in n.split("*")]
        return any(a in G_ATOMS or _SURVIVAL_AT.match(a) for a in atoms)

    def evaluate(self, state: CellState) -> np.ndarray:
        out = np.empty((state.n_paths, len(self.names)))
        cache = state.extra.setdefault("_columns", {})
        for j, n in enumerate(self.names):
            col = cache.get(n)
            if col is None:
                atoms = n.split("*")
                col = np.array(_atom(atoms[0].strip(), state), dtype=np.float64)
                for a in atoms[1:]:
                    col *= _atom(a.strip(), state)
                cache[n] = col
            out[:, j] = col
        return out

    def __add__(self, other: "FeatureSet") -> "FeatureSet":
        return FeatureSet(self.names + tuple(n for n in other.names if n not in self.names))


def hermite_features(degree: int) -> FeatureSet:
    return FeatureSet(tuple(f"He{k}" for k in range(degree + 1)))


def feature_set(name: str, **params) -> FeatureSet:
    """Named feature sets.

    ``default``: ``1, L, L^2, A, 1-H``; ``brownian``: ``1, He1``;
    ``martingale``: ``1, 1-H, Lambda``; ``survival``: ``1, A, 1-H,
    1-H*expGamma``; ``hermite`` (``degree``); ``hermite_survival``
    (``degree``, ``s``): Hermite polynomials times ``1-H[s]*expGamma[s]``.
    """
    if name == "default":
        return FeatureSet(("1", "L", "L^2", "A", "1-H"))
    if name == "brownian":
        return FeatureSet(("1", "He1"))
    if name == "martingale":
        return FeatureSet(("1", "1-H", "Lambda"))
    if name == "survival":
        return FeatureSet(("1", "A", "1-H", "1-H*expGamma"))
    if name == "hermite":
        return hermite_features(int(params.get("degree", 5)))
    if name == "hermite_survival":
        deg = int(params.get("degree", 5))
        s = float(params["s"])
        return FeatureSet(tuple(f"He{k}*1-H[{s!r}]*expGamma[{s!r}]" for k in range(deg + 1)))
    raise ConfigurationError(f"unknown feature set {name!r}")


# --------------------------------------------------------------------------
# payoffs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundedFunction:
    """Function of ``L_T`` with a known sup-norm bound (``inf`` if unbounded)."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    bound: float

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64))


def bounded_function(name: str, **params) -> BoundedFunction:
    """``clip`` (``level``), ``constant`` (``value``), ``tanh`` or ``identity``."""
    if name == "clip":
        k = float(params.get("level", 2.0))
        if k <= 0:
            raise DomainError("clip level must be positive")
        return BoundedFunction(f"clip({k!r})", lambda x: np.clip(x, -k, k), k)
    if name == "constant":
        c = float(params.get("value", 1.0))
        return BoundedFunction(f"constant({c!r})", lambda x: np.full(np.shape(x), c), abs(c))
    if name == "tanh":
        return BoundedFunction("tanh", np.tanh, 1.0)
    if name == "identity":
        return BoundedFunction("identity", lambda x: x, np.inf)
    raise ConfigurationError(f"unknown function {name!r}")


@dataclass(frozen=True)
class Payoff:
    """Terminal random variable built from the terminal state.

    ``terminal`` maps ``L``, ``W``, ``H``, ``M``, ``Lambda``, ``A`` and
    ``tau`` to arrays over paths.
    """

    name: str
    params: tuple = ()

    def __call__(self, terminal: Mapping[str, np.ndarray]) -> np.ndarray:
        p = dict(self.params)
        if self.name in ("W_T", "L_T", "M_T", "H_T"):
            return np.asarray(terminal[self.name[0]], dtype=np.float64).copy()
        if self.name == "clipped_L":
            return np.clip(terminal["L"], -p["level"], p["level"])
        if self.name == "clipped_L_survival":
            return np.clip(terminal["L"], -p["level"], p["level"]) * (terminal["tau"] > p["s"])
        if self.name == "constant":
            return np.full(terminal["L"].shape, float(p["value"]))
        raise ConfigurationError(f"unknown payoff {self.name!r}")

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        return self.name + "(" + ",".join(f"{k}={v!r}" for k, v in self.params) + ")"

    def default_features(self, horizon: float) -> FeatureSet:
        """Feature set spanning the conditional expectation of this payoff."""
        p = dict(self.params)
        if self.name == "W_T":
            return feature_set("brownian")
        if self.name == "M_T":
            return feature_set("martingale")
        if self.name == "H_T":
            return feature_set("survival")
        if self.name == "clipped_L_survival":
            return feature_set("hermite_survival", degree=5, s=p["s"])
        if self.name in ("clipped_L", "L_T"):
            return feature_set("hermite", degree=5)
        return feature_set("default")


def payoff(name: str, **params) -> Payoff:
    """Build a :class:`Payoff`; parameters are validated eagerly."""
    if name in ("W_T", "L_T", "M_T", "H_T"):
        return Payoff(name)
    if name == "clipped_L":
        return Payoff(name, (("level", float(params.get("level", 2.0))),))
    if name == "clipped_L_survival":
        if "s" not in params:
            raise ConfigurationError("clipped_L_survival needs s")
        return Payoff(name, (("level", float(params.get("level", 2.0))), ("s", float(params["s"]))))
    if name == "constant":
        return Payoff(name, (("value", float(params.get("value", 1.0))),))
    raise ConfigurationError(f"unknown payoff {name!r}")
