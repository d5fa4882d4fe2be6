"""Agent populations, utility families, encounter-rate matrices and selection.

An :class:`Economy` is a set of agents, each owning money and a vector of
goods, plus a symmetric encounter-rate matrix.  Utility specs are small
frozen dataclasses; the numeric engine packs them into flat arrays via
integer kind codes defined here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .sampling import RandomSource, sample_exponential

__all__ = [
    "CobbDouglas",
    "GoodsSubstitutes",
    "GoodsComplements",
    "LinearSubstitute",
    "MoneyGoodsComplement",
    "BouchaudMeanField",
    "UtilitySpec",
    "Holdings",
    "EncounterMatrix",
    "Economy",
    "utility_eval",
    "homogeneity_degree",
    "build_topology",
    "is_connected",
    "select_encounter",
    "advance_clock",
    "capacities",
    "money_capacity",
]

# engine kind codes
KIND_COBB_DOUGLAS = 0
KIND_SUBSTITUTES = 1
KIND_COMPLEMENTS = 2
KIND_COMPLEMENTS_SHIFT = 3
KIND_LINEAR_SUBSTITUTE = 4
KIND_MONEY_GOODS_COMPLEMENT = 5
KIND_MEAN_FIELD = 6

# kinds whose utility factorises as (money factor) * (goods factor)
_MONEY_FACTORIZED = {
    KIND_COBB_DOUGLAS,
    KIND_SUBSTITUTES,
    KIND_COMPLEMENTS,
    KIND_COMPLEMENTS_SHIFT,
    KIND_MEAN_FIELD,
}


@dataclass(frozen=True)
class CobbDouglas:
    """u(g, m) = prod_t g_t^(alpha_t - 1) * m^(eta - 1)."""

    alpha: tuple[float, ...]
    eta: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in np.atleast_1d(self.alpha)))
        if any(a <= 0 for a in self.alpha) or self.eta <= 0:
            raise ValueError("Cobb-Douglas exponents must be positive")


@dataclass(frozen=True)
class GoodsSubstitutes:
    """u = m^(eta-1) * (g1 + g2)^(alpha - 1): the two goods are perfect substitutes."""

    alpha: float
    eta: float

    def __post_init__(self):
        if self.alpha <= 0 or self.eta <= 0:
            raise ValueError("exponents must be positive")


@dataclass(frozen=True)
class GoodsComplements:
    """u = m^(eta-1) * min(g1, g2)^(alpha - 1), or (1 + min)^(alpha-1) when shifted.

    The shifted variant keeps utility positive when one good is absent, for
    economies initialised with a missing good.
    """

    alpha: float
    eta: float
    shifted: bool = False

    def __post_init__(self):
        if self.alpha <= 0 or self.eta <= 0:
            raise ValueError("exponents must be positive")


@dataclass(frozen=True)
class LinearSubstitute:
    """u(g, m) = (a*g + b*m)^(gamma - 1): goods and money substitute in ratio a:b."""

    a: float
    b: float
    gamma: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0 or self.gamma <= 0:
            raise ValueError("linear-substitute parameters must be positive")


@dataclass(frozen=True)
class MoneyGoodsComplement:
    """u(g, m) = min(g, m)^(gamma - 1): goods and money are complements."""

    gamma: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class BouchaudMeanField:
    """u(m) = m^(c * mbar^2) with mbar the economy's mean money per agent.

    Equivalent to a money exponent eta = 1 + c*mbar^2 that moves with the
    economy's money total.  Money-only; no goods dependence.
    """

    c: float

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")


UtilitySpec = Union[
    CobbDouglas,
    GoodsSubstitutes,
    GoodsComplements,
    LinearSubstitute,
    MoneyGoodsComplement,
    BouchaudMeanField,
]


@dataclass
class Holdings:
    """One agent's money and per-good quantities; all components >= 0."""

    money: float
    goods: np.ndarray

    def __post_init__(self):
        self.goods = np.asarray(self.goods, dtype=float).reshape(-1)
        if self.money < 0 or np.any(self.goods < 0):
            raise ValueError("holdings must be non-negative")

    def copy(self) -> "Holdings":
        return Holdings(self.money, self.goods.copy())


def kind_code(spec: UtilitySpec) -> int:
    if isinstance(spec, CobbDouglas):
        return KIND_COBB_DOUGLAS
    if isinstance(spec, GoodsSubstitutes):
        return KIND_SUBSTITUTES
    if isinstance(spec, GoodsComplements):
        return KIND_COMPLEMENTS_SHIFT if spec.shifted else KIND_COMPLEMENTS
    if isinstance(spec, LinearSubstitute):
        return KIND_LINEAR_SUBSTITUTE
    if isinstance(spec, MoneyGoodsComplement):
        return KIND_MONEY_GOODS_COMPLEMENT
    if isinstance(spec, BouchaudMeanField):
        return KIND_MEAN_FIELD
    raise TypeError(f"unknown utility spec {spec!r}")


def is_money_factorized(spec: UtilitySpec) -> bool:
    return kind_code(spec) in _MONEY_FACTORIZED


def _pow_checked(base: float, expo: float) -> float:
    if base == 0.0:
        if expo < 0.0:
            raise ValueError("utility undefined: 0 raised to a negative exponent")
        return 0.0 if expo > 0.0 else 1.0
    return base**expo


def utility_eval(spec: UtilitySpec, h: Holdings, mean_money: float | None = None) -> float:
    """Evaluate a utility at the given holdings; finite and non-negative.

    `mean_money` supplies the economy context needed by the mean-field
    family and is ignored by the others.
    """
    m = float(h.money)
    g = h.goods
    if m < 0 or np.any(g < 0):
        raise ValueError("holdings must be non-negative")
    if isinstance(spec, CobbDouglas):
        if len(spec.alpha) != g.size:
            raise ValueError("good count mismatch")
        u = _pow_checked(m, spec.eta - 1.0)
        for a, gt in zip(spec.alpha, g):
            u *= _pow_checked(float(gt), a - 1.0)
        return u
    if isinstance(spec, GoodsSubstitutes):
        return _pow_checked(m, spec.eta - 1.0) * _pow_checked(float(g.sum()), spec.alpha - 1.0)
    if isinstance(spec, GoodsComplements):
        base = float(g.min()) if g.size else 0.0
        if spec.shifted:
            base = 1.0 + base
        return _pow_checked(m, spec.eta - 1.0) * _pow_checked(base, spec.alpha - 1.0)
    if isinstance(spec, LinearSubstitute):
        if g.size != 1:
            raise ValueError("linear-substitute utility is defined for one good")
        return _pow_checked(spec.a * float(g[0]) + spec.b * m, spec.gamma - 1.0)
    if isinstance(spec, MoneyGoodsComplement):
        if g.size != 1:
            raise ValueError("money-goods complement utility is defined for one good")
        return _pow_checked(min(float(g[0]), m), spec.gamma - 1.0)
    if isinstance(spec, BouchaudMeanField):
        if mean_money is None:
            raise ValueError("mean-field utility needs the economy mean money as context")
        return _pow_checked(m, spec.c * mean_money * mean_money)
    raise TypeError(f"unknown utility spec {spec!r}")


def homogeneity_degree(spec: UtilitySpec) -> float | None:
    """Degree tau with u(lam*g, lam*m) = lam^tau u(g, m); None when not homogeneous."""
    if isinstance(spec, CobbDouglas):
        return sum(a - 1.0 for a in spec.alpha) + (spec.eta - 1.0)
    if isinstance(spec, GoodsSubstitutes):
        return (spec.alpha - 1.0) + (spec.eta - 1.0)
    if isinstance(spec, GoodsComplements):
        if spec.shifted:
            return None
        return (spec.alpha - 1.0) + (spec.eta - 1.0)
    if isinstance(spec, LinearSubstitute):
        return spec.gamma - 1.0
    if isinstance(spec, MoneyGoodsComplement):
        return spec.gamma - 1.0
    if isinstance(spec, BouchaudMeanField):
        return None
    raise TypeError(f"unknown utility spec {spec!r}")


# ---------------------------------------------------------------------------
# encounter matrices


class EncounterMatrix:
    """Symmetric non-negative encounter rates with zero diagonal.

    `kind` is "complete", "ring" or "custom".  Complete and ring matrices
    select pairs by index arithmetic; custom matrices carry an explicit
    cumulative table over row-major ordered pairs (i, j), i != j.
    """

    def __init__(self, kind: str, n: int, rate: float = 1.0, table: np.ndarray | None = None):
        if n < 2:
            raise ValueError("need at least two agents")
        self.kind = kind
        self.n = int(n)
        self.rate = float(rate)
        self._cum = None
        if kind == "complete":
            self.K = self.rate * n * (n - 1)
        elif kind == "ring":
            self.K = self.rate * 2 * n
        elif kind == "custom":
            t = np.asarray(table, dtype=float)
            if t.shape != (n, n):
                raise ValueError(f"custom matrix must be {n}x{n}")
            if np.any(t < 0):
                raise ValueError("encounter rates must be non-negative")
            if not np.array_equal(t, t.T):
                raise ValueError("encounter matrix must be symmetric")
            if np.any(np.diag(t) != 0):
                raise ValueError("encounter matrix diagonal must be zero")
            self.table = t
            self.K = float(t.sum())
            self._cum = np.cumsum(t.reshape(-1))
        else:
            raise ValueError(f"unknown topology kind {kind!r}")

    def rates(self) -> np.ndarray:
        """Dense rate matrix (materialised for complete/ring)."""
        if self.kind == "custom":
            return self.table.copy()
        k = np.zeros((self.n, self.n))
        if self.kind == "complete":
            k[:] = self.rate
            np.fill_diagonal(k, 0.0)
        else:
            for i in range(self.n):
                k[i, (i + 1) % self.n] = self.rate
                k[i, (i - 1) % self.n] = self.rate
        return k

    @property
    def cumulative(self) -> np.ndarray | None:
        return self._cum


def build_topology(kind: str, n: int, matrix: np.ndarray | None = None, rate: float = 1.0) -> EncounterMatrix:
    """Complete, ring, or validated custom encounter matrix over n agents."""
    if kind == "custom":
        return EncounterMatrix("custom", n, table=matrix)
    return EncounterMatrix(kind, n, rate=rate)


def is_connected(m: EncounterMatrix) -> bool:
    """True iff the graph of positive rates has a single component."""
    if m.kind in ("complete", "ring"):
        return m.rate > 0
    t = m.table
    seen = np.zeros(m.n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(t[i] > 0)[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def select_encounter(m: EncounterMatrix, rng: RandomSource) -> tuple[int, int]:
    """Pair (i, j) drawn with probability k_ij / K from a single uniform draw.

    Complete and ring matrices map the draw by index arithmetic over the
    row-major pair order; custom matrices binary-search their cumulative
    table for the greatest pair whose exclusive prefix sum is below r*K.
    """
    if m.K <= 0:
        raise ValueError("no encounters possible: all rates are zero")
    r = rng.u01()
    n = m.n
    if m.kind == "complete":
        npairs = n * (n - 1)
        idx = int(r * npairs)
        if idx >= npairs:
            idx = npairs - 1
        i = idx // (n - 1)
        rem = idx % (n - 1)
        j = rem + 1 if rem >= i else rem
        return i, j
    if m.kind == "ring":
        npairs = 2 * n
        idx = int(r * npairs)
        if idx >= npairs:
            idx = npairs - 1
        i = idx // 2
        a = (i - 1) % n
        b = (i + 1) % n
        lo, hi = (a, b) if a < b else (b, a)
        return i, (lo if idx % 2 == 0 else hi)
    cum = m._cum
    x = r * m.K
    # greatest pair whose exclusive prefix sum is below x
    p = int(np.searchsorted(cum, x, side="left"))
    if p >= cum.size:
        p = cum.size - 1
    flat = m.table.reshape(-1)
    if flat[p] == 0.0:  # boundary hit on a zero-rate pair (measure zero)
        q = p + 1
        while q < flat.size and flat[q] == 0.0:
            q += 1
        if q < flat.size:
            p = q
        else:
            while p > 0 and flat[p] == 0.0:
                p -= 1
    return p // n, p % n


def advance_clock(
    encounters: int,
    m: EncounterMatrix,
    mode: str = "count",
    rng: RandomSource | None = None,
) -> float:
    """Elapsed time for a number of encounters: count/K, or summed exponential gaps."""
    if mode == "count":
        return encounters / m.K
    if mode == "exponential":
        if rng is None:
            raise ValueError("exponential clock mode needs a random source")
        t = 0.0
        for _ in range(encounters):
            t += sample_exponential(1.0 / m.K, rng)
        return t
    raise ValueError(f"unknown clock mode {mode!r}")


# ---------------------------------------------------------------------------
# economies


class Economy:
    """Agent population with utilities, holdings and an encounter topology."""

    def __init__(
        self,
        utilities: Sequence[UtilitySpec],
        money: np.ndarray,
        goods: np.ndarray,
        matrix: EncounterMatrix | None = None,
        label: str = "economy",
    ):
        self.utilities = list(utilities)
        n = len(self.utilities)
        if n < 1:
            raise ValueError("economy needs at least one agent")
        self.money = np.asarray(money, dtype=float).reshape(-1).copy()
        goods = np.asarray(goods, dtype=float)
        if goods.ndim == 1:
            goods = goods.reshape(n, -1) if goods.size == n else goods.reshape(n, 0)
        self.goods = goods.astype(float).copy()
        if self.money.size != n or self.goods.shape[0] != n:
            raise ValueError("holdings shape does not match agent count")
        if np.any(self.money < 0) or np.any(self.goods < 0):
            raise ValueError("holdings must be non-negative")
        self.matrix = matrix if matrix is not None else build_topology("complete", n) if n > 1 else None
        if self.matrix is not None and self.matrix.n != n:
            raise ValueError("encounter matrix size does not match agent count")
        if self.matrix is not None and not is_connected(self.matrix):
            warnings.warn(
                f"economy {label!r}: encounter graph is disconnected; "
                "equilibrium need not be unique",
                stacklevel=2,
            )
        self.label = label

    # -- construction helpers

    @classmethod
    def homogeneous(
        cls,
        n: int,
        spec: UtilitySpec,
        total_money: float,
        total_goods: Sequence[float] | float = (),
        topology: str = "complete",
        matrix: np.ndarray | None = None,
        label: str = "economy",
    ) -> "Economy":
        """n identical agents with equal endowments of the given totals."""
        tg = np.atleast_1d(np.asarray(total_goods, dtype=float))
        money = np.full(n, total_money / n)
        goods = np.tile(tg / n, (n, 1)) if tg.size else np.zeros((n, 0))
        mat = build_topology(topology, n, matrix=matrix) if n > 1 else None
        return cls([spec] * n, money, goods, mat, label=label)

    @property
    def n_agents(self) -> int:
        return len(self.utilities)

    @property
    def n_goods(self) -> int:
        return self.goods.shape[1]

    @property
    def total_money(self) -> float:
        return float(self.money.sum())

    @property
    def total_goods(self) -> np.ndarray:
        return self.goods.sum(axis=0)

    def holdings(self, i: int) -> Holdings:
        return Holdings(float(self.money[i]), self.goods[i].copy())

    def mean_money(self) -> float:
        return self.total_money / self.n_agents

    def copy(self) -> "Economy":
        eco = Economy.__new__(Economy)
        eco.utilities = list(self.utilities)
        eco.money = self.money.copy()
        eco.goods = self.goods.copy()
        eco.matrix = self.matrix
        eco.label = self.label
        return eco


def capacities(eco: Economy) -> tuple[float, np.ndarray]:
    """Money capacity C = sum eta_i and goods capacities C_G[t] = sum alpha_it.

    Defined for Cobb-Douglas populations only.
    """
    C = 0.0
    CG = np.zeros(eco.n_goods)
    for spec in eco.utilities:
        if not isinstance(spec, CobbDouglas):
            raise ValueError(f"capacities are defined for Cobb-Douglas agents, got {type(spec).__name__}")
        C += spec.eta
        CG += np.asarray(spec.alpha)
    return C, CG


def money_capacity(eco: Economy) -> float:
    """Sum of money exponents for any family with a pure m^(eta-1) money factor."""
    C = 0.0
    for spec in eco.utilities:
        if isinstance(spec, (CobbDouglas, GoodsSubstitutes, GoodsComplements)):
            C += spec.eta
        elif isinstance(spec, BouchaudMeanField):
            C += 1.0 + spec.c * eco.mean_money() ** 2
        else:
            raise ValueError(f"money capacity undefined for {type(spec).__name__}")
    return C
