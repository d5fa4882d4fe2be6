"""Observables and measurement protocols: closed-form CD formulas, the
attached-meter protocol, distribution diagnostics (KS/KR), subset-variance
predictions and entropy tracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .economy import (
    CobbDouglas,
    Economy,
    capacities,
)
from .engine.system import System
from .sampling import RandomSource

__all__ = [
    "cd_temperature",
    "cd_price",
    "cd_value",
    "cd_entropy",
    "reference_money_marginal",
    "ks_statistic",
    "kr_distance",
    "SeriesStats",
    "subset_variance_predictions",
    "subset_variance",
    "MeterConfig",
    "MeterReading",
    "attach_meter",
    "MeterRig",
    "entropy_path",
    "max_entropy_split",
]


# ---------------------------------------------------------------------------
# closed-form CD observables


def cd_temperature(M: float, C: float) -> float:
    """T = M / C for a CD economy with money capacity C."""
    if C <= 0:
        raise ValueError("money capacity must be positive")
    return M / C


def cd_price(M: float, G: float, C: float, C_G: float) -> float:
    """Market price mu = C_G * M / (C * G)."""
    if G <= 0:
        raise ValueError("price undefined at zero goods")
    if C <= 0:
        raise ValueError("money capacity must be positive")
    return C_G * M / (C * G)


def cd_value(G: float, C_G: float) -> float:
    """Value nu = C_G / G: entropy derivative with respect to the good."""
    if G <= 0:
        raise ValueError("value undefined at zero goods")
    return C_G / G


def cd_entropy(M: float, G, C: float, C_G) -> float:
    """Entropy S = sum_t C_G[t] log G[t] + C log M of a CD economy."""
    G = np.atleast_1d(np.asarray(G, dtype=float))
    C_G = np.atleast_1d(np.asarray(C_G, dtype=float))
    if M <= 0 or np.any(G <= 0):
        raise ValueError("entropy undefined at zero holdings")
    return float(np.sum(C_G * np.log(G)) + C * math.log(M))


def max_entropy_split(
    M: float, G, C1: float, CG1, C2: float, CG2
) -> tuple[float, np.ndarray]:
    """Analytic maximiser of S_1 + S_2 over transfers of money and goods
    between two CD economies: equal temperatures and equal values."""
    G = np.atleast_1d(np.asarray(G, dtype=float))
    CG1 = np.atleast_1d(np.asarray(CG1, dtype=float))
    CG2 = np.atleast_1d(np.asarray(CG2, dtype=float))
    M1 = C1 * M / (C1 + C2)
    G1 = CG1 * G / (CG1 + CG2)
    return M1, G1


# ---------------------------------------------------------------------------
# distribution diagnostics


def reference_money_marginal(N: int, M: float, eta: float, mode: str = "beta"):
    """Stationary one-agent money CDF for a homogeneous CD economy.

    "beta": exact Beta(eta, (N-1)eta) scaled to [0, M]; "gamma": the large-N
    Gamma approximation with shape eta and mean M/N.
    """
    if N < 2:
        raise ValueError("need at least two agents")
    if mode == "beta":
        dist = sps.beta(eta, (N - 1) * eta, scale=M)
    elif mode == "gamma":
        dist = sps.gamma(eta, scale=M / (N * eta))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return dist.cdf


def ks_statistic(sample, ref_cdf) -> float:
    """sup |F_emp - F_ref| over the real line (evaluated at the jumps)."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    f = np.asarray(ref_cdf(x), dtype=float)
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(np.abs(f - grid)), np.max(np.abs(f - (grid - 1.0 / n)))))


def kr_distance(sample, ref_cdf, grid_points: int = 1000) -> float:
    """integral of |F_emp - F_ref| over the data range, trapezoid rule on the
    union of the empirical jump points and a uniform grid."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    uni = np.linspace(x[0], x[-1], grid_points)
    grid = np.union1d(x, uni)
    femp = np.searchsorted(x, grid, side="right") / n
    fref = np.asarray(ref_cdf(grid), dtype=float)
    return float(np.trapezoid(np.abs(femp - fref), grid))


@dataclass
class SeriesStats:
    """Running mean and variance (Welford)."""

    count: int = 0
    mean: float = 0.0
    _m2: float = 0.0

    def push(self, x: float):
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self._m2 += d * (x - self.mean)

    @property
    def variance(self) -> float:
        return self._m2 / self.count if self.count else 0.0


# ---------------------------------------------------------------------------
# subset variance


def subset_variance_predictions(C_S: float, C: float, M: float) -> tuple[float, float]:
    """(approximate, exact) predictions for Var of the money held by a subset
    with capacity C_S: C_S T^2, and M^2 C_S (C - C_S) / (C^2 (C + 1))."""
    T = M / C
    approx = C_S * T * T
    exact = M * M * C_S * (C - C_S) / (C * C * (C + 1.0))
    return approx, exact


def subset_variance(
    eco: Economy,
    subset,
    n_samples: int,
    rng: RandomSource,
    spacing: int | None = None,
    mh_steps: int = 50,
) -> dict:
    """Empirical Var of the subset's money over decorrelated samples, plus
    the approximate and exact predictions.

    Samples are spaced one sweep (N(N-1)/2 encounters) apart by default; the
    variance is normalised by n, not n-1.
    """
    subset = list(subset)
    if not subset:
        raise ValueError("empty subset")
    s = System([eco], rng)
    s.add_intra_block(0, mh_steps=mh_steps)
    n = eco.n_agents
    spacing = spacing if spacing is not None else n * (n - 1) // 2
    s.run(10 * spacing)  # burn-in
    vals = np.empty(n_samples)
    money = s.money_slice(0)
    idx = np.asarray(subset, dtype=int)
    for k in range(n_samples):
        s.run(spacing)
        vals[k] = money[idx].sum()
    C, _ = capacities(eco)
    C_S = sum(eco.utilities[i].eta for i in subset)
    approx, exact = subset_variance_predictions(C_S, C, eco.total_money)
    emp = float(np.mean((vals - vals.mean()) ** 2))
    return {
        "empirical": emp,
        "approximate": approx,
        "exact": exact,
        "C_S": C_S,
        "samples": vals,
    }


# ---------------------------------------------------------------------------
# CD meters


@dataclass
class MeterConfig:
    """An attached homogeneous CD economy used as a measuring instrument.

    The meter couples to the target through a cross block (trading or
    money-only) with the target side restored after every encounter, so the
    target's statistics are not disturbed.  The decaying step schedule speeds
    up initial equilibration; readings are taken at `record_fraction` (full
    updates by default: small-fraction readings bias min-form utilities) in
    `cycles` chunks of `record_count` meter trades, averaged per chunk.
    """

    n_agents: int = 20
    alpha: float = 3.0
    eta: float = 3.0
    scope: str = "trade"  # "trade" (money and goods) or "money" (temperature only)
    rate: float = 25.0
    restore: bool = True
    mh_steps: int = 8
    target_mh_steps: int = 8
    schedule: tuple = ((1.0, 50000), (0.4, 40000), (0.16, 40000), (0.064, 40000), (0.0256, 40000))
    record_fraction: float = 1.0
    record_count: int = 100000
    cycles: int = 100
    warm_target: int = 0
    target_intra: bool = True


@dataclass
class MeterReading:
    T: float
    beta: float
    mu: np.ndarray
    nu: np.ndarray
    se_T: float
    se_nu: np.ndarray
    chunks: np.ndarray  # per-chunk readings, columns (T, nu_1..nu_k)

    def summary(self) -> dict:
        return {
            "T": self.T,
            "beta": self.beta,
            "mu": self.mu.tolist(),
            "nu": self.nu.tolist(),
            "se_T": self.se_T,
            "se_nu": self.se_nu.tolist(),
        }


class MeterRig:
    """A meter wired into an existing System (used standalone by attach_meter
    and composed by the response-matrix and flux experiments)."""

    def __init__(self, sys_: System, target_idx: int, meter_idx: int, cfg: MeterConfig, block_id: int):
        self.sys = sys_
        self.target_idx = target_idx
        self.meter_idx = meter_idx
        self.cfg = cfg
        self.block = block_id

    def trade_scale(self) -> float:
        """Union encounters per meter trade at the current enabled set."""
        self.sys._ensure_prog()
        prog = self.sys.prog
        total = float(np.sum(prog["b_K"] * prog["b_enabled"].astype(float)))
        own = float(prog["b_K"][self.block])
        return total / own

    def equilibrate(self):
        """Run the decaying step schedule (meter trades counted)."""
        scale = self.trade_scale()
        for fracv, length in self.cfg.schedule:
            self.sys.set_fraction(self.block, fracv)
            self.sys.run(int(length * scale))
        self.sys.set_fraction(self.block, self.cfg.record_fraction)

    def read(self, cycles: int | None = None, record_count: int | None = None) -> MeterReading:
        """Chunked time-averaged readings of the meter's totals."""
        cfg = self.cfg
        cycles = cycles if cycles is not None else cfg.cycles
        record_count = record_count if record_count is not None else cfg.record_count
        scale = self.trade_scale()
        stride = max(1, int(scale))
        C = cfg.n_agents * cfg.eta
        CG = cfg.n_agents * cfg.alpha
        ng = self.sys.economies[self.meter_idx].n_goods
        rows = []
        for _ in range(cycles):
            res = self.sys.run(int(record_count * scale), record_every=stride)
            mM = float(res.econ_money[:, self.meter_idx].mean())
            row = [mM / C]
            if ng and cfg.scope == "trade":
                mG = res.econ_goods[:, self.meter_idx, :ng].mean(axis=0)
                row.extend(CG / mG)
            rows.append(row)
        chunks = np.array(rows)
        means = chunks.mean(axis=0)
        sems = chunks.std(axis=0) / math.sqrt(cycles)
        T = float(means[0])
        nu = means[1:]
        mu = nu * T
        return MeterReading(
            T=T, beta=1.0 / T, mu=mu, nu=nu,
            se_T=float(sems[0]), se_nu=sems[1:], chunks=chunks,
        )


def _meter_economy(cfg: MeterConfig, n_goods: int) -> Economy:
    alpha = (cfg.alpha,) * n_goods if (n_goods and cfg.scope == "trade") else ()
    spec = CobbDouglas(alpha, cfg.eta)
    goods_tot = (float(cfg.n_agents),) * len(alpha)
    return Economy.homogeneous(cfg.n_agents, spec, float(cfg.n_agents), goods_tot, label="meter")


def attach_meter(target: Economy, cfg: MeterConfig, rng: RandomSource) -> MeterReading:
    """Measure (T, mu, nu) of a target economy with an attached CD meter.

    Builds a two-economy system, equilibrates the coupled pair through the
    step schedule, then returns chunk-averaged readings via the CD formulas.
    """
    if cfg.scope == "trade" and target.n_goods == 0:
        raise ValueError("trading meter needs a target with goods")
    meter = _meter_economy(cfg, target.n_goods)
    s = System([target, meter], rng)
    if cfg.target_intra and target.n_agents > 1:
        s.add_intra_block(0, mh_steps=cfg.target_mh_steps)
    bx = s.add_cross_block(
        1, 0, scope=cfg.scope, rate=cfg.rate,
        restore="b" if cfg.restore else None, mh_steps=cfg.mh_steps,
    )
    rig = MeterRig(s, 0, 1, cfg, bx)
    if cfg.warm_target:
        s.set_enabled(bx, False)
        s.run(cfg.warm_target)
        s.set_enabled(bx, True)
    rig.equilibrate()
    reading = rig.read()
    s.push_back()  # meter mode leaves the target bit-identical; push back anyway
    return reading


# ---------------------------------------------------------------------------
# entropy along trade paths


def entropy_path(times, M1, G1, M: float, G, C1: float, CG1, C2: float, CG2) -> dict:
    """Entropies of two CD economies along a recorded (M1, G1) path.

    Returns per-sample S1, S2 and S_total plus the analytic maximum-entropy
    split for the conserved totals.
    """
    M1 = np.asarray(M1, dtype=float)
    G1 = np.asarray(G1, dtype=float)
    if G1.ndim == 1:
        G1 = G1[:, None]
    G = np.atleast_1d(np.asarray(G, dtype=float))
    CG1 = np.atleast_1d(np.asarray(CG1, dtype=float))
    CG2 = np.atleast_1d(np.asarray(CG2, dtype=float))
    M2 = M - M1
    G2 = G[None, :] - G1
    eps = 0.0
    if np.any(M1 <= 0) or np.any(M2 <= 0) or np.any(G1 <= 0) or np.any(G2 <= 0):
        raise ValueError("entropy path hit a zero holding")
    S1 = (CG1[None, :] * np.log(G1)).sum(axis=1) + C1 * np.log(M1)
    S2 = (CG2[None, :] * np.log(G2)).sum(axis=1) + C2 * np.log(M2)
    M1_star, G1_star = max_entropy_split(M, G, C1, CG1, C2, CG2)
    S_star = cd_entropy(M1_star, G1_star, C1, CG1) + cd_entropy(M - M1_star, G - G1_star, C2, CG2)
    return {
        "times": np.asarray(times, dtype=float),
        "S1": S1,
        "S2": S2,
        "S_total": S1 + S2,
        "max_entropy_point": (M1_star, G1_star),
        "S_max": S_star,
    }
