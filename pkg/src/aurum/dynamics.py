"""State-transition kernels and the simulation orchestrator.

Single-encounter operations mutate Economy objects in place (and return the
updated holdings); bulk simulation goes through `Simulation`, which wires
economies and contact links into the engine and executes a time-ordered
schedule of link switches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .economy import Economy, Holdings
from .engine import system as engine_system
from .engine.system import System
from .sampling import RandomSource

__all__ = [
    "UpdatePolicy",
    "ContactLink",
    "ExperimentReport",
    "Simulation",
    "exchange_encounter",
    "financial_encounter",
    "trader_encounter",
    "fractional_offer_encounter",
    "inject_flux",
]


@dataclass(frozen=True)
class UpdatePolicy:
    """How an encounter's sampled outcome is applied.

    fraction < 1 applies only that share of the change (the effective
    sub-agent trick; homogeneous utilities only).  offer fractions restrict
    the outcome to the box where agent i keeps at least (1-f_i) of each
    holding.  time_rescale stretches the clock by 1/fraction so trajectories
    stay comparable to the full-update dynamics.
    """

    fraction: float = 1.0
    offer_i: float = 1.0
    offer_j: float = 1.0
    time_rescale: bool = False
    mh_steps: int = 50
    proposal: str = "beta"
    no_give_both: bool = False

    def __post_init__(self):
        for name in ("fraction", "offer_i", "offer_j"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")


@dataclass
class ContactLink:
    """A coupling between two economies (or an economy and a trader)."""

    kind: str  # "trading" | "financial" | "trader"
    a: int
    b: int = -1  # unused for trader links
    rate: float = 1.0
    restore: str | None = None  # None | "a" | "b"
    fraction: float = 1.0
    mh_steps: int = 50
    proposal: str = "beta"
    price: float = 1.0
    good: int = 0
    active_from: float = 0.0


@dataclass
class ExperimentReport:
    """Recorded series, scalar estimates and audit sums for one seeded run."""

    name: str
    seed: int
    series: dict = field(default_factory=dict)  # name -> (times, values) arrays
    estimates: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)  # name -> bool
    audits: dict = field(default_factory=dict)

    def passed(self) -> bool:
        return all(self.checks.values())


# ---------------------------------------------------------------------------
# single-encounter operations


def _single_system(economies: list[Economy], rng: RandomSource) -> System:
    return System(economies, rng)


def exchange_encounter(
    eco: Economy,
    i: int,
    j: int,
    policy: UpdatePolicy | None,
    rng: RandomSource,
) -> tuple[Holdings, Holdings]:
    """Pool the two agents' money and goods and redistribute with density
    proportional to the product of their utilities, honouring the policy."""
    if i == j:
        raise ValueError("self-encounters are not allowed")
    policy = policy or UpdatePolicy()
    s = _single_system([eco], rng)
    if policy.offer_i < 1.0:
        s.state["offer"][i] = policy.offer_i
    if policy.offer_j < 1.0:
        s.state["offer"][j] = policy.offer_j
    b = s.add_intra_block(
        0,
        fraction=policy.fraction,
        mh_steps=policy.mh_steps,
        proposal=policy.proposal,
        no_give_both=policy.no_give_both,
    )
    s.encounter(b, i, j)
    s.push_back()
    return eco.holdings(i), eco.holdings(j)


def fractional_offer_encounter(
    eco: Economy,
    i: int,
    j: int,
    f_i: float,
    f_j: float,
    rng: RandomSource,
    mh_steps: int = 50,
) -> tuple[Holdings, Holdings]:
    """Exchange restricted to the offer box where each agent keeps at least
    (1 - f) of every holding."""
    return exchange_encounter(
        eco, i, j, UpdatePolicy(offer_i=f_i, offer_j=f_j, mh_steps=mh_steps), rng
    )


def financial_encounter(
    eco_a: Economy,
    a: int,
    eco_b: Economy,
    b: int,
    rng: RandomSource,
    fraction: float = 1.0,
    mh_steps: int = 50,
) -> tuple[Holdings, Holdings]:
    """Pool and redistribute money only; goods of both parties are unchanged."""
    s = _single_system([eco_a, eco_b], rng)
    blk = s.add_cross_block(0, 1, scope="money", fraction=fraction, mh_steps=mh_steps)
    s.encounter(blk, a, s.agent_index(1, b))
    s.push_back()
    return eco_a.holdings(a), eco_b.holdings(b)


def trader_encounter(
    eco: Economy,
    i: int,
    price: float,
    rng: RandomSource,
    good: int = 0,
    fraction: float = 1.0,
    mh_steps: int = 50,
) -> Holdings:
    """Resample agent i's (goods, money) along the budget line m + price*g."""
    s = _single_system([eco], rng)
    blk = s.add_trader_block(0, price=price, good=good, fraction=fraction, mh_steps=mh_steps)
    s.encounter(blk, i)
    s.push_back()
    return eco.holdings(i)


def inject_flux(
    eco: Economy,
    amounts: Sequence[float],
    rng: RandomSource,
) -> bool:
    """Apply one flux tick: add (money, goods...) to a uniformly random agent,
    redrawing on infeasible removals; returns False if every agent was
    infeasible and the tick was skipped."""
    amounts = np.asarray(amounts, dtype=float)
    n = eco.n_agents
    for _ in range(n):
        idx = int(rng.u01() * n)
        if idx >= n:
            idx = n - 1
        new_m = eco.money[idx] + amounts[0]
        new_g = eco.goods[idx] + amounts[1:]
        if new_m >= 0.0 and np.all(new_g >= 0.0):
            eco.money[idx] = new_m
            eco.goods[idx] = new_g
            return True
    return False


# ---------------------------------------------------------------------------
# simulation orchestrator


class Simulation:
    """Economies plus contact links with a link on/off schedule.

    The union encounter process runs on count-based time (1/K per encounter);
    schedule events switch links at the stated times.  Fully deterministic
    given the seed.
    """

    def __init__(self, economies: list[Economy], rng: RandomSource,
                 intra_mh_steps: int = 50, intra_fraction: float = 1.0,
                 intra_proposal: str = "beta"):
        self.system = System(economies, rng)
        self._intra_ids = []
        for e_idx in range(len(economies)):
            if economies[e_idx].n_agents > 1:
                self._intra_ids.append(
                    self.system.add_intra_block(
                        e_idx, fraction=intra_fraction, mh_steps=intra_mh_steps,
                        proposal=intra_proposal,
                    )
                )
        self._links: list[tuple[ContactLink, int]] = []
        self._events: list[tuple[float, int, bool]] = []

    def add_link(self, link: ContactLink) -> int:
        if link.kind == "trader":
            bid = self.system.add_trader_block(
                link.a, price=link.price, good=link.good, rate=link.rate,
                fraction=link.fraction, mh_steps=link.mh_steps, proposal=link.proposal,
                enabled=link.active_from <= 0.0,
            )
        else:
            scope = "trade" if link.kind == "trading" else "money"
            if link.kind not in ("trading", "financial"):
                raise ValueError(f"unknown link kind {link.kind!r}")
            bid = self.system.add_cross_block(
                link.a, link.b, scope=scope, rate=link.rate, restore=link.restore,
                fraction=link.fraction, mh_steps=link.mh_steps, proposal=link.proposal,
                enabled=link.active_from <= 0.0,
            )
        if link.active_from > 0.0:
            self._events.append((link.active_from, bid, True))
        self._links.append((link, bid))
        return bid

    def schedule(self, time: float, block_id: int, enabled: bool):
        self._events.append((time, block_id, enabled))

    def run(self, horizon: float, record_every: int = 1000, watch: tuple = (),
            snapshot_money: bool = False) -> dict:
        """Run to the given time horizon, honouring scheduled link switches."""
        sys_ = self.system
        events = sorted(e for e in self._events if e[0] > sys_.t)
        parts = []
        for t_ev, bid, on in events:
            if t_ev >= horizon:
                break
            self._run_until(t_ev, record_every, watch, snapshot_money, parts)
            sys_.set_enabled(bid, on)
        self._run_until(horizon, record_every, watch, snapshot_money, parts)
        return _merge_records(parts)

    def _run_until(self, t_end, record_every, watch, snapshot_money, parts):
        sys_ = self.system
        while sys_.t < t_end:
            sys_._ensure_prog()
            K = float(
                np.sum(sys_.prog["b_K"] * sys_.prog["b_enabled"].astype(float))
            )
            if K <= 0:
                break
            n = int(round((t_end - sys_.t) * K))
            if n <= 0:
                break
            res = sys_.run(n, record_every=record_every, watch=watch,
                           snapshot_money=snapshot_money)
            parts.append(res)
            if res.n_done < n:
                break


def _merge_records(parts) -> dict:
    if not parts:
        return {}
    out = {
        "times": np.concatenate([p.times for p in parts]),
        "econ_money": np.concatenate([p.econ_money for p in parts]),
        "econ_goods": np.concatenate([p.econ_goods for p in parts]),
        "watch_money": np.concatenate([p.watch_money for p in parts]),
    }
    if parts[0].money_snapshots is not None:
        out["money_snapshots"] = np.concatenate([p.money_snapshots for p in parts])
    return out
