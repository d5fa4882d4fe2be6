"""Shared runtime: packs economies and contact blocks into the flat arrays the
engine backends consume, and wraps engine calls with recording and stop logic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import economy as econ_mod
from ..economy import Economy, homogeneity_degree
from ..sampling import RandomSource
from . import backend

SEL_COMPLETE = 0
SEL_RING = 1
SEL_TABLE = 2
SEL_CROSS = 3
SEL_TRADER = 4

SCOPE_TRADE = 0
SCOPE_MONEY = 1
SCOPE_TRADER = 2

STOP_MAX = 0
STOP_BLOCK = 1
STOP_THRESHOLD = 2
STOP_SMA = 3
STOP_IDLE = 4

_INT_TOL = 1e-9


def _is_int(x: float) -> bool:
    return abs(x - round(x)) < _INT_TOL and round(x) >= 1


@dataclass
class RunResult:
    n_done: int
    t0: float
    t1: float
    stop_reason: int
    times: np.ndarray
    econ_money: np.ndarray
    econ_goods: np.ndarray
    watch_money: np.ndarray
    money_snapshots: np.ndarray | None
    block_counts: np.ndarray


class System:
    """A union of economies plus contact blocks, ready to simulate.

    Agents are laid out contiguously per economy, in the order the economies
    are passed.  Blocks are added with `add_*_block`; the union encounter rate
    is the sum over enabled blocks, and time advances by 1/K_total per
    encounter.
    """

    def __init__(self, economies: list[Economy], rng: RandomSource):
        if not economies:
            raise ValueError("need at least one economy")
        self.economies = economies
        self.rng = rng
        n_goods = max(e.n_goods for e in economies)
        if n_goods > 8:
            raise ValueError("engine supports at most 8 good types")
        n = sum(e.n_agents for e in economies)
        self.n_agents = n
        self.n_goods = n_goods

        money = np.zeros(n)
        goods = np.zeros((n, n_goods))
        ukind = np.zeros(n, dtype=np.int64)
        eta = np.zeros(n)
        alpha = np.ones((n, n_goods))
        up1 = np.zeros(n)
        offer = np.ones(n)
        eta_int = np.zeros(n, dtype=np.uint8)
        alpha_int = np.zeros(n, dtype=np.uint8)
        econ_of = np.zeros(n, dtype=np.int64)
        e_start = np.zeros(len(economies), dtype=np.int64)
        e_end = np.zeros(len(economies), dtype=np.int64)

        pos = 0
        for e_idx, eco in enumerate(economies):
            ne = eco.n_agents
            e_start[e_idx] = pos
            e_end[e_idx] = pos + ne
            money[pos : pos + ne] = eco.money
            if eco.n_goods:
                goods[pos : pos + ne, : eco.n_goods] = eco.goods
            econ_of[pos : pos + ne] = e_idx
            for a, spec in enumerate(eco.utilities):
                i = pos + a
                ukind[i] = econ_mod.kind_code(spec)
                if isinstance(spec, econ_mod.CobbDouglas):
                    eta[i] = spec.eta
                    alpha[i, : len(spec.alpha)] = spec.alpha
                    eta_int[i] = _is_int(spec.eta)
                    alpha_int[i] = all(_is_int(a_) for a_ in spec.alpha)
                elif isinstance(spec, (econ_mod.GoodsSubstitutes, econ_mod.GoodsComplements)):
                    eta[i] = spec.eta
                    alpha[i, 0] = spec.alpha
                    eta_int[i] = _is_int(spec.eta)
                elif isinstance(spec, econ_mod.LinearSubstitute):
                    eta[i] = spec.gamma
                    alpha[i, 0] = spec.a
                    up1[i] = spec.b
                elif isinstance(spec, econ_mod.MoneyGoodsComplement):
                    eta[i] = spec.gamma
                elif isinstance(spec, econ_mod.BouchaudMeanField):
                    eta[i] = 1.0  # effective exponent computed per encounter
                    up1[i] = spec.c
            pos += ne

        e_money = np.array([float(money[s:t].sum()) for s, t in zip(e_start, e_end)])
        e_goods = np.zeros((len(economies), n_goods))
        for e_idx in range(len(economies)):
            s, t = int(e_start[e_idx]), int(e_end[e_idx])
            e_goods[e_idx] = goods[s:t].sum(axis=0)

        self.state = {
            "money": money,
            "goods": goods,
            "ukind": ukind,
            "eta": eta,
            "alpha": alpha,
            "up1": up1,
            "offer": offer,
            "eta_int": eta_int,
            "alpha_int": alpha_int,
            "econ_of": econ_of,
            "e_start": e_start,
            "e_end": e_end,
            "e_money": e_money,
            "e_goods": e_goods,
            "e_maintain": np.full(len(economies), np.nan),
            "e_maint_added": np.zeros(len(economies)),
        }
        self._blocks: list[dict] = []
        self._tables: list = []
        self._fluxes: list[dict] = []
        self.prog: dict | None = None
        self.t = 0.0

    # -- block construction -------------------------------------------------

    def _check_homogeneous_fraction(self, econs, fraction):
        if fraction >= 1.0:
            return
        for e in econs:
            for spec in self.economies[e].utilities:
                if homogeneity_degree(spec) is None:
                    raise ValueError(
                        "partial-update fraction requires homogeneous utilities; "
                        f"{type(spec).__name__} is not"
                    )

    def add_intra_block(
        self,
        e_idx: int,
        rate: float = 1.0,
        fraction: float = 1.0,
        mh_steps: int = 50,
        proposal: str = "beta",
        window: float = 0.25,
        no_give_both: bool = False,
        enabled: bool = True,
    ) -> int:
        eco = self.economies[e_idx]
        if eco.matrix is None:
            raise ValueError("intra block needs an encounter matrix")
        self._check_homogeneous_fraction([e_idx], fraction)
        if no_give_both and self.n_goods != 1:
            raise ValueError("no-give-both restriction is defined for one good")
        mat = eco.matrix
        if mat.kind == "complete":
            sel, K, table = SEL_COMPLETE, mat.rate * eco.n_agents * (eco.n_agents - 1), None
        elif mat.kind == "ring":
            sel, K, table = SEL_RING, mat.rate * 2 * eco.n_agents, None
        else:
            cum = np.cumsum(mat.table.reshape(-1))
            sel, K, table = SEL_TABLE, float(cum[-1]), (cum, mat.table.reshape(-1).copy())
        return self._push_block(
            sel, SCOPE_TRADE, e_idx, e_idx, mat.rate, K, 0, fraction, mh_steps, proposal, window,
            0.0, 0, no_give_both, enabled, table,
        )

    def add_cross_block(
        self,
        e_a: int,
        e_b: int,
        scope: str = "trade",
        rate: float = 1.0,
        restore: str | None = None,
        fraction: float = 1.0,
        mh_steps: int = 50,
        proposal: str = "beta",
        window: float = 0.25,
        enabled: bool = True,
    ) -> int:
        if e_a == e_b:
            raise ValueError("cross block needs two distinct economies")
        scope_code = {"trade": SCOPE_TRADE, "money": SCOPE_MONEY}[scope]
        if scope == "trade" and self.economies[e_a].n_goods != self.economies[e_b].n_goods:
            raise ValueError("trading contact needs matching good counts")
        restore_code = {None: 0, "a": 1, "b": 2}[restore]
        self._check_homogeneous_fraction([e_a, e_b], fraction)
        na = self.economies[e_a].n_agents
        nb = self.economies[e_b].n_agents
        K = rate * 2 * na * nb
        return self._push_block(
            SEL_CROSS, scope_code, e_a, e_b, rate, K, restore_code, fraction, mh_steps,
            proposal, window, 0.0, 0, False, enabled, None,
        )

    def add_trader_block(
        self,
        e_idx: int,
        price: float,
        good: int = 0,
        rate: float = 1.0,
        fraction: float = 1.0,
        mh_steps: int = 50,
        proposal: str = "beta",
        window: float = 0.25,
        enabled: bool = True,
    ) -> int:
        if price <= 0:
            raise ValueError("trader price must be positive")
        if not 0 <= good < self.n_goods:
            raise ValueError("trader good index out of range")
        self._check_homogeneous_fraction([e_idx], fraction)
        K = rate * self.economies[e_idx].n_agents
        return self._push_block(
            SEL_TRADER, SCOPE_TRADER, e_idx, e_idx, rate, K, 0, fraction, mh_steps,
            proposal, window, price, good, False, enabled, None,
        )

    def _push_block(self, sel, scope, ea, eb, rate, K, restore, fraction, mh_steps,
                    proposal, window, price, good, ngb, enabled, table) -> int:
        if fraction <= 0 or fraction > 1:
            raise ValueError("update fraction must be in (0, 1]")
        pkind = {"beta": 0, "window": 1}[proposal]
        self._blocks.append(
            dict(sel=sel, scope=scope, ea=ea, eb=eb, rate=rate, K=K, restore=restore,
                 frac=fraction, mh=mh_steps, pkind=pkind, pw=window, price=price,
                 good=good, ngb=int(ngb), enabled=int(enabled))
        )
        self._tables.append(table)
        self.prog = None
        return len(self._blocks) - 1

    def add_flux(self, e_idx: int, money_per_tick: float, goods_per_tick=(), tick: float = 1e-6,
                 start_time: float | None = None) -> int:
        amt = np.zeros(1 + self.n_goods)
        amt[0] = money_per_tick
        gpt = np.atleast_1d(np.asarray(goods_per_tick, dtype=float))
        amt[1 : 1 + gpt.size] = gpt
        self._fluxes.append(dict(econ=e_idx, amt=amt, dt=tick,
                                 next=self.t + tick if start_time is None else start_time))
        self.prog = None
        return len(self._fluxes) - 1

    # -- packing -------------------------------------------------------------

    def _pack(self):
        nb = len(self._blocks)
        ng = self.n_goods
        prog = {
            "b_sel": np.array([b["sel"] for b in self._blocks], dtype=np.int64),
            "b_scope": np.array([b["scope"] for b in self._blocks], dtype=np.int64),
            "b_ea": np.array([b["ea"] for b in self._blocks], dtype=np.int64),
            "b_eb": np.array([b["eb"] for b in self._blocks], dtype=np.int64),
            "b_rate": np.array([b["rate"] for b in self._blocks], dtype=float),
            "b_K": np.array([b["K"] for b in self._blocks], dtype=float),
            "b_enabled": np.array([b["enabled"] for b in self._blocks], dtype=np.uint8),
            "b_restore": np.array([b["restore"] for b in self._blocks], dtype=np.int64),
            "b_frac": np.array([b["frac"] for b in self._blocks], dtype=float),
            "b_mh": np.array([b["mh"] for b in self._blocks], dtype=np.int64),
            "b_pkind": np.array([b["pkind"] for b in self._blocks], dtype=np.int64),
            "b_pw": np.array([b["pw"] for b in self._blocks], dtype=float),
            "b_price": np.array([b["price"] for b in self._blocks], dtype=float),
            "b_good": np.array([b["good"] for b in self._blocks], dtype=np.int64),
            "b_ngb": np.array([b["ngb"] for b in self._blocks], dtype=np.uint8),
            "b_table": list(self._tables),
            "b_count": np.zeros(nb, dtype=np.int64),
            "b_tr_money": np.zeros(nb),
            "b_tr_goods": np.zeros((nb, ng)),
            "fx_econ": np.array([f["econ"] for f in self._fluxes], dtype=np.int64),
            "fx_amt": (
                np.array([f["amt"] for f in self._fluxes], dtype=float).reshape(len(self._fluxes), 1 + ng)
            ),
            "fx_dt": np.array([f["dt"] for f in self._fluxes], dtype=float),
            "fx_next": np.array([f["next"] for f in self._fluxes], dtype=float),
            "fx_applied": np.zeros((len(self._fluxes), 1 + ng)),
            "fx_skips": np.zeros(len(self._fluxes), dtype=np.int64),
        }
        self.prog = prog

    def _ensure_prog(self):
        if self.prog is None:
            self._pack()

    # -- controls ------------------------------------------------------------

    def set_enabled(self, block_id: int, enabled: bool):
        self._blocks[block_id]["enabled"] = int(enabled)
        if self.prog is not None:
            self.prog["b_enabled"][block_id] = int(enabled)

    def set_price(self, block_id: int, price: float):
        if price <= 0:
            raise ValueError("trader price must be positive")
        self._blocks[block_id]["price"] = price
        if self.prog is not None:
            self.prog["b_price"][block_id] = price

    def set_fraction(self, block_id: int, fraction: float):
        if fraction <= 0 or fraction > 1:
            raise ValueError("update fraction must be in (0, 1]")
        self._blocks[block_id]["frac"] = fraction
        if self.prog is not None:
            self.prog["b_frac"][block_id] = fraction

    def set_maintain(self, e_idx: int, target: float | None):
        self.state["e_maintain"][e_idx] = np.nan if target is None else float(target)

    def maintenance_added(self, e_idx: int) -> float:
        return float(self.state["e_maint_added"][e_idx])

    def agent_index(self, e_idx: int, local: int) -> int:
        return int(self.state["e_start"][e_idx]) + local

    def econ_money(self, e_idx: int) -> float:
        s, t = int(self.state["e_start"][e_idx]), int(self.state["e_end"][e_idx])
        return float(self.state["money"][s:t].sum())

    def econ_goods(self, e_idx: int) -> np.ndarray:
        s, t = int(self.state["e_start"][e_idx]), int(self.state["e_end"][e_idx])
        return self.state["goods"][s:t].sum(axis=0)

    def money_slice(self, e_idx: int) -> np.ndarray:
        s, t = int(self.state["e_start"][e_idx]), int(self.state["e_end"][e_idx])
        return self.state["money"][s:t]

    def goods_slice(self, e_idx: int) -> np.ndarray:
        s, t = int(self.state["e_start"][e_idx]), int(self.state["e_end"][e_idx])
        return self.state["goods"][s:t]

    def total_money(self) -> float:
        return float(self.state["money"].sum())

    def trader_money(self) -> float:
        self._ensure_prog()
        return float(self.prog["b_tr_money"].sum())

    def conservation_residual(self) -> float:
        """Relative residual of the money audit: totals minus ledgered
        injections (maintenance, flux) plus trader takings, against t=0."""
        self._ensure_prog()
        current = self.total_money() + self.prog["b_tr_money"].sum()
        injected = self.state["e_maint_added"].sum() + self.prog["fx_applied"][:, 0].sum()
        if not hasattr(self, "_audit_base"):
            return 0.0
        scale = max(abs(self._audit_base), 1.0)
        return float((current - injected - self._audit_base) / scale)

    def start_audit(self):
        self._ensure_prog()
        self._audit_base = (
            self.total_money()
            + float(self.prog["b_tr_money"].sum())
            - float(self.state["e_maint_added"].sum())
            - float(self.prog["fx_applied"][:, 0].sum())
        )

    # -- run -----------------------------------------------------------------

    def run(
        self,
        max_encounters: int,
        record_every: int = 0,
        watch: tuple = (),
        snapshot_money: bool = False,
        stop_block: tuple[int, int] | None = None,
        stop_threshold: tuple | None = None,  # (e_idx, good_or_None, mode, value)
        stop_sma: tuple | None = None,  # (e_idx, window, mode, value)
        sma_state: dict | None = None,
        time_scale: float = 1.0,
    ) -> RunResult:
        """Advance the union process by up to `max_encounters` encounters."""
        self._ensure_prog()
        ne = len(self.economies)
        ng = self.n_goods
        max_records = (max_encounters // record_every + 1) if record_every > 0 else 0
        watch_idx = np.asarray(watch, dtype=np.int64)
        rec = {
            "rec_t": np.zeros(max_records),
            "rec_emoney": np.zeros((max_records, ne)),
            "rec_egoods": np.zeros((max_records, ne, ng)),
            "rec_watch": np.zeros((max_records, len(watch_idx))),
            "rec_snap": np.zeros((max_records, self.n_agents if snapshot_money else 0)),
        }
        if stop_block is not None:
            sb, sbn = stop_block
            sbn = int(self.prog["b_count"][sb]) + int(sbn)
        else:
            sb, sbn = -1, 0
        if stop_threshold is not None:
            te, tg, tm, tv = stop_threshold
            tg = -1 if tg is None else int(tg)
        else:
            te, tg, tm, tv = -1, -1, 0, 0.0
        if stop_sma is not None:
            se, swin, smode, sval = stop_sma
            if sma_state is None:
                sma_state = new_sma_state(swin)
            sma_buf = sma_state["buf"]
            sma_i = sma_state["i"]
            sma_f = sma_state["f"]
        else:
            se, swin, smode, sval = -1, 1, 0, 0.0
            sma_buf = np.zeros(1)
            sma_i = np.zeros(2, dtype=np.int64)
            sma_f = np.zeros(1)
        ctl = {
            "max_enc": int(max_encounters),
            "t0": self.t,
            "rec_every": int(record_every),
            "rec_pos": 0,
            "watch": watch_idx,
            "stop_block": sb,
            "stop_block_n": sbn,
            "thr_econ": te,
            "thr_good": tg,
            "thr_mode": tm,
            "thr_val": tv,
            "sma_econ": se,
            "sma_mode": smode,
            "sma_val": sval,
            "sma_buf": sma_buf,
            "sma_i": sma_i,
            "sma_f": sma_f,
            "time_scale": time_scale,
            **rec,
        }
        counts_before = self.prog["b_count"].copy()
        n_done, t_end, n_rec, reason = backend.run_program(self.state, self.prog, ctl, self.rng)
        self.t = t_end
        return RunResult(
            n_done=n_done,
            t0=ctl["t0"],
            t1=t_end,
            stop_reason=reason,
            times=rec["rec_t"][:n_rec],
            econ_money=rec["rec_emoney"][:n_rec],
            econ_goods=rec["rec_egoods"][:n_rec],
            watch_money=rec["rec_watch"][:n_rec],
            money_snapshots=rec["rec_snap"][:n_rec] if snapshot_money else None,
            block_counts=self.prog["b_count"] - counts_before,
        )

    def encounter(self, block_id: int, i: int, j: int = -1):
        """Force a single encounter on a block between given global agent indices."""
        self._ensure_prog()
        backend.encounter_once(self.state, self.prog, self.rng, block_id, i, j)

    # -- write-back ------------------------------------------------------------

    def push_back(self):
        """Copy engine state back into the Economy objects."""
        for e_idx, eco in enumerate(self.economies):
            s, t = int(self.state["e_start"][e_idx]), int(self.state["e_end"][e_idx])
            eco.money[:] = self.state["money"][s:t]
            if eco.n_goods:
                eco.goods[:] = self.state["goods"][s:t, : eco.n_goods]


def new_sma_state(window: int) -> dict:
    return {"buf": np.zeros(int(window)), "i": np.zeros(2, dtype=np.int64), "f": np.zeros(1)}
