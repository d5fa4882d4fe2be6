"""Pure-Python encounter engine: reference implementation of the hot loop.

The compiled backend (`_core.pyx`) mirrors this module function by function;
both consume the same uniform stream in the same order, so a fixed seed gives
bit-identical trajectories on either backend.  Keep any change here in
lockstep with the .pyx file.

Draw order per encounter (fixed contract):
  1 selection draw; then the kernel draws:
  - factorized trade:   money part first (direct Beta ints or 1-dim MH),
                        then goods part (direct Betas per good, or MH over
                        the active goods dims);
  - joint MH:           per step, proposals for goods dims ascending, then
                        money, then one acceptance draw;
  - every MH step consumes its proposal draws plus exactly one accept draw.
Utility densities evaluate to 0.0 at zero holdings with negative exponents
(the corner has measure zero); an MH chain sitting at density zero accepts
any proposal with positive density.
"""

from __future__ import annotations

import math

BACKEND = "python"

# utility kind codes (mirrors economy.py)
CD = 0
SUBST = 1
COMPL = 2
COMPL_SHIFT = 3
LINSUB = 4
MGCOMPL = 5
MEANFIELD = 6

# block selector codes
SEL_COMPLETE = 0
SEL_RING = 1
SEL_TABLE = 2
SEL_CROSS = 3
SEL_TRADER = 4

# block scope codes
SCOPE_TRADE = 0
SCOPE_MONEY = 1
SCOPE_TRADER = 2

# stop reasons
STOP_MAX = 0
STOP_BLOCK = 1
STOP_THRESHOLD = 2
STOP_SMA = 3
STOP_IDLE = 4

_MAX_PROP_SHAPE = 8


def _pow0(base: float, expo: float) -> float:
    if base <= 0.0:
        if base < 0.0:
            return 0.0
        return 1.0 if expo == 0.0 else 0.0
    # small integer exponents by repeated multiplication (identical chain in
    # the compiled backend; results may differ from pow() by an ulp but the
    # two backends stay bit-identical)
    n = int(expo)
    if expo == n and 0 <= n <= 8:
        r = 1.0
        for _ in range(n):
            r *= base
        return r
    return base**expo


def _std_gamma(gen, k: int) -> float:
    s = 0.0
    for _ in range(k):
        s -= math.log(1.0 - gen.random())
    return s


def _beta_int(gen, a: int, b: int) -> float:
    ga = _std_gamma(gen, a)
    gb = _std_gamma(gen, b)
    return ga / (ga + gb)


def _log_safe(m: float) -> float:
    """log for the economy log-money sums; zero-money agents contribute 0
    (their statistical weight is handled at the density level)."""
    return math.log(m) if m > 0.0 else 0.0


def _prop_shape(e: float) -> int:
    # floor(e + 0.5): C round() semantics, not Python banker's rounding
    k = int(math.floor(e + 0.5))
    if k < 1:
        return 1
    if k > _MAX_PROP_SHAPE:
        return _MAX_PROP_SHAPE
    return k


class Engine:
    """State + program holder for the reference backend."""

    def __init__(self, state, prog, rng):
        self.st = state
        self.pr = prog
        self.gen = rng.generator

    # -- utility evaluation ------------------------------------------------

    def _money_expo(self, i: int) -> float:
        st = self.st
        k = st["ukind"][i]
        if k == MEANFIELD:
            e = st["econ_of"][i]
            ne = st["e_end"][e] - st["e_start"][e]
            mb = st["e_money"][e] / ne
            return 1.0 + st["up1"][i] * mb * mb
        return float(st["eta"][i])

    def _goods_factor(self, i: int, gv) -> float:
        st = self.st
        k = st["ukind"][i]
        ng = len(gv)
        if k == CD:
            p = 1.0
            for t in range(ng):
                p *= _pow0(gv[t], float(st["alpha"][i, t]) - 1.0)
            return p
        if k == MEANFIELD:
            return 1.0
        a = float(st["alpha"][i, 0]) - 1.0
        if k == SUBST:
            s = 0.0
            for t in range(ng):
                s += gv[t]
            return _pow0(s, a)
        mn = gv[0]
        for t in range(1, ng):
            if gv[t] < mn:
                mn = gv[t]
        if k == COMPL:
            return _pow0(mn, a)
        return _pow0(1.0 + mn, a)  # COMPL_SHIFT

    def _ufull(self, i: int, m: float, gv) -> float:
        st = self.st
        k = st["ukind"][i]
        if k == LINSUB:
            base = float(st["alpha"][i, 0]) * gv[0] + float(st["up1"][i]) * m
            return _pow0(base, float(st["eta"][i]) - 1.0)
        if k == MGCOMPL:
            v = gv[0] if gv[0] < m else m
            return _pow0(v, float(st["eta"][i]) - 1.0)
        return _pow0(m, self._money_expo(i) - 1.0) * self._goods_factor(i, gv)

    # -- MH kernels ---------------------------------------------------------

    def _mh_money(self, i, j, pm, mlo, mhi, m0, steps, pkind, pw, ei, ej):
        """1-dim MH for the pooled-money split with factorized utilities."""
        gen = self.gen
        pa = _prop_shape(ei)
        pb = _prop_shape(ej)
        w = pw * pm
        x = m0
        rho_x = 0.0
        if mlo <= x <= mhi:
            rho_x = _pow0(x, ei - 1.0) * _pow0(pm - x, ej - 1.0)
        for _ in range(steps):
            if pkind == 0:
                xp = pm * _beta_int(gen, pa, pb)
                q_ratio = self._beta_q_ratio(x, xp, pm, pa, pb)
            else:
                xp = x + (2.0 * gen.random() - 1.0) * w
                q_ratio = 1.0
            rho_new = 0.0
            if mlo <= xp <= mhi and q_ratio >= 0.0:
                rho_new = _pow0(xp, ei - 1.0) * _pow0(pm - xp, ej - 1.0)
            u = gen.random()
            if u * rho_x < rho_new * q_ratio:
                x = xp
                rho_x = rho_new
        return x

    @staticmethod
    def _beta_q_ratio(x, xp, span, pa, pb):
        """q(x)/q(xp) for the scaled-Beta independence proposal."""
        qx = _pow0(x / span, pa - 1.0) * _pow0(1.0 - x / span, pb - 1.0)
        qp = _pow0(xp / span, pa - 1.0) * _pow0(1.0 - xp / span, pb - 1.0)
        if qp <= 0.0:
            return -1.0  # forces rejection
        return qx / qp

    def _mh_goods(self, i, j, pg, lo, hi, g0, steps, pkind, pw):
        """MH over the active goods dims with factorized goods densities."""
        gen = self.gen
        st = self.st
        ng = len(pg)
        active = [t for t in range(ng) if pg[t] > 0.0]
        if not active:
            return list(g0)
        x = list(g0)
        other = [pg[t] - x[t] for t in range(ng)]
        rho_x = 0.0
        if self._inbox(x, lo, hi, active):
            rho_x = self._goods_factor(i, x) * self._goods_factor(j, other)
        pa = [0] * ng
        pb = [0] * ng
        for t in active:
            pa[t] = _prop_shape(self._goods_expo(i, t))
            pb[t] = _prop_shape(self._goods_expo(j, t))
        xp = list(x)
        for _ in range(steps):
            q_ratio = 1.0
            for t in active:
                if pkind == 0:
                    y = pg[t] * _beta_int(gen, pa[t], pb[t])
                    r = self._beta_q_ratio(x[t], y, pg[t], pa[t], pb[t])
                    if r < 0.0:
                        q_ratio = -1.0
                    elif q_ratio >= 0.0:
                        q_ratio *= r
                    xp[t] = y
                else:
                    xp[t] = x[t] + (2.0 * gen.random() - 1.0) * pw * pg[t]
            rho_new = 0.0
            if q_ratio >= 0.0 and self._inbox(xp, lo, hi, active):
                for t in range(ng):
                    other[t] = pg[t] - xp[t]
                rho_new = self._goods_factor(i, xp) * self._goods_factor(j, other)
            u = gen.random()
            if u * rho_x < rho_new * q_ratio:
                for t in active:
                    x[t] = xp[t]
                rho_x = rho_new
        return x

    def _goods_expo(self, i, t):
        st = self.st
        k = st["ukind"][i]
        if k == CD:
            return float(st["alpha"][i, t])
        if k == MEANFIELD:
            return 1.0
        return float(st["alpha"][i, 0])

    @staticmethod
    def _inbox(x, lo, hi, active):
        for t in active:
            if x[t] < lo[t] or x[t] > hi[t]:
                return False
        return True

    def _mh_joint(self, i, j, pg, pm, glo, ghi, mlo, mhi, g0, m0, steps, pkind, pw, ngb, g0i, m0i):
        """Joint MH over goods dims plus money, for non-factorized utilities
        or the no-give-both support restriction."""
        gen = self.gen
        ng = len(pg)
        active = [t for t in range(ng) if pg[t] > 0.0]
        has_money = pm > 0.0
        if not active and not has_money:
            return list(g0), m0
        x = list(g0)
        xm = m0
        otherg = [pg[t] - x[t] for t in range(ng)]
        rho_x = self._joint_density(i, j, x, xm, pg, pm, glo, ghi, mlo, mhi, active, has_money, ngb, g0i, m0i, otherg)
        pa = [0] * ng
        pb = [0] * ng
        for t in active:
            pa[t] = _prop_shape(self._goods_expo(i, t))
            pb[t] = _prop_shape(self._goods_expo(j, t))
        pma = _prop_shape(float(self.st["eta"][i]))
        pmb = _prop_shape(float(self.st["eta"][j]))
        xp = list(x)
        for _ in range(steps):
            q_ratio = 1.0
            for t in active:
                if pkind == 0:
                    y = pg[t] * _beta_int(gen, pa[t], pb[t])
                    r = self._beta_q_ratio(x[t], y, pg[t], pa[t], pb[t])
                    if r < 0.0:
                        q_ratio = -1.0
                    elif q_ratio >= 0.0:
                        q_ratio *= r
                    xp[t] = y
                else:
                    xp[t] = x[t] + (2.0 * gen.random() - 1.0) * pw * pg[t]
            xmp = xm
            if has_money:
                if pkind == 0:
                    xmp = pm * _beta_int(gen, pma, pmb)
                    r = self._beta_q_ratio(xm, xmp, pm, pma, pmb)
                    if r < 0.0:
                        q_ratio = -1.0
                    elif q_ratio >= 0.0:
                        q_ratio *= r
                else:
                    xmp = xm + (2.0 * gen.random() - 1.0) * pw * pm
            rho_new = 0.0
            if q_ratio >= 0.0:
                rho_new = self._joint_density(
                    i, j, xp, xmp, pg, pm, glo, ghi, mlo, mhi, active, has_money, ngb, g0i, m0i, otherg
                )
            u = gen.random()
            if u * rho_x < rho_new * q_ratio:
                for t in active:
                    x[t] = xp[t]
                xm = xmp
                rho_x = rho_new
        return x, xm

    def _joint_density(self, i, j, gv, m, pg, pm, glo, ghi, mlo, mhi, active, has_money, ngb, g0i, m0i, scratch):
        for t in active:
            if gv[t] < glo[t] or gv[t] > ghi[t]:
                return 0.0
        if has_money and (m < mlo or m > mhi):
            return 0.0
        if ngb:
            # keep only outcomes where agent i does not give away both goods
            # and money: (all g <= g0 and m >= m0) or (all g >= g0 and m <= m0)
            sells = m >= m0i
            for t in active:
                if sells:
                    if gv[t] > g0i[t]:
                        return 0.0
                else:
                    if gv[t] < g0i[t]:
                        return 0.0
        for t in range(len(pg)):
            scratch[t] = pg[t] - gv[t]
        return self._ufull(i, m, gv) * self._ufull(j, pm - m, scratch)

    # -- encounter kernels ---------------------------------------------------

    def encounter_trade(self, b, i, j, money_only):
        st = self.st
        pr = self.pr
        money = st["money"]
        goods = st["goods"]
        ng = goods.shape[1]
        frac = float(pr["b_frac"][b])
        steps = int(pr["b_mh"][b])
        pkind = int(pr["b_pkind"][b])
        pw = float(pr["b_pw"][b])
        ngb = int(pr["b_ngb"][b]) and not money_only

        m0i = float(money[i])
        m0j = float(money[j])
        g0i = [float(goods[i, t]) for t in range(ng)]
        g0j = [float(goods[j, t]) for t in range(ng)]
        pm = m0i + m0j
        pg = [g0i[t] + g0j[t] for t in range(ng)]

        ki = int(st["ukind"][i])
        kj = int(st["ukind"][j])
        fact = ki not in (LINSUB, MGCOMPL) and kj not in (LINSUB, MGCOMPL)
        fi = float(st["offer"][i])
        fj = float(st["offer"][j])
        restricted = (fi < 1.0 or fj < 1.0) and not money_only

        if restricted:
            mlo = (1.0 - fi) * m0i
            mhi = m0i + fj * m0j
            glo = [(1.0 - fi) * g0i[t] for t in range(ng)]
            ghi = [g0i[t] + fj * g0j[t] for t in range(ng)]
        else:
            mlo = 0.0
            mhi = pm
            glo = [0.0] * ng
            ghi = list(pg)

        cross_mf = (ki == MEANFIELD or kj == MEANFIELD) and int(st["econ_of"][i]) != int(st["econ_of"][j])
        if fact and not ngb:
            ei = self._money_expo(i)
            ej = self._money_expo(j)
            if pm <= 0.0:
                mi_new = 0.0
            elif cross_mf:
                mi_new = self._mh_money_meanfield(i, j, pm, m0i, steps, pkind, pw)
            elif (
                not restricted
                and st["eta_int"][i]
                and st["eta_int"][j]
                and ki != MEANFIELD
                and kj != MEANFIELD
            ):
                mi_new = pm * _beta_int(self.gen, int(st["eta"][i]), int(st["eta"][j]))
            else:
                mi_new = self._mh_money(i, j, pm, mlo, mhi, m0i, steps, pkind, pw, ei, ej)
            if money_only or ng == 0:
                gi_new = g0i
            elif (
                not restricted
                and ki == CD
                and kj == CD
                and st["alpha_int"][i]
                and st["alpha_int"][j]
            ):
                gi_new = [
                    pg[t] * _beta_int(self.gen, int(st["alpha"][i, t]), int(st["alpha"][j, t]))
                    if pg[t] > 0.0
                    else 0.0
                    for t in range(ng)
                ]
            else:
                gi_new = self._mh_goods(i, j, pg, glo, ghi, g0i, steps, pkind, pw)
        elif money_only:
            # non-factorized financial contact: 1-dim joint MH with goods fixed
            gi_new = g0i
            if pm <= 0.0:
                mi_new = 0.0
            else:
                mi_new = self._mh_money_full(i, j, pm, m0i, g0i, g0j, steps, pkind, pw)
        else:
            gi_new, mi_new = self._mh_joint(
                i, j, pg, pm, glo, ghi, mlo, mhi, g0i, m0i, steps, pkind, pw, ngb, g0i, m0i
            )

        mi_fin = m0i + frac * (mi_new - m0i)
        money[i] = mi_fin
        money[j] = pm - mi_fin
        if not money_only:
            for t in range(ng):
                gfin = g0i[t] + frac * (gi_new[t] - g0i[t])
                goods[i, t] = gfin
                goods[j, t] = pg[t] - gfin

        self._apply_restore_and_totals(b, i, j, m0i, m0j, g0i, g0j)

    def _mf_side(self, i):
        """(L_rest, M_rest, n_e, c) for a mean-field agent's economy, with the
        agent's own contribution removed."""
        st = self.st
        e = int(st["econ_of"][i])
        ne = int(st["e_end"][e]) - int(st["e_start"][e])
        m0 = float(st["money"][i])
        L_rest = float(st["e_logmoney"][e]) - _log_safe(m0)
        M_rest = float(st["e_money"][e]) - m0
        return L_rest, M_rest, ne, float(st["up1"][i])

    def _mf_logw(self, m, L_rest, M_rest, ne, c):
        """Log statistical weight of a mean-field economy when one agent holds m:
        every agent carries the exponent eta(mbar) - 1, so the whole-economy
        log-money sum enters."""
        if m <= 0.0:
            return -math.inf
        mbar = (M_rest + m) / ne
        eta = 1.0 + c * mbar * mbar
        return (eta - 1.0) * (L_rest + math.log(m))

    def _mh_money_meanfield(self, i, j, pm, m0, steps, pkind, pw):
        """Cross-economy money MH where at least one side is mean-field.

        Moving money across the boundary changes that economy's mean and with
        it every member's exponent; the acceptance ratio runs in log space
        over the full economy weights."""
        st = self.st
        mf_i = int(st["ukind"][i]) == MEANFIELD
        mf_j = int(st["ukind"][j]) == MEANFIELD
        side_i = self._mf_side(i) if mf_i else None
        side_j = self._mf_side(j) if mf_j else None
        ei = self._money_expo(i)
        ej = self._money_expo(j)

        def logw(m):
            if m < 0.0 or m > pm:
                return -math.inf
            if mf_i:
                wi = self._mf_logw(m, *side_i)
            else:
                wi = (ei - 1.0) * math.log(m) if m > 0.0 else (0.0 if ei == 1.0 else -math.inf)
            r = pm - m
            if mf_j:
                wj = self._mf_logw(r, *side_j)
            else:
                wj = (ej - 1.0) * math.log(r) if r > 0.0 else (0.0 if ej == 1.0 else -math.inf)
            return wi + wj

        gen = self.gen
        pa = _prop_shape(ei)
        pb = _prop_shape(ej)
        w = pw * pm
        x = m0
        lw_x = logw(x)
        for _ in range(steps):
            if pkind == 0:
                xp = pm * _beta_int(gen, pa, pb)
                q_ratio = self._beta_q_ratio(x, xp, pm, pa, pb)
            else:
                xp = x + (2.0 * gen.random() - 1.0) * w
                q_ratio = 1.0
            lw_new = logw(xp) if q_ratio >= 0.0 else -math.inf
            u = gen.random()
            # log-space accept: u < exp(lw_new - lw_x) * q_ratio
            if lw_new == -math.inf or q_ratio <= 0.0:
                accept = False
            elif lw_x == -math.inf:
                accept = True
            else:
                d = lw_new - lw_x
                if d > 700.0:
                    d = 700.0
                accept = u < q_ratio * math.exp(d)
            if accept:
                x = xp
                lw_x = lw_new
        return x

    def _mh_money_full(self, i, j, pm, m0, g0i, g0j, steps, pkind, pw):
        """1-dim money MH with full utilities (non-factorized kinds), goods fixed."""
        gen = self.gen
        pa = _prop_shape(float(self.st["eta"][i]))
        pb = _prop_shape(float(self.st["eta"][j]))
        w = pw * pm
        x = m0
        rho_x = self._ufull(i, x, g0i) * self._ufull(j, pm - x, g0j)
        for _ in range(steps):
            if pkind == 0:
                xp = pm * _beta_int(gen, pa, pb)
                q_ratio = self._beta_q_ratio(x, xp, pm, pa, pb)
            else:
                xp = x + (2.0 * gen.random() - 1.0) * w
                q_ratio = 1.0
            rho_new = 0.0
            if 0.0 <= xp <= pm and q_ratio >= 0.0:
                rho_new = self._ufull(i, xp, g0i) * self._ufull(j, pm - xp, g0j)
            u = gen.random()
            if u * rho_x < rho_new * q_ratio:
                x = xp
                rho_x = rho_new
        return x

    def encounter_trader(self, b, i):
        st = self.st
        pr = self.pr
        money = st["money"]
        goods = st["goods"]
        ng = goods.shape[1]
        mu = float(pr["b_price"][b])
        tg = int(pr["b_good"][b])
        frac = float(pr["b_frac"][b])
        m0 = float(money[i])
        g0 = float(goods[i, tg])
        w = m0 + mu * g0
        if w <= 0.0:
            return
        gmax = w / mu
        ki = int(st["ukind"][i])
        if ki == CD and st["alpha_int"][i] and st["eta_int"][i]:
            g_new = gmax * _beta_int(self.gen, int(st["alpha"][i, tg]), int(st["eta"][i]))
        else:
            g_new = self._mh_trader(b, i, mu, tg, w, gmax, g0)
        g_fin = g0 + frac * (g_new - g0)
        m_fin = w - mu * g_fin
        money[i] = m_fin
        goods[i, tg] = g_fin
        pr["b_tr_money"][b] += m0 - m_fin
        pr["b_tr_goods"][b, tg] += g0 - g_fin
        e = int(st["econ_of"][i])
        st["e_money"][e] += m_fin - m0
        st["e_goods"][e, tg] += g_fin - g0
        self._maintain(e)

    def _mh_trader(self, b, i, mu, tg, w, gmax, g0):
        st = self.st
        pr = self.pr
        gen = self.gen
        steps = int(pr["b_mh"][b])
        pkind = int(pr["b_pkind"][b])
        pw = float(pr["b_pw"][b])
        ng = st["goods"].shape[1]
        gv = [float(st["goods"][i, t]) for t in range(ng)]
        pa = _prop_shape(self._goods_expo(i, tg))
        pb = _prop_shape(self._money_expo(i))
        x = g0
        gv[tg] = x
        rho_x = self._ufull(i, w - mu * x, gv)
        for _ in range(steps):
            if pkind == 0:
                xp = gmax * _beta_int(gen, pa, pb)
                q_ratio = self._beta_q_ratio(x, xp, gmax, pa, pb)
            else:
                xp = x + (2.0 * gen.random() - 1.0) * pw * gmax
                q_ratio = 1.0
            rho_new = 0.0
            if 0.0 <= xp <= gmax and q_ratio >= 0.0:
                gv[tg] = xp
                rho_new = self._ufull(i, w - mu * xp, gv)
            u = gen.random()
            if u * rho_x < rho_new * q_ratio:
                x = xp
                rho_x = rho_new
        return x

    def _apply_restore_and_totals(self, b, i, j, m0i, m0j, g0i, g0j):
        st = self.st
        pr = self.pr
        money = st["money"]
        goods = st["goods"]
        ng = goods.shape[1]
        restore = int(pr["b_restore"][b])
        if restore:
            prot_econ = int(pr["b_ea"][b]) if restore == 1 else int(pr["b_eb"][b])
            if int(st["econ_of"][i]) == prot_econ:
                money[i] = m0i
                for t in range(ng):
                    goods[i, t] = g0i[t]
            if int(st["econ_of"][j]) == prot_econ:
                money[j] = m0j
                for t in range(ng):
                    goods[j, t] = g0j[t]
        ei = int(st["econ_of"][i])
        ej = int(st["econ_of"][j])
        st["e_money"][ei] += float(money[i]) - m0i
        st["e_money"][ej] += float(money[j]) - m0j
        if st["e_mf"][ei]:
            st["e_logmoney"][ei] += _log_safe(float(money[i])) - _log_safe(m0i)
        if st["e_mf"][ej]:
            st["e_logmoney"][ej] += _log_safe(float(money[j])) - _log_safe(m0j)
        for t in range(ng):
            st["e_goods"][ei, t] += float(goods[i, t]) - g0i[t]
            st["e_goods"][ej, t] += float(goods[j, t]) - g0j[t]
        self._maintain(ei)
        if ej != ei:
            self._maintain(ej)

    def _maintain(self, e):
        st = self.st
        target = float(st["e_maintain"][e])
        if math.isnan(target):
            return
        if st["e_money"][e] == target:
            return
        s = int(st["e_start"][e])
        t = int(st["e_end"][e])
        money = st["money"]
        total = 0.0
        for a in range(s, t):
            total += float(money[a])
        if total <= 0.0:
            return
        factor = target / total
        for a in range(s, t):
            money[a] = float(money[a]) * factor
        st["e_maint_added"][e] += target - total
        st["e_money"][e] = target
        if st["e_mf"][e]:
            acc = 0.0
            for a in range(s, t):
                acc += _log_safe(float(money[a]))
            st["e_logmoney"][e] = acc

    # -- flux ---------------------------------------------------------------

    def apply_flux(self, f):
        st = self.st
        pr = self.pr
        e = int(pr["fx_econ"][f])
        s = int(st["e_start"][e])
        ne = int(st["e_end"][e]) - s
        ng = st["goods"].shape[1]
        amt = pr["fx_amt"]
        money = st["money"]
        goods = st["goods"]
        for _attempt in range(ne):
            idx = int(self.gen.random() * ne)
            if idx >= ne:
                idx = ne - 1
            a = s + idx
            ok = float(money[a]) + float(amt[f, 0]) >= 0.0
            if ok:
                for t in range(ng):
                    if float(goods[a, t]) + float(amt[f, 1 + t]) < 0.0:
                        ok = False
                        break
            if ok:
                m_old = float(money[a])
                money[a] = m_old + float(amt[f, 0])
                st["e_money"][e] += float(amt[f, 0])
                if st["e_mf"][e]:
                    st["e_logmoney"][e] += _log_safe(float(money[a])) - _log_safe(m_old)
                pr["fx_applied"][f, 0] += float(amt[f, 0])
                for t in range(ng):
                    goods[a, t] = float(goods[a, t]) + float(amt[f, 1 + t])
                    st["e_goods"][e, t] += float(amt[f, 1 + t])
                    pr["fx_applied"][f, 1 + t] += float(amt[f, 1 + t])
                return
        pr["fx_skips"][f] += 1

    # -- selection ------------------------------------------------------------

    def select(self, cumK, Ktot):
        pr = self.pr
        st = self.st
        r = self.gen.random()
        x = r * Ktot
        nb = len(pr["b_sel"])
        b = -1
        for k in range(nb):
            if pr["b_enabled"][k] and x < cumK[k]:
                b = k
                break
        if b < 0:
            for k in range(nb - 1, -1, -1):
                if pr["b_enabled"][k]:
                    b = k
                    break
        blo = cumK[b] - pr["b_K"][b]
        u_in = (x - blo) / pr["b_K"][b]
        if u_in < 0.0:
            u_in = 0.0
        sel = int(pr["b_sel"][b])
        ea = int(pr["b_ea"][b])
        sa = int(st["e_start"][ea])
        na = int(st["e_end"][ea]) - sa
        if sel == SEL_COMPLETE:
            npairs = na * (na - 1)
            idx = int(u_in * npairs)
            if idx >= npairs:
                idx = npairs - 1
            ii = idx // (na - 1)
            rem = idx % (na - 1)
            jj = rem + 1 if rem >= ii else rem
            return b, sa + ii, sa + jj
        if sel == SEL_RING:
            npairs = 2 * na
            idx = int(u_in * npairs)
            if idx >= npairs:
                idx = npairs - 1
            ii = idx // 2
            a1 = (ii - 1) % na
            a2 = (ii + 1) % na
            lo, hi = (a1, a2) if a1 < a2 else (a2, a1)
            jj = lo if idx % 2 == 0 else hi
            return b, sa + ii, sa + jj
        if sel == SEL_TABLE:
            cum, rates = pr["b_table"][b]
            x2 = u_in * cum[-1]
            # first index with cum[idx] >= x2
            lo = 0
            hi = len(cum)
            while lo < hi:
                mid = (lo + hi) // 2
                if cum[mid] < x2:
                    lo = mid + 1
                else:
                    hi = mid
            p = lo
            if p >= len(cum):
                p = len(cum) - 1
            if rates[p] == 0.0:
                q = p + 1
                while q < len(rates) and rates[q] == 0.0:
                    q += 1
                if q < len(rates):
                    p = q
                else:
                    while p > 0 and rates[p] == 0.0:
                        p -= 1
            return b, sa + p // na, sa + p % na
        if sel == SEL_CROSS:
            eb = int(pr["b_eb"][b])
            sb = int(st["e_start"][eb])
            nbn = int(st["e_end"][eb]) - sb
            npairs = na * nbn
            idx = int(u_in * npairs)
            if idx >= npairs:
                idx = npairs - 1
            return b, sa + idx // nbn, sb + idx % nbn
        # trader
        idx = int(u_in * na)
        if idx >= na:
            idx = na - 1
        return b, sa + idx, -1


def encounter_once(state, prog, rng, b, i, j):
    """Run exactly one forced encounter of block b between agents i and j."""
    eng = Engine(state, prog, rng)
    scope = int(prog["b_scope"][b])
    if scope == SCOPE_TRADER:
        eng.encounter_trader(b, i)
    else:
        eng.encounter_trade(b, i, j, scope == SCOPE_MONEY)
    prog["b_count"][b] += 1


def run_program(state, prog, ctl, rng):
    """Main loop: returns (n_done, t_end, records_written, stop_reason)."""
    eng = Engine(state, prog, rng)
    st = state
    pr = prog

    # resync economy totals from the agent arrays (incremental drift guard)
    n_econ = len(st["e_start"])
    ng = st["goods"].shape[1]
    for e in range(n_econ):
        s, t_ = int(st["e_start"][e]), int(st["e_end"][e])
        st["e_money"][e] = float(st["money"][s:t_].sum())
        for t in range(ng):
            st["e_goods"][e, t] = float(st["goods"][s:t_, t].sum())
        if st["e_mf"][e]:
            acc = 0.0
            for a in range(s, t_):
                acc += _log_safe(float(st["money"][a]))
            st["e_logmoney"][e] = acc

    cumK = []
    acc = 0.0
    nb = len(pr["b_sel"])
    for k in range(nb):
        if pr["b_enabled"][k]:
            acc += float(pr["b_K"][k])
        cumK.append(acc)
    Ktot = acc

    t = float(ctl["t0"])
    max_enc = int(ctl["max_enc"])
    rec_every = int(ctl["rec_every"])
    rec_pos = int(ctl["rec_pos"])
    rec_cap = len(ctl["rec_t"]) if rec_every > 0 else 0
    watch = ctl["watch"]
    snap = ctl["rec_snap"]
    want_snap = snap.shape[1] > 0 if rec_every > 0 else False
    time_scale = float(ctl.get("time_scale", 1.0))

    stop_block = int(ctl["stop_block"])
    stop_block_n = int(ctl["stop_block_n"])
    thr_econ = int(ctl["thr_econ"])
    thr_good = int(ctl["thr_good"])
    thr_mode = int(ctl["thr_mode"])
    thr_val = float(ctl["thr_val"])
    sma_econ = int(ctl["sma_econ"])
    sma_mode = int(ctl["sma_mode"])
    sma_val = float(ctl["sma_val"])
    sma_buf = ctl["sma_buf"]
    sma_win = len(sma_buf) if sma_econ >= 0 else 0
    sma_i = ctl["sma_i"]  # [pos, filled] int64
    sma_f = ctl["sma_f"]  # [runsum] float64

    n_flux = len(pr["fx_econ"])
    dt = time_scale / Ktot if Ktot > 0.0 else 0.0
    stop_reason = STOP_MAX
    n = 0
    while n < max_enc:
        for f in range(n_flux):
            while pr["fx_next"][f] <= t:
                eng.apply_flux(f)
                pr["fx_next"][f] += pr["fx_dt"][f]
        if Ktot <= 0.0:
            stop_reason = STOP_IDLE
            break
        b, i, j = eng.select(cumK, Ktot)
        scope = int(pr["b_scope"][b])
        if scope == SCOPE_TRADER:
            eng.encounter_trader(b, i)
        else:
            eng.encounter_trade(b, i, j, scope == SCOPE_MONEY)
        pr["b_count"][b] += 1
        n += 1
        t += dt
        if rec_every > 0 and n % rec_every == 0 and rec_pos < rec_cap:
            ctl["rec_t"][rec_pos] = t
            for e in range(n_econ):
                ctl["rec_emoney"][rec_pos, e] = st["e_money"][e]
                for tt in range(ng):
                    ctl["rec_egoods"][rec_pos, e, tt] = st["e_goods"][e, tt]
            for wdx in range(len(watch)):
                ctl["rec_watch"][rec_pos, wdx] = st["money"][watch[wdx]]
            if want_snap:
                for a in range(snap.shape[1]):
                    snap[rec_pos, a] = st["money"][a]
            rec_pos += 1
        if stop_block >= 0 and pr["b_count"][stop_block] >= stop_block_n:
            stop_reason = STOP_BLOCK
            break
        if thr_econ >= 0:
            v = st["e_money"][thr_econ] if thr_good < 0 else st["e_goods"][thr_econ, thr_good]
            if (thr_mode > 0 and v >= thr_val) or (thr_mode < 0 and v <= thr_val):
                stop_reason = STOP_THRESHOLD
                break
        if sma_econ >= 0:
            v = float(st["e_money"][sma_econ])
            pos = int(sma_i[0])
            if int(sma_i[1]) >= sma_win:
                sma_f[0] -= sma_buf[pos]
            sma_buf[pos] = v
            sma_f[0] += v
            sma_i[0] = (pos + 1) % sma_win
            if int(sma_i[1]) < sma_win:
                sma_i[1] += 1
            if int(sma_i[1]) >= sma_win:
                mean = sma_f[0] / sma_win
                if (sma_mode > 0 and mean >= sma_val) or (sma_mode < 0 and mean <= sma_val):
                    stop_reason = STOP_SMA
                    break
    return n, t, rec_pos - int(ctl["rec_pos"]), stop_reason
