# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled encounter engine.

Function-by-function mirror of `_core_py.py`; both backends must consume the
uniform stream in the same order and perform the same float arithmetic (the
extension is built with -ffp-contract=off for that reason).  See the fallback
module for the draw-order contract.  Keep the two files in lockstep.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport INFINITY, exp, floor, isnan, log, pow
from libc.stdint cimport int64_t

from numpy.random cimport bitgen_t

import numpy as np

BACKEND = "cython"

cdef enum:
    CD = 0
    SUBST = 1
    COMPL = 2
    COMPL_SHIFT = 3
    LINSUB = 4
    MGCOMPL = 5
    MEANFIELD = 6

cdef enum:
    SEL_COMPLETE = 0
    SEL_RING = 1
    SEL_TABLE = 2
    SEL_CROSS = 3
    SEL_TRADER = 4

cdef enum:
    SCOPE_TRADE = 0
    SCOPE_MONEY = 1
    SCOPE_TRADER = 2

cdef enum:
    STOP_MAX = 0
    STOP_BLOCK = 1
    STOP_THRESHOLD = 2
    STOP_SMA = 3
    STOP_IDLE = 4

DEF MAXG = 8
cdef int _MAX_PROP_SHAPE = 8


cdef inline double _pow0(double base, double expo) nogil:
    cdef int n, k
    cdef double r
    if base <= 0.0:
        if base < 0.0:
            return 0.0
        return 1.0 if expo == 0.0 else 0.0
    # small integer exponents by repeated multiplication (mirrors _core_py)
    n = <int>expo
    if expo == n and 0 <= n <= 8:
        r = 1.0
        for k in range(n):
            r *= base
        return r
    return pow(base, expo)


cdef inline int _prop_shape(double e) nogil:
    cdef int k = <int>floor(e + 0.5)
    if k < 1:
        return 1
    if k > _MAX_PROP_SHAPE:
        return _MAX_PROP_SHAPE
    return k


cdef inline double _log_safe(double m) nogil:
    # zero-money agents contribute 0 to the economy log-money sums
    return log(m) if m > 0.0 else 0.0


cdef class Engine:
    cdef double[::1] money, eta, up1, offer, e_money, e_maintain, e_maint_added, e_logmoney
    cdef double[:, ::1] goods, alpha, e_goods
    cdef int64_t[::1] ukind, econ_of, e_start, e_end
    cdef unsigned char[::1] eta_int, alpha_int, e_mf
    cdef int64_t[::1] b_sel, b_scope, b_ea, b_eb, b_restore, b_mh, b_pkind, b_good, b_count
    cdef double[::1] b_rate, b_K, b_frac, b_pw, b_price, b_tr_money
    cdef unsigned char[::1] b_enabled, b_ngb
    cdef double[:, ::1] b_tr_goods
    cdef list b_table
    cdef int64_t[::1] fx_econ, fx_skips
    cdef double[::1] fx_dt, fx_next
    cdef double[:, ::1] fx_amt, fx_applied
    cdef bitgen_t *bg
    cdef object _keepalive
    cdef int ng

    def __init__(self, state, prog, rng):
        self.money = state["money"]
        self.goods = state["goods"]
        self.ukind = state["ukind"]
        self.eta = state["eta"]
        self.alpha = state["alpha"]
        self.up1 = state["up1"]
        self.offer = state["offer"]
        self.eta_int = state["eta_int"]
        self.alpha_int = state["alpha_int"]
        self.econ_of = state["econ_of"]
        self.e_start = state["e_start"]
        self.e_end = state["e_end"]
        self.e_money = state["e_money"]
        self.e_goods = state["e_goods"]
        self.e_maintain = state["e_maintain"]
        self.e_maint_added = state["e_maint_added"]
        self.e_logmoney = state["e_logmoney"]
        self.e_mf = state["e_mf"]
        self.b_sel = prog["b_sel"]
        self.b_scope = prog["b_scope"]
        self.b_ea = prog["b_ea"]
        self.b_eb = prog["b_eb"]
        self.b_rate = prog["b_rate"]
        self.b_K = prog["b_K"]
        self.b_enabled = prog["b_enabled"]
        self.b_restore = prog["b_restore"]
        self.b_frac = prog["b_frac"]
        self.b_mh = prog["b_mh"]
        self.b_pkind = prog["b_pkind"]
        self.b_pw = prog["b_pw"]
        self.b_price = prog["b_price"]
        self.b_good = prog["b_good"]
        self.b_ngb = prog["b_ngb"]
        self.b_table = prog["b_table"]
        self.b_count = prog["b_count"]
        self.b_tr_money = prog["b_tr_money"]
        self.b_tr_goods = prog["b_tr_goods"]
        self.fx_econ = prog["fx_econ"]
        self.fx_amt = prog["fx_amt"]
        self.fx_dt = prog["fx_dt"]
        self.fx_next = prog["fx_next"]
        self.fx_applied = prog["fx_applied"]
        self.fx_skips = prog["fx_skips"]
        self._keepalive = rng.bit_generator
        capsule = self._keepalive.capsule
        self.bg = <bitgen_t *>PyCapsule_GetPointer(capsule, "BitGenerator")
        self.ng = self.goods.shape[1]

    # -- draws ---------------------------------------------------------------

    cdef inline double _u01(self) nogil:
        return self.bg.next_double(self.bg.state)

    cdef inline double _std_gamma(self, int k) nogil:
        cdef double s = 0.0
        cdef int idx
        for idx in range(k):
            s -= log(1.0 - self._u01())
        return s

    cdef inline double _beta_int(self, int a, int b) nogil:
        cdef double ga = self._std_gamma(a)
        cdef double gb = self._std_gamma(b)
        return ga / (ga + gb)

    # -- utility evaluation ---------------------------------------------------

    cdef inline double _money_expo(self, Py_ssize_t i) nogil:
        cdef int64_t e
        cdef double mb
        if self.ukind[i] == MEANFIELD:
            e = self.econ_of[i]
            mb = self.e_money[e] / (self.e_end[e] - self.e_start[e])
            return 1.0 + self.up1[i] * mb * mb
        return self.eta[i]

    cdef double _goods_factor(self, Py_ssize_t i, double *gv) nogil:
        cdef int64_t k = self.ukind[i]
        cdef int ng = self.ng
        cdef double p, s, mn, a
        cdef int t
        if k == CD:
            p = 1.0
            for t in range(ng):
                p *= _pow0(gv[t], self.alpha[i, t] - 1.0)
            return p
        if k == MEANFIELD:
            return 1.0
        a = self.alpha[i, 0] - 1.0
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

    cdef double _ufull(self, Py_ssize_t i, double m, double *gv) nogil:
        cdef int64_t k = self.ukind[i]
        cdef double base, v
        if k == LINSUB:
            base = self.alpha[i, 0] * gv[0] + self.up1[i] * m
            return _pow0(base, self.eta[i] - 1.0)
        if k == MGCOMPL:
            v = gv[0] if gv[0] < m else m
            return _pow0(v, self.eta[i] - 1.0)
        return _pow0(m, self._money_expo(i) - 1.0) * self._goods_factor(i, gv)

    cdef inline double _goods_expo(self, Py_ssize_t i, int t) nogil:
        cdef int64_t k = self.ukind[i]
        if k == CD:
            return self.alpha[i, t]
        if k == MEANFIELD:
            return 1.0
        return self.alpha[i, 0]

    # -- MH helpers -------------------------------------------------------------

    cdef inline double _beta_q_ratio(self, double x, double xp, double span, int pa, int pb) nogil:
        cdef double qx = _pow0(x / span, pa - 1.0) * _pow0(1.0 - x / span, pb - 1.0)
        cdef double qp = _pow0(xp / span, pa - 1.0) * _pow0(1.0 - xp / span, pb - 1.0)
        if qp <= 0.0:
            return -1.0
        return qx / qp

    cdef double _mh_money(self, Py_ssize_t i, Py_ssize_t j, double pm, double mlo, double mhi,
                          double m0, int steps, int pkind, double pw, double ei, double ej) nogil:
        cdef int pa = _prop_shape(ei)
        cdef int pb = _prop_shape(ej)
        cdef double w = pw * pm
        cdef double x = m0
        cdef double rho_x = 0.0
        cdef double xp, q_ratio, rho_new, u
        cdef int s
        if mlo <= x <= mhi:
            rho_x = _pow0(x, ei - 1.0) * _pow0(pm - x, ej - 1.0)
        for s in range(steps):
            if pkind == 0:
                xp = pm * self._beta_int(pa, pb)
                q_ratio = self._beta_q_ratio(x, xp, pm, pa, pb)
            else:
                xp = x + (2.0 * self._u01() - 1.0) * w
                q_ratio = 1.0
            rho_new = 0.0
            if mlo <= xp <= mhi and q_ratio >= 0.0:
                rho_new = _pow0(xp, ei - 1.0) * _pow0(pm - xp, ej - 1.0)
            u = self._u01()
            if u * rho_x < rho_new * q_ratio:
                x = xp
                rho_x = rho_new
        return x

    cdef inline bint _inbox(self, double *x, double *lo, double *hi, int *active, int nact) nogil:
        cdef int a, t
        for a in range(nact):
            t = active[a]
            if x[t] < lo[t] or x[t] > hi[t]:
                return 0
        return 1

    cdef void _mh_goods(self, Py_ssize_t i, Py_ssize_t j, double *pg, double *lo, double *hi,
                        double *g0, int steps, int pkind, double pw, double *out) nogil:
        cdef int ng = self.ng
        cdef int active[MAXG]
        cdef int pa[MAXG]
        cdef int pb[MAXG]
        cdef double x[MAXG]
        cdef double xp[MAXG]
        cdef double other[MAXG]
        cdef int nact = 0
        cdef int t, a, s
        cdef double rho_x, rho_new, q_ratio, u, y, r
        for t in range(ng):
            x[t] = g0[t]
            xp[t] = g0[t]
            out[t] = g0[t]
            if pg[t] > 0.0:
                active[nact] = t
                nact += 1
        if nact == 0:
            return
        for t in range(ng):
            other[t] = pg[t] - x[t]
        rho_x = 0.0
        if self._inbox(x, lo, hi, active, nact):
            rho_x = self._goods_factor(i, x) * self._goods_factor(j, other)
        for a in range(nact):
            t = active[a]
            pa[t] = _prop_shape(self._goods_expo(i, t))
            pb[t] = _prop_shape(self._goods_expo(j, t))
        for s in range(steps):
            q_ratio = 1.0
            for a in range(nact):
                t = active[a]
                if pkind == 0:
                    y = pg[t] * self._beta_int(pa[t], pb[t])
                    r = self._beta_q_ratio(x[t], y, pg[t], pa[t], pb[t])
                    if r < 0.0:
                        q_ratio = -1.0
                    elif q_ratio >= 0.0:
                        q_ratio *= r
                    xp[t] = y
                else:
                    xp[t] = x[t] + (2.0 * self._u01() - 1.0) * pw * pg[t]
            rho_new = 0.0
            if q_ratio >= 0.0 and self._inbox(xp, lo, hi, active, nact):
                for t in range(ng):
                    other[t] = pg[t] - xp[t]
                rho_new = self._goods_factor(i, xp) * self._goods_factor(j, other)
            u = self._u01()
            if u * rho_x < rho_new * q_ratio:
                for a in range(nact):
                    t = active[a]
                    x[t] = xp[t]
                rho_x = rho_new
        for t in range(ng):
            out[t] = x[t]

    cdef double _joint_density(self, Py_ssize_t i, Py_ssize_t j, double *gv, double m,
                               double *pg, double pm, double *glo, double *ghi,
                               double mlo, double mhi, int *active, int nact,
                               bint has_money, bint ngb, double *g0i, double m0i,
                               double *scratch) nogil:
        cdef int a, t
        cdef bint sells
        for a in range(nact):
            t = active[a]
            if gv[t] < glo[t] or gv[t] > ghi[t]:
                return 0.0
        if has_money and (m < mlo or m > mhi):
            return 0.0
        if ngb:
            sells = m >= m0i
            for a in range(nact):
                t = active[a]
                if sells:
                    if gv[t] > g0i[t]:
                        return 0.0
                else:
                    if gv[t] < g0i[t]:
                        return 0.0
        for t in range(self.ng):
            scratch[t] = pg[t] - gv[t]
        return self._ufull(i, m, gv) * self._ufull(j, pm - m, scratch)

    cdef double _mh_joint(self, Py_ssize_t i, Py_ssize_t j, double *pg, double pm,
                          double *glo, double *ghi, double mlo, double mhi,
                          double *g0, double m0, int steps, int pkind, double pw,
                          bint ngb, double *g0i, double m0i, double *outg) nogil:
        cdef int ng = self.ng
        cdef int active[MAXG]
        cdef int pa[MAXG]
        cdef int pb[MAXG]
        cdef double x[MAXG]
        cdef double xp[MAXG]
        cdef double otherg[MAXG]
        cdef int nact = 0
        cdef int t, a, s
        cdef bint has_money = pm > 0.0
        cdef double xm, xmp, rho_x, rho_new, q_ratio, u, y, r
        cdef int pma, pmb
        for t in range(ng):
            x[t] = g0[t]
            xp[t] = g0[t]
            outg[t] = g0[t]
            if pg[t] > 0.0:
                active[nact] = t
                nact += 1
        if nact == 0 and not has_money:
            return m0
        xm = m0
        for t in range(ng):
            otherg[t] = pg[t] - x[t]
        rho_x = self._joint_density(i, j, x, xm, pg, pm, glo, ghi, mlo, mhi,
                                    active, nact, has_money, ngb, g0i, m0i, otherg)
        for a in range(nact):
            t = active[a]
            pa[t] = _prop_shape(self._goods_expo(i, t))
            pb[t] = _prop_shape(self._goods_expo(j, t))
        pma = _prop_shape(self.eta[i])
        pmb = _prop_shape(self.eta[j])
        for s in range(steps):
            q_ratio = 1.0
            for a in range(nact):
                t = active[a]
                if pkind == 0:
                    y = pg[t] * self._beta_int(pa[t], pb[t])
                    r = self._beta_q_ratio(x[t], y, pg[t], pa[t], pb[t])
                    if r < 0.0:
                        q_ratio = -1.0
                    elif q_ratio >= 0.0:
                        q_ratio *= r
                    xp[t] = y
                else:
                    xp[t] = x[t] + (2.0 * self._u01() - 1.0) * pw * pg[t]
            xmp = xm
            if has_money:
                if pkind == 0:
                    xmp = pm * self._beta_int(pma, pmb)
                    r = self._beta_q_ratio(xm, xmp, pm, pma, pmb)
                    if r < 0.0:
                        q_ratio = -1.0
                    elif q_ratio >= 0.0:
                        q_ratio *= r
                else:
                    xmp = xm + (2.0 * self._u01() - 1.0) * pw * pm
            rho_new = 0.0
            if q_ratio >= 0.0:
                rho_new = self._joint_density(i, j, xp, xmp, pg, pm, glo, ghi, mlo, mhi,
                                              active, nact, has_money, ngb, g0i, m0i, otherg)
            u = self._u01()
            if u * rho_x < rho_new * q_ratio:
                for a in range(nact):
                    t = active[a]
                    x[t] = xp[t]
                xm = xmp
                rho_x = rho_new
        for t in range(ng):
            outg[t] = x[t]
        return xm

    cdef void _mf_side(self, Py_ssize_t i, double *out) nogil:
        # out: L_rest, M_rest, n_e, c (agent's own contribution removed)
        cdef int64_t e = self.econ_of[i]
        cdef double m0 = self.money[i]
        out[0] = self.e_logmoney[e] - _log_safe(m0)
        out[1] = self.e_money[e] - m0
        out[2] = <double>(self.e_end[e] - self.e_start[e])
        out[3] = self.up1[i]

    cdef inline double _mf_logw(self, double m, double L_rest, double M_rest,
                                double ne, double c) nogil:
        cdef double mbar, eta
        if m <= 0.0:
            return -INFINITY
        mbar = (M_rest + m) / ne
        eta = 1.0 + c * mbar * mbar
        return (eta - 1.0) * (L_rest + log(m))

    cdef inline double _money_side_logw(self, double m, bint mf, double *side, double e_fix) nogil:
        if mf:
            return self._mf_logw(m, side[0], side[1], side[2], side[3])
        if m > 0.0:
            return (e_fix - 1.0) * log(m)
        return 0.0 if e_fix == 1.0 else -INFINITY

    cdef double _mh_money_meanfield(self, Py_ssize_t i, Py_ssize_t j, double pm,
                                    double m0, int steps, int pkind, double pw) nogil:
        cdef bint mf_i = self.ukind[i] == MEANFIELD
        cdef bint mf_j = self.ukind[j] == MEANFIELD
        cdef double side_i[4]
        cdef double side_j[4]
        if mf_i:
            self._mf_side(i, side_i)
        if mf_j:
            self._mf_side(j, side_j)
        cdef double ei = self._money_expo(i)
        cdef double ej = self._money_expo(j)
        cdef int pa = _prop_shape(ei)
        cdef int pb = _prop_shape(ej)
        cdef double w = pw * pm
        cdef double x = m0
        cdef double lw_x, lw_new, xp, q_ratio, u, d
        cdef bint accept
        cdef int s
        lw_x = self._money_side_logw(x, mf_i, side_i, ei) + self._money_side_logw(pm - x, mf_j, side_j, ej)
        if x < 0.0 or x > pm:
            lw_x = -INFINITY
        for s in range(steps):
            if pkind == 0:
                xp = pm * self._beta_int(pa, pb)
                q_ratio = self._beta_q_ratio(x, xp, pm, pa, pb)
            else:
                xp = x + (2.0 * self._u01() - 1.0) * w
                q_ratio = 1.0
            if q_ratio >= 0.0 and 0.0 <= xp <= pm:
                lw_new = self._money_side_logw(xp, mf_i, side_i, ei) + self._money_side_logw(pm - xp, mf_j, side_j, ej)
            else:
                lw_new = -INFINITY
            u = self._u01()
            if lw_new == -INFINITY or q_ratio <= 0.0:
                accept = 0
            elif lw_x == -INFINITY:
                accept = 1
            else:
                d = lw_new - lw_x
                if d > 700.0:
                    d = 700.0
                accept = u < q_ratio * exp(d)
            if accept:
                x = xp
                lw_x = lw_new
        return x

    cdef double _mh_money_full(self, Py_ssize_t i, Py_ssize_t j, double pm, double m0,
                               double *g0i, double *g0j, int steps, int pkind, double pw) nogil:
        cdef int pa = _prop_shape(self.eta[i])
        cdef int pb = _prop_shape(self.eta[j])
        cdef double w = pw * pm
        cdef double x = m0
        cdef double rho_x = self._ufull(i, x, g0i) * self._ufull(j, pm - x, g0j)
        cdef double xp, q_ratio, rho_new, u
        cdef int s
        for s in range(steps):
            if pkind == 0:
                xp = pm * self._beta_int(pa, pb)
                q_ratio = self._beta_q_ratio(x, xp, pm, pa, pb)
            else:
                xp = x + (2.0 * self._u01() - 1.0) * w
                q_ratio = 1.0
            rho_new = 0.0
            if 0.0 <= xp <= pm and q_ratio >= 0.0:
                rho_new = self._ufull(i, xp, g0i) * self._ufull(j, pm - xp, g0j)
            u = self._u01()
            if u * rho_x < rho_new * q_ratio:
                x = xp
                rho_x = rho_new
        return x

    # -- encounter kernels -------------------------------------------------------

    cdef void encounter_trade(self, Py_ssize_t b, Py_ssize_t i, Py_ssize_t j, bint money_only) nogil:
        cdef int ng = self.ng
        cdef double frac = self.b_frac[b]
        cdef int steps = <int>self.b_mh[b]
        cdef int pkind = <int>self.b_pkind[b]
        cdef double pw = self.b_pw[b]
        cdef bint ngb = self.b_ngb[b] and not money_only

        cdef double m0i = self.money[i]
        cdef double m0j = self.money[j]
        cdef double g0i[MAXG]
        cdef double g0j[MAXG]
        cdef double pg[MAXG]
        cdef double glo[MAXG]
        cdef double ghi[MAXG]
        cdef double gi_new[MAXG]
        cdef int t
        for t in range(ng):
            g0i[t] = self.goods[i, t]
            g0j[t] = self.goods[j, t]
            pg[t] = g0i[t] + g0j[t]
            gi_new[t] = g0i[t]
        cdef double pm = m0i + m0j

        cdef int64_t ki = self.ukind[i]
        cdef int64_t kj = self.ukind[j]
        cdef bint fact = (ki != LINSUB and ki != MGCOMPL and kj != LINSUB and kj != MGCOMPL)
        cdef double fi = self.offer[i]
        cdef double fj = self.offer[j]
        cdef bint restricted = (fi < 1.0 or fj < 1.0) and not money_only

        cdef double mlo, mhi
        if restricted:
            mlo = (1.0 - fi) * m0i
            mhi = m0i + fj * m0j
            for t in range(ng):
                glo[t] = (1.0 - fi) * g0i[t]
                ghi[t] = g0i[t] + fj * g0j[t]
        else:
            mlo = 0.0
            mhi = pm
            for t in range(ng):
                glo[t] = 0.0
                ghi[t] = pg[t]

        cdef bint cross_mf = (ki == MEANFIELD or kj == MEANFIELD) and self.econ_of[i] != self.econ_of[j]
        cdef double ei, ej, mi_new, mi_fin, gfin
        if fact and not ngb:
            ei = self._money_expo(i)
            ej = self._money_expo(j)
            if pm <= 0.0:
                mi_new = 0.0
            elif cross_mf:
                mi_new = self._mh_money_meanfield(i, j, pm, m0i, steps, pkind, pw)
            elif (not restricted and self.eta_int[i] and self.eta_int[j]
                  and ki != MEANFIELD and kj != MEANFIELD):
                mi_new = pm * self._beta_int(<int>self.eta[i], <int>self.eta[j])
            else:
                mi_new = self._mh_money(i, j, pm, mlo, mhi, m0i, steps, pkind, pw, ei, ej)
            if money_only or ng == 0:
                pass
            elif (not restricted and ki == CD and kj == CD
                  and self.alpha_int[i] and self.alpha_int[j]):
                for t in range(ng):
                    if pg[t] > 0.0:
                        gi_new[t] = pg[t] * self._beta_int(<int>self.alpha[i, t], <int>self.alpha[j, t])
                    else:
                        gi_new[t] = 0.0
            else:
                self._mh_goods(i, j, pg, glo, ghi, g0i, steps, pkind, pw, gi_new)
        elif money_only:
            if pm <= 0.0:
                mi_new = 0.0
            else:
                mi_new = self._mh_money_full(i, j, pm, m0i, g0i, g0j, steps, pkind, pw)
        else:
            mi_new = self._mh_joint(i, j, pg, pm, glo, ghi, mlo, mhi, g0i, m0i,
                                    steps, pkind, pw, ngb, g0i, m0i, gi_new)

        mi_fin = m0i + frac * (mi_new - m0i)
        self.money[i] = mi_fin
        self.money[j] = pm - mi_fin
        if not money_only:
            for t in range(ng):
                gfin = g0i[t] + frac * (gi_new[t] - g0i[t])
                self.goods[i, t] = gfin
                self.goods[j, t] = pg[t] - gfin

        self._apply_restore_and_totals(b, i, j, m0i, m0j, g0i, g0j)

    cdef void encounter_trader(self, Py_ssize_t b, Py_ssize_t i) nogil:
        cdef int ng = self.ng
        cdef double mu = self.b_price[b]
        cdef int tg = <int>self.b_good[b]
        cdef double frac = self.b_frac[b]
        cdef double m0 = self.money[i]
        cdef double g0 = self.goods[i, tg]
        cdef double w = m0 + mu * g0
        if w <= 0.0:
            return
        cdef double gmax = w / mu
        cdef int64_t ki = self.ukind[i]
        cdef double g_new, g_fin, m_fin
        if ki == CD and self.alpha_int[i] and self.eta_int[i]:
            g_new = gmax * self._beta_int(<int>self.alpha[i, tg], <int>self.eta[i])
        else:
            g_new = self._mh_trader(b, i, mu, tg, w, gmax, g0)
        g_fin = g0 + frac * (g_new - g0)
        m_fin = w - mu * g_fin
        self.money[i] = m_fin
        self.goods[i, tg] = g_fin
        self.b_tr_money[b] += m0 - m_fin
        self.b_tr_goods[b, tg] += g0 - g_fin
        cdef int64_t e = self.econ_of[i]
        self.e_money[e] += m_fin - m0
        self.e_goods[e, tg] += g_fin - g0
        self._maintain(e)

    cdef double _mh_trader(self, Py_ssize_t b, Py_ssize_t i, double mu, int tg,
                           double w, double gmax, double g0) nogil:
        cdef int steps = <int>self.b_mh[b]
        cdef int pkind = <int>self.b_pkind[b]
        cdef double pw = self.b_pw[b]
        cdef int ng = self.ng
        cdef double gv[MAXG]
        cdef int t
        for t in range(ng):
            gv[t] = self.goods[i, t]
        cdef int pa = _prop_shape(self._goods_expo(i, tg))
        cdef int pb = _prop_shape(self._money_expo(i))
        cdef double x = g0
        gv[tg] = x
        cdef double rho_x = self._ufull(i, w - mu * x, gv)
        cdef double xp, q_ratio, rho_new, u
        cdef int s
        for s in range(steps):
            if pkind == 0:
                xp = gmax * self._beta_int(pa, pb)
                q_ratio = self._beta_q_ratio(x, xp, gmax, pa, pb)
            else:
                xp = x + (2.0 * self._u01() - 1.0) * pw * gmax
                q_ratio = 1.0
            rho_new = 0.0
            if 0.0 <= xp <= gmax and q_ratio >= 0.0:
                gv[tg] = xp
                rho_new = self._ufull(i, w - mu * xp, gv)
            u = self._u01()
            if u * rho_x < rho_new * q_ratio:
                x = xp
                rho_x = rho_new
        return x

    cdef void _apply_restore_and_totals(self, Py_ssize_t b, Py_ssize_t i, Py_ssize_t j,
                                        double m0i, double m0j, double *g0i, double *g0j) nogil:
        cdef int ng = self.ng
        cdef int64_t restore = self.b_restore[b]
        cdef int64_t prot_econ
        cdef int t
        if restore:
            prot_econ = self.b_ea[b] if restore == 1 else self.b_eb[b]
            if self.econ_of[i] == prot_econ:
                self.money[i] = m0i
                for t in range(ng):
                    self.goods[i, t] = g0i[t]
            if self.econ_of[j] == prot_econ:
                self.money[j] = m0j
                for t in range(ng):
                    self.goods[j, t] = g0j[t]
        cdef int64_t ei = self.econ_of[i]
        cdef int64_t ej = self.econ_of[j]
        self.e_money[ei] += self.money[i] - m0i
        self.e_money[ej] += self.money[j] - m0j
        if self.e_mf[ei]:
            self.e_logmoney[ei] += _log_safe(self.money[i]) - _log_safe(m0i)
        if self.e_mf[ej]:
            self.e_logmoney[ej] += _log_safe(self.money[j]) - _log_safe(m0j)
        for t in range(ng):
            self.e_goods[ei, t] += self.goods[i, t] - g0i[t]
            self.e_goods[ej, t] += self.goods[j, t] - g0j[t]
        self._maintain(ei)
        if ej != ei:
            self._maintain(ej)

    cdef void _maintain(self, int64_t e) nogil:
        cdef double target = self.e_maintain[e]
        if isnan(target):
            return
        if self.e_money[e] == target:
            return
        cdef Py_ssize_t s = self.e_start[e]
        cdef Py_ssize_t t = self.e_end[e]
        cdef double total = 0.0
        cdef Py_ssize_t a
        for a in range(s, t):
            total += self.money[a]
        if total <= 0.0:
            return
        cdef double factor = target / total
        cdef double acc
        for a in range(s, t):
            self.money[a] = self.money[a] * factor
        self.e_maint_added[e] += target - total
        self.e_money[e] = target
        if self.e_mf[e]:
            acc = 0.0
            for a in range(s, t):
                acc += _log_safe(self.money[a])
            self.e_logmoney[e] = acc

    # -- flux ----------------------------------------------------------------

    cdef void apply_flux(self, Py_ssize_t f) nogil:
        cdef int64_t e = self.fx_econ[f]
        cdef Py_ssize_t s = self.e_start[e]
        cdef Py_ssize_t ne = self.e_end[e] - s
        cdef int ng = self.ng
        cdef Py_ssize_t attempt, a
        cdef int idx, t
        cdef bint ok
        cdef double m_old
        for attempt in range(ne):
            idx = <int>(self._u01() * ne)
            if idx >= ne:
                idx = <int>(ne - 1)
            a = s + idx
            ok = self.money[a] + self.fx_amt[f, 0] >= 0.0
            if ok:
                for t in range(ng):
                    if self.goods[a, t] + self.fx_amt[f, 1 + t] < 0.0:
                        ok = 0
                        break
            if ok:
                m_old = self.money[a]
                self.money[a] = m_old + self.fx_amt[f, 0]
                self.e_money[e] += self.fx_amt[f, 0]
                if self.e_mf[e]:
                    self.e_logmoney[e] += _log_safe(self.money[a]) - _log_safe(m_old)
                self.fx_applied[f, 0] += self.fx_amt[f, 0]
                for t in range(ng):
                    self.goods[a, t] = self.goods[a, t] + self.fx_amt[f, 1 + t]
                    self.e_goods[e, t] += self.fx_amt[f, 1 + t]
                    self.fx_applied[f, 1 + t] += self.fx_amt[f, 1 + t]
                return
        self.fx_skips[f] += 1

    # -- selection --------------------------------------------------------------

    cdef int select(self, double[::1] cumK, double Ktot, Py_ssize_t *oi, Py_ssize_t *oj):
        cdef double r = self._u01()
        cdef double x = r * Ktot
        cdef Py_ssize_t nb = self.b_sel.shape[0]
        cdef Py_ssize_t k
        cdef int b = -1
        for k in range(nb):
            if self.b_enabled[k] and x < cumK[k]:
                b = <int>k
                break
        if b < 0:
            for k in range(nb - 1, -1, -1):
                if self.b_enabled[k]:
                    b = <int>k
                    break
        cdef double blo = cumK[b] - self.b_K[b]
        cdef double u_in = (x - blo) / self.b_K[b]
        if u_in < 0.0:
            u_in = 0.0
        cdef int64_t sel = self.b_sel[b]
        cdef int64_t ea = self.b_ea[b]
        cdef Py_ssize_t sa = self.e_start[ea]
        cdef Py_ssize_t na = self.e_end[ea] - sa
        cdef Py_ssize_t npairs, idx, ii, rem, jj, a1, a2, lo, hi, mid, p, q
        cdef int64_t eb
        cdef Py_ssize_t sb, nbn
        if sel == SEL_COMPLETE:
            npairs = na * (na - 1)
            idx = <Py_ssize_t>(u_in * npairs)
            if idx >= npairs:
                idx = npairs - 1
            ii = idx // (na - 1)
            rem = idx % (na - 1)
            jj = rem + 1 if rem >= ii else rem
            oi[0] = sa + ii
            oj[0] = sa + jj
            return b
        if sel == SEL_RING:
            npairs = 2 * na
            idx = <Py_ssize_t>(u_in * npairs)
            if idx >= npairs:
                idx = npairs - 1
            ii = idx // 2
            a1 = (ii - 1) % na
            a2 = (ii + 1) % na
            if a1 < a2:
                lo = a1; hi = a2
            else:
                lo = a2; hi = a1
            oi[0] = sa + ii
            oj[0] = sa + (lo if idx % 2 == 0 else hi)
            return b
        if sel == SEL_TABLE:
            tab = self.b_table[b]
            cum_arr = tab[0]
            rate_arr = tab[1]
            return self._select_table(b, u_in, sa, na, cum_arr, rate_arr, oi, oj)
        if sel == SEL_CROSS:
            eb = self.b_eb[b]
            sb = self.e_start[eb]
            nbn = self.e_end[eb] - sb
            npairs = na * nbn
            idx = <Py_ssize_t>(u_in * npairs)
            if idx >= npairs:
                idx = npairs - 1
            oi[0] = sa + idx // nbn
            oj[0] = sb + idx % nbn
            return b
        idx = <Py_ssize_t>(u_in * na)
        if idx >= na:
            idx = na - 1
        oi[0] = sa + idx
        oj[0] = -1
        return b

    cdef int _select_table(self, int b, double u_in, Py_ssize_t sa, Py_ssize_t na,
                           double[::1] cum, double[::1] rates, Py_ssize_t *oi, Py_ssize_t *oj):
        cdef Py_ssize_t n2 = cum.shape[0]
        cdef double x2 = u_in * cum[n2 - 1]
        cdef Py_ssize_t lo = 0
        cdef Py_ssize_t hi = n2
        cdef Py_ssize_t mid, p, q
        while lo < hi:
            mid = (lo + hi) // 2
            if cum[mid] < x2:
                lo = mid + 1
            else:
                hi = mid
        p = lo
        if p >= n2:
            p = n2 - 1
        if rates[p] == 0.0:
            q = p + 1
            while q < n2 and rates[q] == 0.0:
                q += 1
            if q < n2:
                p = q
            else:
                while p > 0 and rates[p] == 0.0:
                    p -= 1
        oi[0] = sa + p // na
        oj[0] = sa + p % na
        return b


def encounter_once(state, prog, rng, b, i, j):
    """Run exactly one forced encounter of block b between agents i and j."""
    cdef Engine eng = Engine(state, prog, rng)
    cdef int64_t scope = eng.b_scope[b]
    if scope == SCOPE_TRADER:
        eng.encounter_trader(b, i)
    else:
        eng.encounter_trade(b, i, j, scope == SCOPE_MONEY)
    prog["b_count"][b] += 1


def run_program(state, prog, ctl, rng):
    """Main loop: returns (n_done, t_end, records_written, stop_reason)."""
    cdef Engine eng = Engine(state, prog, rng)

    cdef Py_ssize_t n_econ = eng.e_start.shape[0]
    cdef int ng = eng.ng
    cdef Py_ssize_t e, s_, t_, tt
    for e in range(n_econ):
        s_ = eng.e_start[e]
        t_ = eng.e_end[e]
        eng.e_money[e] = float(state["money"][s_:t_].sum())
        for tt in range(ng):
            eng.e_goods[e, tt] = float(state["goods"][s_:t_, tt].sum())

    cdef Py_ssize_t nb = eng.b_sel.shape[0]
    cumK_arr = np.zeros(nb)
    cdef double[::1] cumK = cumK_arr
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(nb):
        if eng.b_enabled[k]:
            acc += eng.b_K[k]
        cumK[k] = acc
    cdef double Ktot = acc

    cdef double t = float(ctl["t0"])
    cdef int64_t max_enc = int(ctl["max_enc"])
    cdef int64_t rec_every = int(ctl["rec_every"])
    cdef Py_ssize_t rec_pos = int(ctl["rec_pos"])
    cdef Py_ssize_t rec_pos0 = rec_pos
    cdef double[::1] rec_t = ctl["rec_t"]
    cdef double[:, ::1] rec_emoney = ctl["rec_emoney"]
    cdef double[:, :, ::1] rec_egoods = ctl["rec_egoods"]
    cdef double[:, ::1] rec_watch = ctl["rec_watch"]
    cdef double[:, ::1] rec_snap = ctl["rec_snap"]
    cdef int64_t[::1] watch = ctl["watch"]
    cdef Py_ssize_t rec_cap = rec_t.shape[0] if rec_every > 0 else 0
    cdef bint want_snap = rec_snap.shape[1] > 0 if rec_every > 0 else 0
    cdef double time_scale = float(ctl.get("time_scale", 1.0))

    cdef int stop_block = int(ctl["stop_block"])
    cdef int64_t stop_block_n = int(ctl["stop_block_n"])
    cdef int thr_econ = int(ctl["thr_econ"])
    cdef int thr_good = int(ctl["thr_good"])
    cdef int thr_mode = int(ctl["thr_mode"])
    cdef double thr_val = float(ctl["thr_val"])
    cdef int sma_econ = int(ctl["sma_econ"])
    cdef int sma_mode = int(ctl["sma_mode"])
    cdef double sma_val = float(ctl["sma_val"])
    cdef double[::1] sma_buf = ctl["sma_buf"]
    cdef int64_t[::1] sma_i = ctl["sma_i"]
    cdef double[::1] sma_f = ctl["sma_f"]
    cdef Py_ssize_t sma_win = sma_buf.shape[0] if sma_econ >= 0 else 0

    cdef Py_ssize_t n_flux = eng.fx_econ.shape[0]
    cdef double dt = time_scale / Ktot if Ktot > 0.0 else 0.0
    cdef int stop_reason = STOP_MAX
    cdef int64_t n = 0
    cdef Py_ssize_t f, wdx, a, b
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t j = 0
    cdef int64_t scope
    cdef double v, mean
    cdef Py_ssize_t pos

    while n < max_enc:
        for f in range(n_flux):
            while eng.fx_next[f] <= t:
                eng.apply_flux(f)
                eng.fx_next[f] += eng.fx_dt[f]
        if Ktot <= 0.0:
            stop_reason = STOP_IDLE
            break
        b = eng.select(cumK, Ktot, &i, &j)
        scope = eng.b_scope[b]
        if scope == SCOPE_TRADER:
            eng.encounter_trader(b, i)
        else:
            eng.encounter_trade(b, i, j, scope == SCOPE_MONEY)
        eng.b_count[b] += 1
        n += 1
        t += dt
        if rec_every > 0 and n % rec_every == 0 and rec_pos < rec_cap:
            rec_t[rec_pos] = t
            for e in range(n_econ):
                rec_emoney[rec_pos, e] = eng.e_money[e]
                for tt in range(ng):
                    rec_egoods[rec_pos, e, tt] = eng.e_goods[e, tt]
            for wdx in range(watch.shape[0]):
                rec_watch[rec_pos, wdx] = eng.money[watch[wdx]]
            if want_snap:
                for a in range(rec_snap.shape[1]):
                    rec_snap[rec_pos, a] = eng.money[a]
            rec_pos += 1
        if stop_block >= 0 and eng.b_count[stop_block] >= stop_block_n:
            stop_reason = STOP_BLOCK
            break
        if thr_econ >= 0:
            v = eng.e_money[thr_econ] if thr_good < 0 else eng.e_goods[thr_econ, thr_good]
            if (thr_mode > 0 and v >= thr_val) or (thr_mode < 0 and v <= thr_val):
                stop_reason = STOP_THRESHOLD
                break
        if sma_econ >= 0:
            v = eng.e_money[sma_econ]
            pos = sma_i[0]
            if sma_i[1] >= sma_win:
                sma_f[0] -= sma_buf[pos]
            sma_buf[pos] = v
            sma_f[0] += v
            sma_i[0] = (pos + 1) % sma_win
            if sma_i[1] < sma_win:
                sma_i[1] += 1
            if sma_i[1] >= sma_win:
                mean = sma_f[0] / sma_win
                if (sma_mode > 0 and mean >= sma_val) or (sma_mode < 0 and mean <= sma_val):
                    stop_reason = STOP_SMA
                    break
    return n, t, rec_pos - rec_pos0, stop_reason
