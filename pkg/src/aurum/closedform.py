"""Analytic formulas: special functions, substitutes-economy relations, and the
mean-field economy's entropy, coolness and admissible parameter region.

Everything here is a pure function of its arguments and serves as the
closed-form counterpart to simulated measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "digamma",
    "trigamma",
    "SubstitutesValues",
    "substitutes_quantities",
    "substitutes_values",
    "bouchaud_entropy",
    "bouchaud_beta",
    "bouchaud_beta_approx",
    "bouchaud_allowed_region",
    "bouchaud_allowed",
    "bouchaud_mbar",
]

EULER_GAMMA = 0.5772156649015328606

# asymptotic tail coefficients: psi(x) ~ ln x - 1/(2x) - sum c_n / x^(2n)
_PSI_TAIL = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
)
# psi'(x) ~ 1/x + 1/(2x^2) + sum d_n / x^(2n+1)
_PSI1_TAIL = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
)

_ASYMPTOTIC_FROM = 12.0


def digamma(x: float) -> float:
    """psi(x) = Gamma'(x)/Gamma(x) for x > 0, via recurrence plus asymptotic series."""
    if x <= 0:
        raise ValueError(f"digamma needs x > 0, got {x}")
    acc = 0.0
    while x < _ASYMPTOTIC_FROM:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = 0.0
    p = inv2
    for c in _PSI_TAIL:
        tail += c * p
        p *= inv2
    return acc + math.log(x) - 0.5 / x - tail


def trigamma(x: float) -> float:
    """psi'(x) for x > 0, same recurrence/asymptotic construction as digamma."""
    if x <= 0:
        raise ValueError(f"trigamma needs x > 0, got {x}")
    acc = 0.0
    while x < _ASYMPTOTIC_FROM:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = 0.0
    p = inv * inv2
    for c in _PSI1_TAIL:
        tail += c * p
        p *= inv2
    return acc + inv + 0.5 * inv2 + tail


# ---------------------------------------------------------------------------
# substitutes economy: values <-> quantities


@dataclass(frozen=True)
class SubstitutesValues:
    """Per-unit entropy derivatives (values) of the two goods in a substitutes economy."""

    nu_g: float
    nu_h: float
    n_agents: int
    alpha: float

    def __post_init__(self):
        if self.nu_g <= 0 or self.nu_h <= 0:
            raise ValueError("values must be positive")
        if self.alpha <= 0 or self.n_agents < 1:
            raise ValueError("invalid parameters")


# relative gap below which the direct formula is replaced by its expansion
_EQUAL_VALUES_THRESHOLD = 1e-8


def _quantities_series(v_mid: float, eps: float, n: int, a: float) -> tuple[float, float]:
    """Third-order expansion of (G, H) about nu_g = nu_h; eps = nu_g - nu_h.

    Avoids the catastrophic cancellation of the direct formula, whose two
    terms both diverge like 1/eps.
    """
    c0 = (a + 1.0) / (2.0 * v_mid)
    c1 = -(a + 1.0) * (a + 2.0) / (12.0 * v_mid**2)
    c2 = (a + 1.0) * (a + 2.0) / (24.0 * v_mid**3)
    c3 = (a**4 - 20.0 * a**2 - 45.0 * a - 26.0) / (720.0 * v_mid**4)
    even = c0 + c2 * eps * eps
    odd = (c1 + c3 * eps * eps) * eps
    return n * (even + odd), n * (even - odd)


def substitutes_quantities(v: SubstitutesValues) -> tuple[float, float]:
    """Equilibrium good quantities (G, H) for given values (nu_g, nu_h).

    Direct formula: G/N = a*nu_g^(-a-1)/(nu_g^(-a) - nu_h^(-a)) + 1/(nu_g - nu_h),
    with H symmetric; nearly-equal values route through a series expansion.
    """
    vg, vh, n, a = v.nu_g, v.nu_h, v.n_agents, v.alpha
    if abs(vg - vh) < _EQUAL_VALUES_THRESHOLD * (vg + vh):
        return _quantities_series(0.5 * (vg + vh), vg - vh, n, a)
    dg = vg ** (-a) - vh ** (-a)
    G = n * (a * vg ** (-a - 1.0) / dg + 1.0 / (vg - vh))
    H = n * (a * vh ** (-a - 1.0) / (-dg) + 1.0 / (vh - vg))
    return G, H


def substitutes_values(
    G: float,
    H: float,
    n_agents: int,
    alpha: float,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> SubstitutesValues:
    """Invert quantities -> values by damped Newton from the equal-values guess.

    The forward map has no published inverse; the equal-values limit
    nu = N(alpha+1)/(G+H) is the natural starting point.
    """
    if G <= 0 or H <= 0:
        raise ValueError("quantities must be positive")
    v0 = n_agents * (alpha + 1.0) / (G + H)
    vg, vh = v0, v0

    def residual(vg: float, vh: float) -> tuple[float, float]:
        q = substitutes_quantities(SubstitutesValues(vg, vh, n_agents, alpha))
        return q[0] - G, q[1] - H

    rg, rh = residual(vg, vh)
    for _ in range(max_iter):
        norm = abs(rg) + abs(rh)
        if norm <= tol * (G + H):
            break
        # numeric Jacobian, central differences
        hg = 1e-6 * vg
        hh = 1e-6 * vh
        j00 = (residual(vg + hg, vh)[0] - residual(vg - hg, vh)[0]) / (2 * hg)
        j10 = (residual(vg + hg, vh)[1] - residual(vg - hg, vh)[1]) / (2 * hg)
        j01 = (residual(vg, vh + hh)[0] - residual(vg, vh - hh)[0]) / (2 * hh)
        j11 = (residual(vg, vh + hh)[1] - residual(vg, vh - hh)[1]) / (2 * hh)
        det = j00 * j11 - j01 * j10
        if det == 0.0:
            raise ArithmeticError("singular Jacobian in substitutes inversion")
        sg = -(j11 * rg - j01 * rh) / det
        sh = -(-j10 * rg + j00 * rh) / det
        lam = 1.0
        while lam > 1e-6:
            ng, nh = vg + lam * sg, vh + lam * sh
            if ng > 0 and nh > 0:
                trg, trh = residual(ng, nh)
                if abs(trg) + abs(trh) < norm:
                    vg, vh, rg, rh = ng, nh, trg, trh
                    break
            lam *= 0.5
        else:
            raise ArithmeticError("substitutes inversion failed to make progress")
    else:
        raise ArithmeticError("substitutes inversion did not converge")
    return SubstitutesValues(vg, vh, n_agents, alpha)


# ---------------------------------------------------------------------------
# mean-field (Bouchaud) economy


def bouchaud_eta(mbar: float, c: float) -> float:
    return 1.0 + c * mbar * mbar


def bouchaud_mbar(eta: float, c: float) -> float:
    """Mean money per agent implied by (eta, c)."""
    if eta <= 1.0:
        raise ValueError("eta must exceed 1")
    return math.sqrt((eta - 1.0) / c)


def bouchaud_entropy(mbar: float, c: float) -> float:
    """Entropy per agent: s = eta*log(mbar) + log Gamma(eta) - eta*log(eta) + eta."""
    if mbar <= 0 or c <= 0:
        raise ValueError("mbar and c must be positive")
    eta = bouchaud_eta(mbar, c)
    return eta * math.log(mbar) + math.lgamma(eta) - eta * math.log(eta) + eta


def bouchaud_beta(mbar: float, c: float) -> float:
    """Coolness beta = ds/dmbar = 1/mbar + c*mbar*(1 + 2 log mbar + 2 psi(eta) - 2 log eta)."""
    if mbar <= 0 or c <= 0:
        raise ValueError("mbar and c must be positive")
    eta = bouchaud_eta(mbar, c)
    return 1.0 / mbar + c * mbar * (
        1.0 + 2.0 * math.log(mbar) + 2.0 * digamma(eta) - 2.0 * math.log(eta)
    )


def bouchaud_beta_approx(mbar: float, c: float) -> float:
    """Small-mbar approximation using psi(eta) - log eta ~ -gamma_E + (pi^2/6 - 1)(eta - 1)."""
    if mbar <= 0 or c <= 0:
        raise ValueError("mbar and c must be positive")
    return 1.0 / mbar + c * mbar * (
        1.0
        + 2.0 * math.log(mbar)
        - 2.0 * EULER_GAMMA
        + 2.0 * (math.pi**2 / 6.0 - 1.0) * c * mbar * mbar
    )


def bouchaud_allowed_region(eta: float) -> tuple[float, float]:
    """Boundary values (c_beta, c_concavity) at the given eta > 1.

    beta turns negative for c above c_beta.  Concavity of the entropy
    (beta decreasing in mbar) fails for c *below* c_concavity: the
    boundary locus matches the closed form, and the admissible side was
    fixed by finite-difference sign checks on beta.
    """
    if eta <= 1.0:
        raise ValueError("eta must exceed 1")
    x = eta - 1.0
    c_beta = x / (eta * eta) * math.exp(eta / x + 2.0 * digamma(eta))
    F = (
        -2.0 * digamma(eta)
        + 2.0 * math.log(eta)
        - 4.0 * x * trigamma(eta)
        - 4.0 / eta
        + eta / x
    )
    c_conc = x * math.exp(-F)
    return c_beta, c_conc


def bouchaud_allowed(eta: float, c: float) -> bool:
    """Whether (eta, c) sits in the admissible region (beta > 0 and concave entropy)."""
    c_beta, c_conc = bouchaud_allowed_region(eta)
    return c_conc < c < c_beta
