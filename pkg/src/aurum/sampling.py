"""Seeded random sources and the distribution samplers behind all exchange kernels.

Every stochastic component of the simulator draws from a :class:`RandomSource`,
a thin wrapper around a 64-bit PCG stream.  Samplers are built from raw
uniforms only (inverse-CDF for the exponential, sums of exponentials for
integer-shape Gammas, Gamma ratios for integer Betas), so a fixed seed gives
bitwise-reproducible runs on every backend.  Non-integer shape parameters are
deliberately unsupported by the direct samplers; such targets go through
:func:`metropolis_hastings`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "RandomSource",
    "Box",
    "ProposalSpec",
    "sample_uniform",
    "sample_exponential",
    "sample_gamma",
    "sample_beta",
    "metropolis_hastings",
]


class RandomSource:
    """Deterministic uniform stream with per-replica splitting.

    The stream is keyed by ``(seed, *branch)``: identical keys give
    bitwise-identical sequences, and :meth:`split` derives statistically
    independent child streams by extending the key with an integer index.
    A source is single-owner; parallel replicas must each get their own
    split, never a shared instance.
    """

    __slots__ = ("seed", "key", "_bitgen", "_gen")

    def __init__(self, seed: int, _branch: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = (self.seed,) + tuple(int(b) for b in _branch)
        self._bitgen = np.random.PCG64(np.random.SeedSequence(self.key))
        self._gen = np.random.Generator(self._bitgen)

    def split(self, index: int) -> "RandomSource":
        """Child stream for replica/component `index`, independent by construction."""
        return RandomSource(self.seed, self.key[1:] + (int(index),))

    def u01(self) -> float:
        """One uniform draw in [0, 1)."""
        return self._gen.random()

    def u01_block(self, n: int) -> np.ndarray:
        """`n` consecutive uniforms; consumes the stream exactly like n u01() calls."""
        return self._gen.random(int(n))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    @property
    def bit_generator(self) -> np.random.PCG64:
        return self._bitgen

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RandomSource(key={self.key})"


# ---------------------------------------------------------------------------
# direct samplers


def sample_uniform(a: float, b: float, rng: RandomSource) -> float:
    """Uniform draw on [a, b] via x = (1-r)a + rb."""
    if a > b:
        raise ValueError(f"invalid range: a={a} > b={b}")
    r = rng.u01()
    return (1.0 - r) * a + r * b


def sample_exponential(mean: float, rng: RandomSource, size: int | None = None):
    """Exponential draw(s) with the given mean, as -mean*log(u), u in (0, 1].

    u is taken as 1 - u01 so the log argument never hits zero.
    """
    if mean <= 0:
        raise ValueError(f"exponential mean must be positive, got {mean}")
    if size is None:
        u = 1.0 - rng.u01()
        return -mean * math.log(u)
    u = 1.0 - rng.u01_block(size)
    return -mean * np.log(u)


def _std_gamma(k: int, rng: RandomSource) -> float:
    """Standard Gamma(k) for integer k >= 1: sum of k unit exponentials."""
    s = 0.0
    for _ in range(k):
        s -= math.log(1.0 - rng.u01())
    return s


def _check_shape(name: str, k) -> int:
    if k != int(k):
        raise ValueError(
            f"{name}={k} is not an integer; non-integer shapes are sampled "
            "via metropolis_hastings, not the direct samplers"
        )
    k = int(k)
    if k < 1:
        raise ValueError(f"{name} must be a positive integer, got {k}")
    return k


def sample_gamma(k: int, mean: float, rng: RandomSource, size: int | None = None):
    """Gamma draw(s) with integer shape k and the given mean.

    Density is proportional to x^(k-1) exp(-k x / mean); sampled as
    -(mean/k) * sum of k log-uniforms.
    """
    k = _check_shape("k", k)
    if mean <= 0:
        raise ValueError(f"gamma mean must be positive, got {mean}")
    if size is None:
        return (mean / k) * _std_gamma(k, rng)
    u = rng.u01_block(size * k).reshape(size, k)
    return -(mean / k) * np.log(1.0 - u).sum(axis=1)


def sample_beta(a: int, b: int, scale: float, rng: RandomSource, size: int | None = None):
    """Scaled Beta(a, b) draw(s) on [0, scale] for integer a, b >= 1.

    Built as scale * A / (A + B) with A ~ Gamma(a), B ~ Gamma(b).
    """
    a = _check_shape("a", a)
    b = _check_shape("b", b)
    if scale <= 0:
        raise ValueError(f"beta scale must be positive, got {scale}")
    if size is None:
        ga = _std_gamma(a, rng)
        gb = _std_gamma(b, rng)
        return scale * (ga / (ga + gb))
    u = rng.u01_block(size * (a + b)).reshape(size, a + b)
    e = -np.log(1.0 - u)
    ga = e[:, :a].sum(axis=1)
    gb = e[:, a:].sum(axis=1)
    return scale * (ga / (ga + gb))


# ---------------------------------------------------------------------------
# Metropolis-Hastings


@dataclass(frozen=True)
class Box:
    """Axis-aligned support region; an optional mask restricts it further."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    mask: Callable[[Sequence[float]], bool] | None = None

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("box lo/hi dimension mismatch")
        for lo, hi in zip(self.lo, self.hi):
            if lo > hi:
                raise ValueError(f"invalid box: lo={lo} > hi={hi}")

    @property
    def ndim(self) -> int:
        return len(self.lo)

    def contains(self, x: Sequence[float]) -> bool:
        for v, lo, hi in zip(x, self.lo, self.hi):
            if v < lo or v > hi:
                return False
        if self.mask is not None and not self.mask(x):
            return False
        return True


@dataclass(frozen=True)
class ProposalSpec:
    """Proposal distribution for the MH kernel.

    kind "beta": per-dimension scaled Beta draws, independent of the current
    point; `betas` holds one (a, b) integer pair per dimension.  The proposal
    density enters the acceptance ratio.

    kind "window": per-dimension uniform window of half-width
    `width_fraction` * span centred on the current point.  The window is not
    truncated at the support edge; points outside are rejected through the
    target density, so the proposal stays symmetric and its density cancels.
    """

    kind: str = "beta"
    betas: tuple[tuple[int, int], ...] = ()
    width_fraction: float = 0.25

    def __post_init__(self):
        if self.kind not in ("beta", "window"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if self.kind == "beta":
            for a, b in self.betas:
                _check_shape("proposal a", a)
                _check_shape("proposal b", b)


def _beta_q(y: float, span: float, a: int, b: int) -> float:
    """Unnormalised Beta proposal density at y on [0, span]."""
    if y < 0.0 or y > span:
        return 0.0
    x = y / span
    return x ** (a - 1) * (1.0 - x) ** (b - 1)


def metropolis_hastings(
    unnormalized_density: Callable[[Sequence[float]], float],
    support: Box,
    proposal: ProposalSpec,
    steps: int,
    start: Sequence[float],
    rng: RandomSource,
) -> np.ndarray:
    """Run `steps` MH iterations and return the final chain state.

    Acceptance uses density *ratios* only, so the target never needs
    normalising; proposals outside the support are treated as density zero.
    The proposal must be able to reach the whole support (not checked at
    runtime; a proposal that cannot is a configuration error).
    """
    x = [float(v) for v in start]
    d = support.ndim
    if len(x) != d:
        raise ValueError("start dimension does not match support")
    if proposal.kind == "beta" and len(proposal.betas) != d:
        raise ValueError("proposal needs one (a, b) pair per dimension")
    rho_x = float(unnormalized_density(x)) if support.contains(x) else 0.0
    if rho_x <= 0.0:
        raise ValueError("invalid start: unnormalized density is zero at start")
    spans = [hi - lo for lo, hi in zip(support.lo, support.hi)]

    xp = [0.0] * d
    for _ in range(steps):
        q_ratio = 1.0  # q(x | x') / q(x' | x)
        if proposal.kind == "beta":
            for t in range(d):
                a, b = proposal.betas[t]
                y = sample_beta(a, b, spans[t], rng) if spans[t] > 0 else 0.0
                xp[t] = support.lo[t] + y
                q_old = _beta_q(x[t] - support.lo[t], spans[t], a, b) if spans[t] > 0 else 1.0
                q_new = _beta_q(y, spans[t], a, b) if spans[t] > 0 else 1.0
                if q_new > 0.0:
                    q_ratio *= q_old / q_new
                else:
                    q_ratio = 0.0
        else:
            for t in range(d):
                w = proposal.width_fraction * spans[t]
                xp[t] = x[t] + (2.0 * rng.u01() - 1.0) * w
        rho_new = float(unnormalized_density(xp)) if support.contains(xp) else 0.0
        u = rng.u01()
        # accept iff u < min(1, rho_new * q_ratio / rho_x); multiplicative form
        # keeps the decision invariant under rescaling the density.
        if u * rho_x < rho_new * q_ratio:
            x, xp = xp, x
            rho_x = rho_new
    return np.asarray(x, dtype=float)
