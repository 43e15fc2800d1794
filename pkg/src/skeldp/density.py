"""First exit-time density of Brownian motion from [-1, 1].

tau = inf{t > 0 : |B(t)| = 1}.  Two alternating series represent the density:

    small x (< 2/pi):  f(x) = 2/sqrt(2 pi x^3) * sum (-1)^n (2n+1) exp(-(2n+1)^2/(2x))
    large x (> 2/pi):  f(x) = (pi/2) * sum (-1)^n (2n+1) exp(-pi^2 x (2n+1)^2 / 8)

Each series has terms decreasing in n on its own branch, so partial sums
bracket the limit and the first omitted term bounds the truncation error.
Both series integrate term by term in closed form (erfc on the small branch,
plain exponentials on the large branch), which gives the CDF, tail integrals
and partial moments without quadrature.

The hitting-time increments of an epsilon-skeleton are eps^2 * tau in law;
`scale_to_T1` gives the scaled density f_{T1}(x) = eps^-2 f(eps^-2 x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import erfc

from .errors import ConfigurationError, NumericalError

CROSSOVER = 2.0 / np.pi

# exponent below which exp() underflows to 0.0 in float64
_EXP_UNDERFLOW = -745.0

_GAUSS_X64, _GAUSS_W64 = leggauss(64)


@dataclass(frozen=True)
class SeriesTruncation:
    """Number of series terms to keep; crossover is fixed at 2/pi."""

    n_terms: int
    crossover: float = CROSSOVER

    def __post_init__(self):
        if self.n_terms < 1:
            raise ConfigurationError(f"n_terms must be >= 1, got {self.n_terms}")


@dataclass(frozen=True)
class Quantization:
    """Finite-support approximation of tau: nodes and matching weights."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ConfigurationError("nodes and weights must be 1-d and same length")
        if np.any(nodes <= 0) or np.any(np.diff(nodes) <= 0):
            raise ConfigurationError("nodes must be positive and strictly increasing")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("weights must be nonnegative and sum to 1")

    @property
    def mean(self) -> float:
        return float(self.weights @ self.nodes)


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def f_tau(x, trunc: SeriesTruncation | int = 60):
    """Density of tau at x > 0 as the n_terms-partial alternating sum."""
    n_terms = trunc.n_terms if isinstance(trunc, SeriesTruncation) else int(trunc)
    if n_terms < 1:
        raise ConfigurationError(f"n_terms must be >= 1, got {n_terms}")
    arr, scalar = _as_array(x)
    if np.any(arr <= 0):
        raise ConfigurationError("f_tau requires x > 0")
    out = np.zeros_like(arr)
    ell = np.arange(n_terms)
    odd = 2 * ell + 1

    small = arr < CROSSOVER
    if small.any():
        xs = arr[small][..., None]
        expo = -odd**2 / (2.0 * xs)
        # leading term below 1e-300 -> the density has underflowed; return 0
        lead = np.log(2.0 / np.sqrt(2.0 * np.pi * xs[:, 0] ** 3)) + expo[:, 0]
        terms = np.where(expo > _EXP_UNDERFLOW, np.exp(expo), 0.0)
        val = 2.0 / np.sqrt(2.0 * np.pi * xs[:, 0] ** 3) * np.sum(
            (-1.0) ** ell * odd * terms, axis=1
        )
        out[small] = np.where(lead < np.log(1e-300), 0.0, val)
    large = ~small
    if large.any():
        xl = arr[large][..., None]
        expo = -np.pi**2 * xl * odd**2 / 8.0
        terms = np.where(expo > _EXP_UNDERFLOW, np.exp(expo), 0.0)
        out[large] = (np.pi / 2.0) * np.sum((-1.0) ** ell * odd * terms, axis=1)
    return float(out) if scalar else out


def truncation_bound(x, n: int):
    """Magnitude of the first omitted term when keeping n terms at x.

    Dominates |f_tau(x, inf) - f_tau(x, n)| because the terms on each branch
    decrease in the index (alternating series remainder).
    """
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    arr, scalar = _as_array(x)
    if np.any(arr <= 0):
        raise ConfigurationError("truncation_bound requires x > 0")
    odd = 2 * n + 1
    out = np.empty_like(arr)
    small = arr < CROSSOVER
    if small.any():
        xs = arr[small]
        expo = -(odd**2) / (2.0 * xs)
        out[small] = 2.0 * odd / np.sqrt(2.0 * np.pi * xs**3) * np.where(
            expo > _EXP_UNDERFLOW, np.exp(expo), 0.0
        )
    large = ~small
    if large.any():
        xl = arr[large]
        expo = -np.pi**2 * xl * odd**2 / 8.0
        out[large] = (np.pi / 2.0) * odd * np.where(
            expo > _EXP_UNDERFLOW, np.exp(expo), 0.0
        )
    return float(out) if scalar else out


def auto_n_terms(x: float, tol: float, cap: int = 200) -> int:
    """Smallest n with truncation_bound(x, n) <= tol; errors if cap unreachable."""
    for n in range(1, cap + 1):
        if truncation_bound(x, n) <= tol:
            return n
    raise NumericalError(f"no n <= {cap} reaches tolerance {tol} at x={x}")


def cdf_tau(x, n_terms: int = 64):
    """P(tau <= x), term-by-term integral of the series (exact in each branch).

    small branch:  F(x) = 2 * sum (-1)^n erfc((2n+1)/sqrt(2x))
    large branch:  F(x) = 1 - (4/pi) * sum (-1)^n/(2n+1) exp(-pi^2 (2n+1)^2 x/8)
    """
    arr, scalar = _as_array(x)
    out = np.zeros_like(arr)
    ell = np.arange(n_terms)
    odd = 2 * ell + 1
    pos = arr > 0
    small = pos & (arr < CROSSOVER)
    if small.any():
        xs = arr[small][..., None]
        out[small] = 2.0 * np.sum((-1.0) ** ell * erfc(odd / np.sqrt(2.0 * xs)), axis=1)
    large = pos & ~small
    if large.any():
        xl = arr[large][..., None]
        expo = -np.pi**2 * odd**2 * xl / 8.0
        terms = np.where(expo > _EXP_UNDERFLOW, np.exp(expo), 0.0)
        out[large] = 1.0 - (4.0 / np.pi) * np.sum((-1.0) ** ell / odd * terms, axis=1)
    return float(out) if scalar else np.clip(out, 0.0, 1.0)


def survival_tau(x, n_terms: int = 64):
    """P(tau > x); uses the large-branch series directly when it applies."""
    arr, scalar = _as_array(x)
    out = np.ones_like(arr)
    ell = np.arange(n_terms)
    odd = 2 * ell + 1
    small = (arr > 0) & (arr < CROSSOVER)
    if small.any():
        out[small] = 1.0 - cdf_tau(arr[small], n_terms)
    large = arr >= CROSSOVER
    if large.any():
        xl = arr[large][..., None]
        expo = -np.pi**2 * odd**2 * xl / 8.0
        terms = np.where(expo > _EXP_UNDERFLOW, np.exp(expo), 0.0)
        out[large] = (4.0 / np.pi) * np.sum((-1.0) ** ell / odd * terms, axis=1)
    return float(out) if scalar else np.clip(out, 0.0, 1.0)


# Tail cutoff: survival(x) < 1e-12 from the leading large-branch term.
TAIL_CUTOFF = 8.0 / np.pi**2 * np.log(4.0 / (np.pi * 1e-12))


_INV_TABLE: list = []


def _inverse_table():
    """Monotone (u, x) table seeding Newton; built once per process."""
    if not _INV_TABLE:
        us = np.concatenate([np.geomspace(1e-12, 0.02, 256),
                             np.linspace(0.02, 0.98, 1600),
                             1.0 - np.geomspace(1e-13, 0.02, 256)[::-1]])
        us = np.unique(us)
        lo = np.full_like(us, 5e-4)
        hi = np.full_like(us, 80.0)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = cdf_tau(mid) < us
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        _INV_TABLE.append((us, 0.5 * (lo + hi)))
    return _INV_TABLE[0]


def inverse_cdf_tau(u, tol: float = 1e-12):
    """Quantile function of tau: table-interpolated start, Newton polish."""
    arr, scalar = _as_array(u)
    if np.any((arr <= 0.0) | (arr >= 1.0)):
        raise ConfigurationError("inverse_cdf_tau requires 0 < u < 1")
    t_u, t_x = _inverse_table()
    x = np.interp(arr, t_u, t_x)
    # 12 series terms give truncation < 1e-20 everywhere on the bracket
    for _ in range(3):
        fx = cdf_tau(x, 12) - arr
        dfx = f_tau(x, 12)
        step = np.where(dfx > 0, fx / np.maximum(dfx, 1e-300), 0.0)
        x = np.clip(x - step, 5e-4, 120.0)
    resid = np.abs(cdf_tau(x, 12) - arr)
    if np.any(resid > tol):
        # Newton can stall in the extreme tails; bisect the stragglers
        bad = resid > tol
        lo_b = np.full(int(bad.sum()), 5e-4)
        hi_b = np.full(int(bad.sum()), 120.0)
        for _ in range(100):
            mid = 0.5 * (lo_b + hi_b)
            below = cdf_tau(mid) < arr[bad]
            lo_b = np.where(below, mid, lo_b)
            hi_b = np.where(below, hi_b, mid)
        x[bad] = 0.5 * (lo_b + hi_b)
    return float(x) if scalar else x


def sample_tau(n: int, seed, stream: int = 0):
    """n i.i.d. copies of tau via inverse transform on a Philox stream."""
    gen = np.random.Generator(np.random.Philox(key=_philox_key(seed, stream)))
    return inverse_cdf_tau(gen.random(n) * (1.0 - 2e-16) + 1e-16)


def _philox_key(seed, stream: int):
    return np.array([np.uint64(seed) & np.uint64(2**64 - 1), np.uint64(stream)],
                    dtype=np.uint64)


def scale_to_T1(x, eps_k: float):
    """Density of T1 = eps^2 tau:  f_{T1}(x) = eps^-2 f_tau(eps^-2 x)."""
    if eps_k <= 0:
        raise ConfigurationError(f"eps_k must be > 0, got {eps_k}")
    return f_tau(np.asarray(x, dtype=float) * eps_k**-2) * eps_k**-2


def _gauss_panels(fn, a: float, b: float, panels: int):
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    pts = mid + half * _GAUSS_X64
    vals = fn(pts.ravel()).reshape(pts.shape)
    return float(np.sum(half[:, 0] * (vals @ _GAUSS_W64)))


def integrate_f_tau(a: float, b: float, panels: int = 40) -> float:
    """int_a^b f_tau, split at the crossover; b may be inf (analytic tail)."""
    a = max(a, 0.0)
    if not np.isfinite(b):
        return integrate_f_tau(a, TAIL_CUTOFF + 10.0, panels) + float(
            survival_tau(TAIL_CUTOFF + 10.0)
        )
    total = 0.0
    lo = max(a, 5e-3)  # density underflows below ~2e-2; 5e-3 is paranoid
    if lo < min(b, CROSSOVER):
        total += _gauss_panels(f_tau, lo, min(b, CROSSOVER), panels)
    if b > CROSSOVER:
        total += _gauss_panels(f_tau, max(lo, CROSSOVER), b, panels)
    return total


def tail_moment(a: float, n_terms: int = 64) -> float:
    """int_a^inf x f(x) dx via the large-branch series, valid for a >= 2/pi."""
    if a < CROSSOVER:
        raise ConfigurationError("tail_moment requires a >= 2/pi")
    ell = np.arange(n_terms)
    odd = 2 * ell + 1
    c = np.pi**2 * odd**2 / 8.0
    expo = -c * a
    terms = np.where(expo > _EXP_UNDERFLOW, np.exp(expo), 0.0)
    return float((np.pi / 2.0) * np.sum((-1.0) ** ell * odd * terms * (a / c + 1.0 / c**2)))


def _moment_piece(a: float, b: float, panels: int = 24) -> float:
    """int_a^b x f(x) dx by Gauss panels (finite b, within one branch or split)."""
    total = 0.0
    lo = max(a, 5e-3)
    if lo < min(b, CROSSOVER):
        total += _gauss_panels(lambda x: x * f_tau(x), lo, min(b, CROSSOVER), panels)
    if b > CROSSOVER:
        total += _gauss_panels(lambda x: x * f_tau(x), max(lo, CROSSOVER), b, panels)
    return total


def quantize_tau(Q: int, rule: str = "quantile") -> Quantization:
    """Finite-support approximation of tau with Q base nodes.

    quantile: nodes at the conditional means of Q equal-probability slices,
    all weights 1/Q; preserves total mass and the exact mean.
    gauss: 64-panel Gauss nodes collapsed to a Q-point rule on a truncated
    support with the residual tail mass folded into the last node.
    """
    if Q < 1:
        raise ConfigurationError(f"Q must be >= 1, got {Q}")
    if rule == "quantile":
        edges = np.concatenate(
            [[0.0], inverse_cdf_tau(np.arange(1, Q) / Q) if Q > 1 else [], [np.inf]]
        )
        nodes = np.empty(Q)
        for i in range(Q):
            a, b = edges[i], edges[i + 1]
            if np.isfinite(b):
                m = _moment_piece(a, b)
            else:
                m = (tail_moment(a) if a >= CROSSOVER
                     else _moment_piece(a, CROSSOVER) + tail_moment(CROSSOVER))
            nodes[i] = m * Q  # conditional mean of a 1/Q slice
        weights = np.full(Q, 1.0 / Q)
        return Quantization(nodes, weights)
    if rule == "gauss":
        lo, hi = 5e-3, TAIL_CUTOFF
        gx, gw = leggauss(Q)
        x = 0.5 * (hi + lo) + 0.5 * (hi - lo) * gx
        w = 0.5 * (hi - lo) * gw * f_tau(x)
        order = np.argsort(x)
        x, w = x[order], w[order]
        w[-1] += float(survival_tau(hi))  # fold the cut tail into the last node
        w /= w.sum()
        return Quantization(x, w)
    raise ConfigurationError(f"unknown quantization rule {rule!r}")
