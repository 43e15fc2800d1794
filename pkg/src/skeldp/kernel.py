"""One-step transition kernel of the skeleton given its history.

For d = 1 the next (delta_t, sign) is history-free:

    P{DT in (a,b), sign = l} = (1/2) int_a^b f_k(s) ds,

with f_k the eps^2-scaled exit density.  For d > 1 the kernel conditions on
the per-coordinate lags Delta^{k,lambda} (elapsed time since each
coordinate's own last hit) and reads, for target coordinate j:

    (1/2) * [ int_{a+Dj}^{b+Dj} f_k / int_{Dj}^inf f_k ]
          * [ (iint f_k(s+t+Dj) prod_{l != j} f_k(t+Dl) dt ds) / prod_l int_{Dl}^inf f_k ]

where the double integral runs over s in (-inf, 0), t in (-s, inf).  The
second factor is the probability that coordinate j fires first (an exact
identity at d = 2).  The product form is implemented exactly as stated; its
agreement with simulation is checked numerically, and `time_resolved_report`
exposes the comparison on time-binned cells, where the product form is an
approximation of the simulated law (discrepancies are reported, never
silently corrected).

All internal computation is done in unit-tau coordinates (lags and interval
endpoints divided by eps^2), where the density is f_tau itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import density
from .errors import ConfigurationError, NumericalError

__all__ = ["KernelQuery", "DiscretizedKernel", "kernel_prob",
           "first_fire_probability", "discretize_kernel", "time_resolved_report"]

_GX, _GW = leggauss(64)


@dataclass(frozen=True)
class KernelQuery:
    """Lags per coordinate plus the target (coordinate, sign, time interval)."""

    lags: np.ndarray           # (d,) nonnegative, in time units
    coord: int                 # 1-based
    sign: int                  # +1 or -1
    interval: tuple[float, float]

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=float)
        object.__setattr__(self, "lags", lags)
        a, b = self.interval
        if not (0 <= a < b):
            raise ConfigurationError(f"need 0 <= a < b, got {self.interval}")
        if np.any(~np.isfinite(lags)) or np.any(lags < 0):
            raise ConfigurationError("lags must be finite and >= 0")
        if not 1 <= self.coord <= len(lags):
            raise ConfigurationError(f"coord {self.coord} outside 1..{len(lags)}")
        if self.sign not in (-1, 1):
            raise ConfigurationError("sign must be +-1")


@dataclass(frozen=True)
class DiscretizedKernel:
    """Finite-support approximation of the one-step kernel."""

    delta_t: np.ndarray   # (m,) node times
    coords: np.ndarray    # (m,) 1-based coordinates
    signs: np.ndarray     # (m,) +-1
    weights: np.ndarray   # (m,) nonnegative, sum 1

    def __post_init__(self):
        for name in ("delta_t", "coords", "signs", "weights"):
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("kernel weights must be >= 0 and sum to 1")

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def mean_delta_t(self) -> float:
        return float(self.weights @ self.delta_t)


def _tail(x):
    return density.survival_tau(x)


_FF_CACHE: dict[tuple, float] = {}


def _first_fire_factor(lags_u: np.ndarray, j0: int, rel_tol: float = 1e-8) -> float:
    """Second factor of the product formula, in unit-tau coordinates.

    Evaluates the double integral over the bounded box (0, X)^2 obtained by
    the substitution s -> -r, truncated at the tail cutoff X; panel count
    doubles until the relative change is below rel_tol (budget split between
    the two nested rules).  Interval- and sign-independent, so results are
    memoized on (lags, coordinate).
    """
    cache_key = (tuple(np.round(lags_u, 14)), j0)
    if cache_key in _FF_CACHE:
        return _FF_CACHE[cache_key]
    d = len(lags_u)
    X = density.TAIL_CUTOFF
    denom = float(np.prod(_tail(lags_u)))
    if denom <= 0:
        raise NumericalError("all-coordinate tail mass underflowed")
    others = [lam for lam in range(d) if lam != j0]

    # Nested fixed rule with panel doubling, vectorized over both axes.
    def evaluate(panels: int) -> float:
        edges = np.linspace(0.0, X, panels + 1)
        midr = 0.5 * (edges[1:] + edges[:-1])
        halfr = 0.5 * (edges[1:] - edges[:-1])
        rr = (midr[:, None] + halfr[:, None] * _GX).ravel()
        wr = (halfr[:, None] * np.broadcast_to(_GW, (panels, 64))).ravel()
        # inner integral over t in (r, r+X) with the same panel count
        acc = np.zeros_like(rr)
        for p in range(panels):
            lo_f = p / panels
            hi_f = (p + 1) / panels
            t_mid = rr + (lo_f + hi_f) / 2.0 * X
            t_half = (hi_f - lo_f) / 2.0 * X
            tt = t_mid[:, None] + t_half * _GX
            # 14 series terms keep truncation < 1e-15 on this domain
            integ = density.f_tau((tt - rr[:, None]) + lags_u[j0], 14)
            for lam in others:
                integ = integ * density.f_tau(tt + lags_u[lam], 14)
            acc += t_half * (integ @ _GW)
        return float(wr @ acc)

    prev = evaluate(4)
    for panels in (8, 16, 32):
        cur = evaluate(panels)
        if abs(cur - prev) <= rel_tol * max(abs(cur), 1e-30):
            _FF_CACHE[cache_key] = cur / denom
            return _FF_CACHE[cache_key]
        prev = cur
    raise NumericalError(
        f"first-fire quadrature did not converge (last change "
        f"{abs(cur - prev):.3e} at {panels} panels, lags={lags_u})")


def kernel_prob(q: KernelQuery, eps_k: float) -> float:
    """Probability mass the kernel assigns to the query's cell."""
    if eps_k <= 0:
        raise ConfigurationError(f"eps_k must be > 0, got {eps_k}")
    a_u, b_u = q.interval[0] / eps_k**2, q.interval[1] / eps_k**2
    d = len(q.lags)
    if d == 1:
        return 0.5 * float(density.cdf_tau(b_u) - density.cdf_tau(a_u))
    lags_u = q.lags / eps_k**2
    j0 = q.coord - 1
    dj = lags_u[j0]
    tail_j = _tail(dj)
    if tail_j <= 0:
        raise NumericalError(f"lag {q.lags[j0]} beyond density support")
    if np.isfinite(b_u):
        factor1 = float(density.cdf_tau(b_u + dj) - density.cdf_tau(a_u + dj)) / tail_j
    else:
        factor1 = float(_tail(a_u + dj)) / tail_j
    factor2 = _first_fire_factor(lags_u, j0)
    return 0.5 * factor1 * factor2


def first_fire_probability(lags, coord: int, eps_k: float) -> float:
    """P{next merged event is fired by `coord`} (both signs combined)."""
    lags = np.asarray(lags, dtype=float)
    if len(lags) == 1:
        return 1.0
    return _first_fire_factor(lags / eps_k**2, coord - 1)


# one cached d=1 discretization per (eps, Q, rule); the d=1 kernel is
# history-free so a single table serves the whole run
_D1_CACHE: dict[tuple, DiscretizedKernel] = {}


def discretize_kernel(lags, eps_k: float, Q: int, rule: str = "quantile") -> DiscretizedKernel:
    """Finite-support one-step kernel for the DP tree.

    d=1: quantize tau, scale nodes by eps^2, split each node into +-1 at half
    weight.  d>1: quantile nodes of the mixture delta-t marginal, then per
    node the (coord, sign) weights come from kernel_prob over the node's
    slice; weights renormalized to kill residual quadrature drift.
    """
    lags = np.asarray(lags, dtype=float)
    d = len(lags)
    if d == 1:
        key = (round(float(eps_k), 15), Q, rule)
        if key not in _D1_CACHE:
            quant = density.quantize_tau(Q, rule)
            nodes = np.repeat(quant.nodes * eps_k**2, 2)
            signs = np.tile([1, -1], Q)
            coords = np.ones(2 * Q, dtype=np.int64)
            weights = np.repeat(quant.weights / 2.0, 2)
            _D1_CACHE[key] = DiscretizedKernel(nodes, coords, signs, weights)
        return _D1_CACHE[key]

    if rule != "quantile":
        raise ConfigurationError("d>1 discretization supports only the quantile rule")
    lags_u = lags / eps_k**2
    pfirst = np.array([_first_fire_factor(lags_u, j) for j in range(d)])
    pfirst = pfirst / pfirst.sum()  # exact at d=2; renormalizes residue for d>2

    def mixture_cdf(x_u):
        # the kernel's delta-t marginal: mixture of residual marginals
        out = 0.0
        for j in range(d):
            tail_j = _tail(lags_u[j])
            out += pfirst[j] * (density.cdf_tau(x_u + lags_u[j])
                                - density.cdf_tau(lags_u[j])) / tail_j
        return out

    # quantile edges of the mixture by bisection
    edges_u = [0.0]
    for q in range(1, Q):
        lo, hi = 1e-8, density.TAIL_CUTOFF + max(lags_u)
        target = q / Q
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if mixture_cdf(mid) < target:
                lo = mid
            else:
                hi = mid
        edges_u.append(0.5 * (lo + hi))
    edges_u.append(np.inf)

    nodes, coords, signs, weights = [], [], [], []
    for i in range(Q):
        a_u, b_u = edges_u[i], edges_u[i + 1]
        # node at the conditional mean of the mixture on the slice
        num = 0.0
        for j in range(d):
            tail_j = _tail(lags_u[j])
            hi_u = b_u if np.isfinite(b_u) else density.TAIL_CUTOFF + 5.0
            xs = np.linspace(a_u, hi_u, 65)
            mids = 0.5 * (xs[1:] + xs[:-1])
            fs = density.f_tau(np.maximum(mids + lags_u[j], 1e-12))
            num += pfirst[j] * np.sum(mids * fs * np.diff(xs)) / tail_j
        node_u = num * Q
        for j in range(1, d + 1):
            p_cell = kernel_prob(
                KernelQuery(lags, j, 1, (a_u * eps_k**2,
                                         b_u * eps_k**2 if np.isfinite(b_u) else np.inf)),
                eps_k)
            for s in (1, -1):
                nodes.append(node_u * eps_k**2)
                coords.append(j)
                signs.append(s)
                weights.append(p_cell)
    weights = np.asarray(weights)
    weights = weights / weights.sum()
    return DiscretizedKernel(np.asarray(nodes), np.asarray(coords, dtype=np.int64),
                             np.asarray(signs, dtype=np.int64), weights)


def time_resolved_report(lags, eps_k: float, observed_cells: dict, n_draws: int) -> list[str]:
    """Compare the product-form kernel against observed time-binned frequencies.

    observed_cells maps (coord, sign, (a, b)) -> count.  Returns human-readable
    lines flagging cells whose observed frequency deviates beyond 4 standard
    errors; the formula is exact on (coord, sign) x (0, inf) cells at d = 2
    but only approximate on time-resolved cells, so flags here are expected
    and reported rather than corrected.
    """
    lines = []
    for (coord, sign, (a, b)), count in sorted(observed_cells.items()):
        p_hat = count / n_draws
        p_formula = kernel_prob(KernelQuery(np.asarray(lags, float), coord, sign,
                                            (a, b)), eps_k)
        se = max(np.sqrt(p_hat * (1 - p_hat) / n_draws), 1.0 / n_draws)
        flag = "DEVIATES" if abs(p_hat - p_formula) > 4 * se else "ok"
        lines.append(
            f"cell(j={coord}, sign={sign:+d}, dt in [{a:.4g},{b:.4g})): "
            f"formula={p_formula:.5f} observed={p_hat:.5f} (4se={4*se:.5f}) {flag}")
    return lines
