"""Discrete-type skeleton of d-dimensional Brownian motion.

Each coordinate j is observed only at the times where it moves by exactly
+-eps from its previously recorded level.  Inter-arrival times per coordinate
are i.i.d. eps^2 * tau (tau = unit-barrier exit time), signs are i.i.d. fair
coin flips, coordinates are independent, and the merged event sequence is the
order statistics of all per-coordinate hitting times.

Coordinates are 1-based on every public surface (matching the sign-vector
convention); `SkeletonPath.coords` therefore stores values in 1..d.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import density
from .errors import ConfigurationError

__all__ = [
    "SkeletonConfig",
    "SkeletonPath",
    "History",
    "aleph",
    "sample_skeleton",
    "reconstruct_A",
    "last_hit_indices",
    "elapsed_times",
    "brownian_fine_path",
    "crossing_sample_skeleton",
    "path_to_csv",
    "path_from_csv",
]


@dataclass(frozen=True)
class SkeletonConfig:
    """epsilon_k, dimension, horizon and (merged) step count.

    n_steps defaults to e(k,T) = d * ceil(eps^-2 T), the number of merged
    events needed to cover [0, T] as eps shrinks.
    """

    epsilon_k: float
    d: int = 1
    horizon_T: float = 1.0
    n_steps: int | None = None

    def __post_init__(self):
        if self.epsilon_k <= 0:
            raise ConfigurationError(f"epsilon_k must be > 0, got {self.epsilon_k}")
        if self.d < 1:
            raise ConfigurationError(f"d must be >= 1, got {self.d}")
        if self.horizon_T <= 0:
            raise ConfigurationError(f"horizon_T must be > 0, got {self.horizon_T}")
        if self.n_steps is None:
            object.__setattr__(self, "n_steps", self.e_kT)
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def e_kT(self) -> int:
        return self.d * math.ceil(self.epsilon_k**-2 * self.horizon_T)


def aleph(sign_vec) -> tuple[int, int]:
    """(coordinate j, sign r) of the unique nonzero entry; j is 1-based."""
    arr = np.asarray(sign_vec)
    nz = np.flatnonzero(arr)
    if nz.size != 1 or abs(arr[nz[0]]) != 1:
        raise ConfigurationError(f"not a unit sign-vector: {sign_vec!r}")
    return int(nz[0]) + 1, int(arr[nz[0]])


def _sign_vec(coord: int, sign: int, d: int) -> np.ndarray:
    v = np.zeros(d, dtype=np.int64)
    v[coord - 1] = sign
    return v


@dataclass
class SkeletonPath:
    """Realized chain: merged inter-arrival times and active (coord, sign)."""

    epsilon_k: float
    d: int
    delta_t: np.ndarray  # (n,) positive
    coords: np.ndarray   # (n,) ints in 1..d
    signs: np.ndarray    # (n,) ints in {-1, +1}

    def __post_init__(self):
        self.delta_t = np.asarray(self.delta_t, dtype=float)
        self.coords = np.asarray(self.coords, dtype=np.int64)
        self.signs = np.asarray(self.signs, dtype=np.int64)
        if not (len(self.delta_t) == len(self.coords) == len(self.signs)):
            raise ConfigurationError("delta_t, coords, signs must share length")
        if np.any(self.delta_t <= 0):
            raise ConfigurationError("all delta_t must be > 0")
        if np.any((self.coords < 1) | (self.coords > self.d)):
            raise ConfigurationError("coords must lie in 1..d")
        if np.any(np.abs(self.signs) != 1):
            raise ConfigurationError("signs must be +-1")

    def __len__(self) -> int:
        return len(self.delta_t)

    @property
    def cum_times(self) -> np.ndarray:
        return np.cumsum(self.delta_t)

    @property
    def steps(self):
        """(delta_t, sign_vec) pairs, sign_vec a d-vector with one +-1."""
        return [
            (float(dt), _sign_vec(int(c), int(s), self.d))
            for dt, c, s in zip(self.delta_t, self.coords, self.signs)
        ]

    def per_coordinate_times(self, j: int) -> np.ndarray:
        """Hitting times of coordinate j (1-based), in increasing order."""
        if not 1 <= j <= self.d:
            raise ConfigurationError(f"coordinate {j} outside 1..{self.d}")
        return self.cum_times[self.coords == j]

    def prefix(self, n: int) -> "SkeletonPath":
        return SkeletonPath(self.epsilon_k, self.d, self.delta_t[:n],
                            self.coords[:n], self.signs[:n])


@dataclass
class History:
    """Interleaved (action, delta_t, sign) triples: the DP state.

    Actions live in the compact box [-a_bar, a_bar]^m.
    """

    epsilon_k: float
    d: int
    actions: list = field(default_factory=list)
    delta_t: list = field(default_factory=list)
    coords: list = field(default_factory=list)
    signs: list = field(default_factory=list)
    a_bar: float = float("inf")

    def append(self, action, dt: float, coord: int, sign: int):
        if dt <= 0:
            raise ConfigurationError("delta_t must be > 0")
        if not 1 <= coord <= self.d or sign not in (-1, 1):
            raise ConfigurationError("bad (coord, sign)")
        if np.max(np.abs(np.asarray(action, dtype=float))) > self.a_bar + 1e-15:
            raise ConfigurationError("action outside [-a_bar, a_bar]")
        self.actions.append(action)
        self.delta_t.append(float(dt))
        self.coords.append(int(coord))
        self.signs.append(int(sign))

    def __len__(self) -> int:
        return len(self.delta_t)

    def noise_part(self) -> list[tuple[float, int, int]]:
        """The b^k_n component: (delta_t, coord, sign) triples."""
        return list(zip(self.delta_t, self.coords, self.signs))


def _coordinate_stream(seed: int, j: int):
    """Counter-based stream for coordinate j (1-based), independent of others."""
    key = np.array([np.uint64(seed) & np.uint64(2**64 - 1), np.uint64(j)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_skeleton(cfg: SkeletonConfig, seed: int) -> SkeletonPath:
    """Draw the first cfg.n_steps merged events of the skeleton.

    Per coordinate, inter-arrival times are eps^2 * tau sampled by inverse
    CDF and signs are fair coin flips, drawn in fixed-size chunks from one
    Philox stream per coordinate so the result is reproducible regardless
    of how far each coordinate must be extended.
    """
    eps2 = cfg.epsilon_k**2
    n = cfg.n_steps
    gens = [_coordinate_stream(seed, j) for j in range(1, cfg.d + 1)]
    chunk = max(64, int(1.3 * n / cfg.d) + 8)
    times = [np.empty(0) for _ in range(cfg.d)]
    sgn = [np.empty(0, dtype=np.int64) for _ in range(cfg.d)]

    def extend(j):
        u = gens[j].random((chunk, 2))
        dt = eps2 * density.inverse_cdf_tau(np.clip(u[:, 0], 1e-16, 1 - 1e-16))
        base = times[j][-1] if len(times[j]) else 0.0
        times[j] = np.concatenate([times[j], base + np.cumsum(dt)])
        sgn[j] = np.concatenate([sgn[j], np.where(u[:, 1] < 0.5, 1, -1)])

    for j in range(cfg.d):
        extend(j)
    while True:
        # the merge is valid up to the smallest per-coordinate frontier
        frontier = min(times[j][-1] for j in range(cfg.d))
        counts = sum(int(np.searchsorted(times[j], frontier, side="right"))
                     for j in range(cfg.d))
        if counts >= n:
            break
        extend(int(np.argmin([times[j][-1] for j in range(cfg.d)])))

    all_t = np.concatenate(times)
    all_c = np.concatenate([np.full(len(times[j]), j + 1, dtype=np.int64)
                            for j in range(cfg.d)])
    all_s = np.concatenate(sgn)
    order = np.argsort(all_t, kind="stable")  # ties: lower coordinate first
    merged_t = all_t[order][:n]
    if n > 1 and np.any(np.diff(merged_t) <= 0):
        raise ConfigurationError("tied merged times; continuous sampling broken")
    dts = np.diff(np.concatenate([[0.0], merged_t]))
    return SkeletonPath(cfg.epsilon_k, cfg.d, dts, all_c[order][:n], all_s[order][:n])


def reconstruct_A(path: SkeletonPath, j: int, t: float) -> float:
    """Value of the jump process A^{k,j} at time t (right-continuous)."""
    if t < 0:
        raise ConfigurationError("t must be >= 0")
    mask = path.coords == j
    tj = path.cum_times[mask]
    k = int(np.searchsorted(tj, t, side="right"))
    return path.epsilon_k * float(np.sum(path.signs[mask][:k]))


def _coords_of(bk) -> np.ndarray:
    """Accept sign-history as (n,d) sign-vector array or (coord, sign) pairs."""
    if isinstance(bk, SkeletonPath):
        return bk.coords
    if isinstance(bk, History):
        return np.asarray(bk.coords, dtype=np.int64)
    arr = np.asarray(bk)
    if arr.size == 0:
        return np.empty(0, dtype=np.int64)
    if arr.ndim == 2:  # rows are sign vectors
        return np.argmax(np.abs(arr), axis=1) + 1
    raise ConfigurationError("cannot interpret sign-history")


def last_hit_indices(bk, lam: int) -> int:
    """Largest 1-based step index whose active coordinate is lam, or 0."""
    coords = _coords_of(bk)
    hits = np.flatnonzero(coords == lam)
    return int(hits[-1]) + 1 if hits.size else 0


def elapsed_times(bk, d: int | None = None):
    """(t_n, per-coordinate last-hit times, per-coordinate lags).

    t_n is the total elapsed time; for each coordinate lam the last-hit time
    sums the first last_hit_indices(bk, lam) increments and the lag is the
    difference t_n minus that.  Empty history gives zeros everywhere.
    """
    if isinstance(bk, SkeletonPath):
        dts, coords, dd = bk.delta_t, bk.coords, bk.d
    elif isinstance(bk, History):
        dts, coords, dd = np.asarray(bk.delta_t), np.asarray(bk.coords), bk.d
    else:
        pairs = list(bk)
        dts = np.asarray([p[0] for p in pairs], dtype=float)
        coords = _coords_of([p[1] for p in pairs]) if pairs else np.empty(0, np.int64)
        if d is None:
            raise ConfigurationError("d required for raw (delta_t, sign_vec) input")
        dd = d
    if d is not None:
        dd = d
    cum = np.concatenate([[0.0], np.cumsum(dts)])
    t_n = float(cum[-1])
    t_lam = np.zeros(dd)
    for lam in range(1, dd + 1):
        hits = np.flatnonzero(coords == lam)
        t_lam[lam - 1] = cum[hits[-1] + 1] if hits.size else 0.0
    lags = t_n - t_lam
    return t_n, t_lam, lags


# ---------------------------------------------------------------------------
# Crossing-detection oracle: simulate a fine Brownian path and read off the
# skeleton from level crossings.  Equal in law to sample_skeleton up to the
# fine-grid overshoot; kept as the theory-free reference sampler.
# ---------------------------------------------------------------------------

def brownian_fine_path(d: int, T: float, dt: float, seed: int, stream: int = 0):
    """(t_grid, B) with B of shape (d, len(t_grid)), B[:,0] = 0."""
    n = int(math.ceil(T / dt))
    key = np.array([np.uint64(seed), np.uint64(10_000 + stream)], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    incs = gen.standard_normal((d, n)) * math.sqrt(dt)
    bm = np.concatenate([np.zeros((d, 1)), np.cumsum(incs, axis=1)], axis=1)
    return dt * np.arange(n + 1), bm


def crossing_sample_skeleton(eps: float, t_grid: np.ndarray, bm: np.ndarray,
                             n_steps: int | None = None) -> SkeletonPath:
    """Extract the skeleton of a discretely observed Brownian path.

    Levels stay on the eps-lattice anchored at the last recorded level, so
    reconstruct_A jumps are exactly +-eps; the overshoot at detection time is
    bounded by the fine-grid increment scale.
    """
    d, n_grid = bm.shape[0], bm.shape[1]
    out_t, out_c, out_s = [], [], []
    # per-coordinate forward scan in blocks to avoid a per-grid-point loop
    block = 4096
    for j in range(d):
        lev = 0.0
        i = 1
        while i < n_grid:
            hi = min(n_grid, i + block)
            seg = bm[j, i:hi]
            exc = np.abs(seg - lev) >= eps
            if not exc.any():
                i = hi
                continue
            k = i + int(np.argmax(exc))
            sign = 1 if bm[j, k] > lev else -1
            lev += sign * eps
            out_t.append(t_grid[k])
            out_c.append(j + 1)
            out_s.append(sign)
            i = k + 1
    order = np.lexsort((out_c, out_t)) if out_t else np.empty(0, np.int64)
    t = np.asarray(out_t)[order]
    c = np.asarray(out_c, dtype=np.int64)[order]
    s = np.asarray(out_s, dtype=np.int64)[order]
    if n_steps is not None:
        t, c, s = t[:n_steps], c[:n_steps], s[:n_steps]
    dts = np.diff(np.concatenate([[0.0], t]))
    keep = dts > 0  # distinct grid instants; equal-time ties cannot survive
    return SkeletonPath(eps, d, dts[keep], c[keep], s[keep])


def crossing_event_stream(eps: float, dt: float, t_total: float, seed: int,
                          stream: int = 0, block: int = 4_000_000):
    """Crossing events of one Brownian coordinate over [0, t_total].

    Streams the fine path in blocks (bounded memory) and returns
    (times, signs) of the +-eps level crossings detected on the grid.
    """
    key = np.array([np.uint64(seed), np.uint64(20_000 + stream)], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    n_total = int(math.ceil(t_total / dt))
    out_t, out_s = [], []
    lev = 0.0
    b_end = 0.0
    done = 0
    scan = 4096
    while done < n_total:
        m = min(block, n_total - done)
        seg = b_end + np.cumsum(gen.standard_normal(m) * math.sqrt(dt))
        base_idx = done
        i = 0
        while i < m:
            hi = min(m, i + scan)
            exc = np.abs(seg[i:hi] - lev) >= eps
            if not exc.any():
                i = hi
                continue
            k = i + int(np.argmax(exc))
            sign = 1 if seg[k] > lev else -1
            lev += sign * eps
            out_t.append((base_idx + k + 1) * dt)
            out_s.append(sign)
            i = k + 1
        b_end = seg[-1]
        done += m
    return np.asarray(out_t), np.asarray(out_s, dtype=np.int64)


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

_CSV_HEADER = ["step_index", "delta_t", "coord", "sign", "cum_time"]


def path_to_csv(path: SkeletonPath, fh=None) -> str | None:
    own = fh is None
    buf = io.StringIO() if own else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_CSV_HEADER)
    cum = path.cum_times
    for i in range(len(path)):
        w.writerow([i, f"{path.delta_t[i]:.17g}", int(path.coords[i]),
                    int(path.signs[i]), f"{cum[i]:.17g}"])
    return buf.getvalue() if own else None


def path_from_csv(text: str, epsilon_k: float, d: int) -> SkeletonPath:
    rows = list(csv.reader(io.StringIO(text)))
    if rows[0] != _CSV_HEADER:
        raise ConfigurationError(f"bad CSV header {rows[0]!r}")
    body = rows[1:]
    return SkeletonPath(
        epsilon_k, d,
        np.array([float(r[1]) for r in body]),
        np.array([int(r[2]) for r in body], dtype=np.int64),
        np.array([int(r[3]) for r in body], dtype=np.int64),
    )
