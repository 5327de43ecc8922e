"""
Stochastic Service
Monte-Carlo side of the heat flow on H^d:
  - planar Brownian motion with Levy area (Ito left-endpoint accumulator)
  - Feynman-Kac estimates u(t, p) = E[psi0(p . (B_t, A_t))]
  - the Gaussian jump chain X_n, its piecewise-horizontal interpolation Z_n,
    modulus-of-continuity / tightness tables and weak-convergence statistics.

Large path counts are split into blocks; block i draws from rng.derive(i), so
estimates do not depend on the worker count.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import DimensionMismatchError, HeisenbergError, RepresentationError
from app.services.field import Field, GridSpec, Repr, interpolate_many
from app.services.hgroup import (
    HPoint,
    horizontal_segment_arrays,
    koranyi_dist_arrays,
    left_translate,
    sigma_arrays,
)
from app.services.rng import RngStream
from app.utils.parallel import map_slices


logger = logging.getLogger("stochastic")

BLOCK_PATHS = 16384
MIN_PATHS = 2
SCHEMES = ("ito", "midpoint")


# ============ Types ============

@dataclass
class BMPath:
    """Brownian motion b(t) in R^{2d} and its Levy area on a uniform time grid."""

    times: np.ndarray
    b: np.ndarray
    levy: np.ndarray

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def endpoint(self) -> np.ndarray:
        """(b(T), A(T)) as a point of H^d."""
        return np.concatenate([self.b[-1], [self.levy[-1]]])


@dataclass
class PathSample:
    """kind 'jump' (cadlag step path) or 'interpolated' (continuous); points (K, 2d + 1)."""

    kind: str
    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        if self.kind not in ("jump", "interpolated"):
            raise HeisenbergError(f"unknown path kind {self.kind!r}")
        if self.points.shape[0] != self.times.shape[0]:
            raise DimensionMismatchError("path needs one point per time")

    def hpoints(self) -> List[HPoint]:
        return [HPoint.from_array(p) for p in self.points]


@dataclass
class FKEstimate:
    value: complex
    se: float
    paths: int
    clipped: int = 0


@dataclass(frozen=True)
class GaussianBump:
    """Isotropic test function exp(-|p - center|^2 / (2 width^2)) on H^d."""

    center: HPoint
    width: float

    def __call__(self, points: np.ndarray) -> np.ndarray:
        diff = np.asarray(points, dtype=float) - self.center.to_array()
        return np.exp(-0.5 * np.sum(diff * diff, axis=-1) / self.width ** 2)

    def field(self, grid: GridSpec) -> Field:
        return Field.from_function(grid, lambda z, s: self(np.concatenate([z, s[..., None]], axis=-1)))


def default_bumps(d: int = 1) -> List[GaussianBump]:
    """Five centers times two widths."""
    dim = 2 * d
    centers = [
        np.zeros(dim + 1),
        np.concatenate([0.7 * np.eye(dim)[0], [0.0]]),
        np.concatenate([-0.7 * np.eye(dim)[-1], [0.0]]),
        np.concatenate([np.zeros(dim), [0.8]]),
        np.concatenate([0.5 * np.ones(dim), [-0.8]]),
    ]
    return [GaussianBump(HPoint.from_array(c), w) for w in (0.6, 1.0) for c in centers]


# ============ Brownian motion with Levy area ============

def _area_increment(b: np.ndarray, db: np.ndarray, scheme: str) -> np.ndarray:
    if scheme == "ito":
        return sigma_arrays(b, db)
    return sigma_arrays(b + 0.5 * db, db)


def sample_bm_levy(t: float, steps: int, rng: RngStream, d: int = 1, scheme: str = "ito") -> BMPath:
    """Euler-Maruyama path with A_{k+1} = A_k + sum_j (B2_j dB1_j - B1_j dB2_j)."""
    if steps < 1:
        raise HeisenbergError(f"steps must be >= 1, got {steps}")
    if scheme not in SCHEMES:
        raise HeisenbergError(f"unknown Levy-area scheme {scheme!r}")
    h = t / steps
    increments = rng.generator().standard_normal((steps, 2 * d)) * math.sqrt(h)
    b = np.zeros((steps + 1, 2 * d))
    levy = np.zeros(steps + 1)
    for k in range(steps):
        b[k + 1] = b[k] + increments[k]
        levy[k + 1] = levy[k] + _area_increment(b[k], increments[k], scheme)
    return BMPath(np.linspace(0.0, t, steps + 1), b, levy)


def _bm_block(t: float, steps: int, paths: int, stream: RngStream, d: int, scheme: str) -> Tuple[np.ndarray, np.ndarray]:
    gen = stream.generator()
    root = math.sqrt(t / steps)
    b = np.zeros((paths, 2 * d))
    area = np.zeros(paths)
    for _ in range(steps):
        db = gen.standard_normal((paths, 2 * d)) * root
        area += _area_increment(b, db, scheme)
        b += db
    return b, area


def sample_bm_levy_batch(
    t: float,
    steps: int,
    paths: int,
    rng: RngStream,
    d: int = 1,
    scheme: str = "ito",
    threads: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Terminal (B_t, A_t) for `paths` independent paths: shapes (paths, 2d), (paths,)."""
    if steps < 1 or paths < 1:
        raise HeisenbergError("steps and paths must be >= 1")
    if scheme not in SCHEMES:
        raise HeisenbergError(f"unknown Levy-area scheme {scheme!r}")
    sizes = [min(BLOCK_PATHS, paths - start) for start in range(0, paths, BLOCK_PATHS)]
    blocks = map_slices(lambda i: _bm_block(t, steps, sizes[i], rng.derive(i), d, scheme), len(sizes), threads)
    return np.concatenate([b for b, _ in blocks]), np.concatenate([a for _, a in blocks])


def _require_paths(paths: int):
    if paths < MIN_PATHS:
        raise HeisenbergError(f"standard errors need at least {MIN_PATHS} paths, got {paths}")


def levy_area_variance(t: float, d: int = 1) -> float:
    return d * t * t


def levy_area_characteristic(lam: np.ndarray, t: float, d: int = 1) -> np.ndarray:
    """E[exp(i lam A_t)] = sech(lam t)^d."""
    return 1.0 / np.cosh(np.asarray(lam, dtype=float) * t) ** d


def levy_area_statistics(
    t: float,
    steps: int,
    paths: int,
    rng: RngStream,
    lambdas: Sequence[float] = (0.5, 1.0, 2.0),
    d: int = 1,
    scheme: str = "ito",
) -> Dict[str, object]:
    """Mean, variance and characteristic-function estimates of A_t with standard errors."""
    _require_paths(paths)
    _, area = sample_bm_levy_batch(t, steps, paths, rng, d, scheme)
    n = area.size
    centered = area - area.mean()
    var = float(np.mean(centered ** 2) * n / (n - 1))
    char = []
    for lam in lambdas:
        c = np.cos(lam * area)
        char.append({"lambda": float(lam), "value": float(c.mean()), "se": float(c.std(ddof=1) / math.sqrt(n))})
    return {
        "mean": float(area.mean()),
        "se_mean": float(area.std(ddof=1) / math.sqrt(n)),
        "var": var,
        "se_var": float(np.std(area ** 2, ddof=1) / math.sqrt(n)),
        "char": char,
        "paths": n,
    }


# ============ Feynman-Kac ============

def fk_estimate(
    f0: Field,
    p: HPoint,
    t: float,
    paths: int,
    steps: int,
    rng: RngStream,
    scheme: str = "ito",
    threads: Optional[int] = None,
) -> FKEstimate:
    """E[psi0(x + B1, y + B2, s + y.B1 - x.B2 + A_t)] with cubic reads of psi0."""
    _require_paths(paths)
    if f0.repr != Repr.PHYSICAL:
        raise RepresentationError("fk_estimate expects a physical field")
    if p.d != f0.grid.d:
        raise DimensionMismatchError(f"probe in H^{p.d} for a field over H^{f0.grid.d}")
    if t < 0:
        raise HeisenbergError(f"time must be >= 0, got {t}")
    if t == 0:
        values, clipped = interpolate_many(f0, p.to_array()[None, :])
        return FKEstimate(complex(values[0]), 0.0, paths, clipped)
    b, area = sample_bm_levy_batch(t, steps, paths, rng, f0.grid.d, scheme, threads)
    endpoints = left_translate(np.column_stack([b, area]), p)
    values, clipped = interpolate_many(f0, endpoints)
    se = math.sqrt((np.var(values.real, ddof=1) + np.var(values.imag, ddof=1)) / values.size)
    return FKEstimate(complex(np.mean(values)), se, values.size, clipped)


# ============ Jump chain and geodesic interpolation ============

def _chain_steps(n: int, horizon: float) -> int:
    return int(math.floor(n * horizon + 1e-9))


def sample_jump_batch(start: HPoint, n: int, steps: int, paths: int, rng: RngStream) -> np.ndarray:
    """Chain points Y_0..Y_steps for many paths, shape (paths, steps + 1, 2d + 1)."""
    if n < 1:
        raise HeisenbergError(f"n must be >= 1, got {n}")
    dim = 2 * start.d
    gen = rng.generator()
    out = np.empty((paths, steps + 1, dim + 1))
    out[:, 0] = start.to_array()
    for k in range(steps):
        xi = gen.standard_normal((paths, dim)) * math.sqrt(n)
        out[:, k + 1] = horizontal_segment_arrays(out[:, k], xi, 1.0 / n)
    return out


def sample_jump_path(start: HPoint, n: int, horizon: float, rng: RngStream) -> PathSample:
    """Y_{k+1} = (z_k + zeta / sqrt(n), s_k + sigma(z_k, zeta) / sqrt(n)); X_n(t) = Y_floor(nt)."""
    steps = _chain_steps(n, horizon)
    points = sample_jump_batch(start, n, steps, 1, rng)[0]
    return PathSample("jump", np.arange(steps + 1) / n, points)


def interpolate_geodesic_batch(points: np.ndarray, n: int, substeps: int = 8) -> np.ndarray:
    """Horizontal segments with velocity (z_{k+1} - z_k) n between chain points.

    points (paths, K + 1, D) -> (paths, K * substeps + 1, D); every substeps-th
    sample is a chain point.
    """
    steps = points.shape[1] - 1
    if steps == 0:
        return points.copy()
    r = np.arange(substeps) / (n * substeps)
    starts = points[:, :-1]
    xi = (points[:, 1:, :-1] - points[:, :-1, :-1]) * n
    fine = horizontal_segment_arrays(
        starts[:, :, None, :], xi[:, :, None, :], np.broadcast_to(r, starts.shape[:2] + (substeps,))
    )
    fine = fine.reshape(points.shape[0], steps * substeps, points.shape[2])
    return np.concatenate([fine, points[:, -1:]], axis=1)


def interpolate_geodesic(jump: PathSample, substeps: int = 8) -> PathSample:
    if jump.kind != "jump":
        raise HeisenbergError("interpolate_geodesic expects a jump path")
    if jump.times.size < 2:
        return PathSample("interpolated", jump.times.copy(), jump.points.copy())
    dt = float(jump.times[1] - jump.times[0])
    n = int(round(1.0 / dt))
    fine = interpolate_geodesic_batch(jump.points[None], n, substeps)[0]
    times = jump.times[0] + np.arange(fine.shape[0]) * dt / substeps
    return PathSample("interpolated", times, fine)


# ============ Modulus of continuity ============

def _max_lag(dt: float, n_samples: int, horizon: float, delta: float, kind: str) -> int:
    if delta >= horizon:
        return n_samples - 1
    # a cadlag step path reaches index gap `lag` with |t - s| just above (lag - 1) dt
    slack = 1 if kind == "jump" else 0
    lag = int(math.ceil(delta / dt - 1e-9)) - 1 + slack
    return max(0, min(lag, n_samples - 1))


def modulus_batch(points: np.ndarray, dt: float, horizon: float, delta: float, kind: str = "interpolated") -> np.ndarray:
    """w_T(path, delta) in the Koranyi gauge for paths (P, K, D) sampled every dt."""
    if delta <= 0:
        raise HeisenbergError(f"delta must be positive, got {delta}")
    n_samples = min(points.shape[1], int(math.floor(horizon / dt + 1e-9)) + 1)
    points = points[:, :n_samples]
    max_lag = _max_lag(dt, n_samples, horizon, delta, kind)
    w = np.zeros(points.shape[0])
    for lag in range(1, max_lag + 1):
        dist = koranyi_dist_arrays(points[:, :-lag], points[:, lag:])
        w = np.maximum(w, dist.max(axis=1))
    return w


def modulus_of_continuity(path: PathSample, horizon: float, delta: float) -> float:
    if path.times.size < 2:
        if delta <= 0:
            raise HeisenbergError(f"delta must be positive, got {delta}")
        return 0.0
    dt = float(path.times[1] - path.times[0])
    return float(modulus_batch(path.points[None], dt, horizon, delta, path.kind)[0])


def tightness_diagnostic(
    n_list: Sequence[int],
    delta_list: Sequence[float],
    eps: float,
    horizon: float,
    paths: int,
    rng: RngStream,
    start: Optional[HPoint] = None,
    substeps: int = 4,
) -> List[Dict[str, float]]:
    """P^(w_T(Z_n, delta) >= eps) for every (n, delta); all deltas share the same paths."""
    start = start or HPoint.identity()
    rows = []
    for n in n_list:
        steps = _chain_steps(n, horizon)
        chain = sample_jump_batch(start, n, steps, paths, rng.derive(n))
        fine = interpolate_geodesic_batch(chain, n, substeps)
        dt = 1.0 / (n * substeps)
        p_hats = []
        for delta in sorted(delta_list, reverse=True):
            w = modulus_batch(fine, dt, horizon, delta, "interpolated")
            p_hat = float(np.mean(w >= eps))
            p_hats.append(p_hat)
            rows.append({
                "n": int(n), "delta": float(delta), "eps": float(eps),
                "p_hat": p_hat, "se": math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / paths),
            })
        if any(b > a for a, b in zip(p_hats, p_hats[1:])):
            logger.warning(f"tightness table for n={n} is not monotone in delta: {p_hats}")
        logger.info(f"tightness n={n}: " + ", ".join(f"{p:.4f}" for p in p_hats))
    return rows


# ============ Weak convergence ============

def semigroup_reference(bump: GaussianBump, t: float, start: HPoint, grid: GridSpec, n_ref: int = 64) -> float:
    """(e^{tL/2} f)(start) from the Mehler oracle (d = 1) or a dense Chernoff run."""
    f = bump.field(grid)
    if grid.d == 1:
        from app.services.magnetic import oracle_evolve

        evolved = oracle_evolve(f, t, "heat")
    else:
        from app.services.heat import HeatStepMethod, chernoff_evolve_heat

        evolved = chernoff_evolve_heat(f, t, n_ref, m=HeatStepMethod.dense())
    values, _ = interpolate_many(evolved, start.to_array()[None, :])
    return float(values[0].real)


def walk_positions(start: HPoint, n: int, t: float, paths: int, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
    """(X_n(t), Z_n(t)) for `paths` chains started at `start`."""
    k = _chain_steps(n, t)
    r = t - k / n
    need = k + 1 if r > 1e-12 else k
    chain = sample_jump_batch(start, n, need, paths, rng)
    x = chain[:, k]
    if need == k:
        return x, x.copy()
    xi = (chain[:, k + 1, :-1] - chain[:, k, :-1]) * n
    return x, horizontal_segment_arrays(x, xi, np.full(paths, r))


def weak_convergence_stat(
    n: int,
    t: float,
    testfns: Sequence[GaussianBump],
    start: HPoint,
    paths: int,
    rng: RngStream,
    grid: Optional[GridSpec] = None,
    references: Optional[Sequence[float]] = None,
) -> List[Dict[str, float]]:
    """|mean f(Z_n(t)) - (V(t) f)(start)| and the same for X_n, per test function."""
    _require_paths(paths)
    if references is None:
        if grid is None:
            raise HeisenbergError("weak_convergence_stat needs a grid or precomputed references")
        references = [semigroup_reference(f, t, start, grid) for f in testfns]
    x, z = walk_positions(start, n, t, paths, rng)
    rows = []
    for i, (f, ref) in enumerate(zip(testfns, references)):
        fx, fz = f(x), f(z)
        rows.append({
            "bump": i, "n": int(n), "t": float(t), "reference": float(ref),
            "mean_x": float(fx.mean()), "mean_z": float(fz.mean()),
            "disc_x": float(abs(fx.mean() - ref)), "disc_z": float(abs(fz.mean() - ref)),
            "se_x": float(fx.std(ddof=1) / math.sqrt(paths)),
            "se_z": float(fz.std(ddof=1) / math.sqrt(paths)),
        })
    return rows


def weak_convergence_trend(rows: Sequence[Dict[str, float]], key: str = "z", se_multiple: float = 3.0) -> List[Dict[str, object]]:
    """Per test function: is |E f - V f| non-increasing in n up to noise?

    Consecutive n pass when disc(n') <= disc(n) + se_multiple * sqrt(se(n)^2 + se(n')^2).
    """
    by_bump: Dict[int, List[Dict[str, float]]] = {}
    for row in rows:
        by_bump.setdefault(int(row["bump"]), []).append(row)
    out = []
    for bump, series in sorted(by_bump.items()):
        series = sorted(series, key=lambda r: r["n"])
        disc = [r[f"disc_{key}"] for r in series]
        se = [r[f"se_{key}"] for r in series]
        slack = [se_multiple * math.hypot(a, b) for a, b in zip(se, se[1:])]
        passed = all(b <= a + s for a, b, s in zip(disc, disc[1:], slack))
        out.append({"bump": bump, "ns": [int(r["n"]) for r in series], "disc": disc, "passed": bool(passed)})
    return out
