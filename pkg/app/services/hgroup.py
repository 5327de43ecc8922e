"""
Heisenberg Group
Exact arithmetic on H^d = R^{2d} x R with coordinates (x^1..x^d, y^1..y^d, s).

Group law: (z, s)(z', s') = (z + z', s + s' + x'.y - x.y').
Point-level helpers work on HPoint values; the *_arrays variants take stacked
coordinates of shape (..., 2d + 1) and are what the samplers use.
"""
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from app.errors import DimensionMismatchError, HeisenbergError


GaugeValue = float

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class HPoint:
    """A point (z, s) of H^d, z ordered as (x^1..x^d, y^1..y^d)."""

    z: np.ndarray
    s: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1)
        if z.size == 0 or z.size % 2:
            raise DimensionMismatchError(f"z must have even positive length, got {z.size}")
        if not (np.all(np.isfinite(z)) and np.isfinite(self.s)):
            raise HeisenbergError("HPoint components must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "s", float(self.s))

    @property
    def d(self) -> int:
        return self.z.size // 2

    @property
    def x(self) -> np.ndarray:
        return self.z[: self.d]

    @property
    def y(self) -> np.ndarray:
        return self.z[self.d:]

    @classmethod
    def identity(cls, d: int = 1) -> "HPoint":
        return cls(np.zeros(2 * d), 0.0)

    @classmethod
    def from_array(cls, coords: ArrayLike) -> "HPoint":
        coords = np.asarray(coords, dtype=float).reshape(-1)
        return cls(coords[:-1], coords[-1])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.z, [self.s]])


@dataclass(frozen=True)
class HVelocity:
    """Frame coefficients of a horizontal tangent vector in {X_1..X_d, Y_1..Y_d}."""

    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if xi.size == 0 or xi.size % 2:
            raise DimensionMismatchError(f"xi must have even positive length, got {xi.size}")
        if not np.all(np.isfinite(xi)):
            raise HeisenbergError("HVelocity components must be finite")
        object.__setattr__(self, "xi", xi)

    @property
    def d(self) -> int:
        return self.xi.size // 2


def _check_same_dim(a: int, b: int, what: str = "points"):
    if a != b:
        raise DimensionMismatchError(f"{what} have different dimensions: {a} vs {b}")


# ============ Vectorized core ============

def sigma_arrays(z: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """x'.y - x.y' over the last axis, z = (x, y), zeta = (x', y')."""
    z = np.asarray(z, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    _check_same_dim(z.shape[-1], zeta.shape[-1], "vectors")
    d = z.shape[-1] // 2
    x, y = z[..., :d], z[..., d:]
    xp, yp = zeta[..., :d], zeta[..., d:]
    return np.sum(xp * y - x * yp, axis=-1)


def ztilde_arrays(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    d = z.shape[-1] // 2
    return np.concatenate([z[..., d:], -z[..., :d]], axis=-1)


def group_mul_arrays(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_same_dim(p.shape[-1], q.shape[-1])
    zp, sp = p[..., :-1], p[..., -1]
    zq, sq = q[..., :-1], q[..., -1]
    s = sp + sq + sigma_arrays(zp, zq)
    return np.concatenate([zp + zq, s[..., None]], axis=-1)


def group_inv_arrays(p: np.ndarray) -> np.ndarray:
    return -np.asarray(p, dtype=float)


def koranyi_gauge_arrays(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    r2 = np.sum(p[..., :-1] ** 2, axis=-1)
    return (r2 ** 2 + p[..., -1] ** 2) ** 0.25


def koranyi_dist_arrays(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return koranyi_gauge_arrays(group_mul_arrays(group_inv_arrays(p), q))


def left_translate(points: np.ndarray, p: HPoint) -> np.ndarray:
    """p . points for stacked points of shape (..., 2d + 1)."""
    points = np.asarray(points, dtype=float)
    return group_mul_arrays(np.broadcast_to(p.to_array(), points.shape), points)


# ============ Point-level operations ============

def group_mul(p: HPoint, q: HPoint) -> HPoint:
    _check_same_dim(p.d, q.d)
    return HPoint.from_array(group_mul_arrays(p.to_array(), q.to_array()))


def group_inv(p: HPoint) -> HPoint:
    return HPoint(-p.z, -p.s)


def sigma_form(z: ArrayLike, zeta: ArrayLike) -> float:
    return float(sigma_arrays(np.asarray(z, dtype=float), np.asarray(zeta, dtype=float)))


def ztilde(z: ArrayLike) -> np.ndarray:
    return ztilde_arrays(np.asarray(z, dtype=float))


def dilate(p: HPoint, lam: float) -> HPoint:
    return HPoint(lam * p.z, lam * lam * p.s)


def commutator(p: HPoint, q: HPoint) -> HPoint:
    return group_mul(group_mul(group_mul(p, q), group_inv(p)), group_inv(q))


def koranyi_gauge(p: HPoint) -> GaugeValue:
    return float(koranyi_gauge_arrays(p.to_array()))


def koranyi_dist(p: HPoint, q: HPoint) -> GaugeValue:
    _check_same_dim(p.d, q.d)
    return koranyi_gauge(group_mul(group_inv(p), q))


def horizontal_segment(start: HPoint, xi: HVelocity, r: float) -> HPoint:
    """Point reached after time r along the horizontal line with frame velocity xi."""
    _check_same_dim(start.d, xi.d)
    return HPoint(start.z + r * xi.xi, start.s + r * sigma_form(start.z, xi.xi))


def horizontal_segment_arrays(start: np.ndarray, xi: np.ndarray, r: np.ndarray) -> np.ndarray:
    start = np.asarray(start, dtype=float)
    xi = np.asarray(xi, dtype=float)
    r = np.asarray(r, dtype=float)[..., None]
    z = start[..., :-1]
    s = start[..., -1:] + r * sigma_arrays(z, xi)[..., None]
    return np.concatenate([z + r * xi, s], axis=-1)


def piecewise_horizontal(start: HPoint, xis: Sequence[HVelocity], dt: float) -> List[HPoint]:
    """Nodes of the piecewise-horizontal curve with velocity xis[j] on [j dt, (j+1) dt]."""
    nodes = [start]
    for xi in xis:
        nodes.append(horizontal_segment(nodes[-1], xi, dt))
    return nodes


def horizontal_energy(xis: Sequence[HVelocity], dt: float) -> float:
    """Kinetic action sum |xi_j|^2 dt of a piecewise-horizontal curve."""
    return float(sum(np.dot(xi.xi, xi.xi) for xi in xis) * dt)


def swept_area(z_nodes: np.ndarray) -> float:
    """int z ^ dz along the polyline through z_nodes (K, 2d), summed over the d planes.

    On a straight piece from a to b the integral is a ^ b = -sigma(a, b).
    """
    z_nodes = np.asarray(z_nodes, dtype=float)
    return float(-np.sum(sigma_arrays(z_nodes[:-1], z_nodes[1:])))


def segment_basis(n: int, t: float, d: int = 1) -> List[List[HVelocity]]:
    """Velocity sequences of the unit-energy piecewise-horizontal paths on [0, t] with n pieces.

    Element (j, k) moves along horizontal direction k on the j-th piece only.
    """
    if n < 1 or t <= 0:
        raise HeisenbergError(f"segment basis needs n >= 1 and t > 0, got n={n}, t={t}")
    dt = t / n
    speed = 1.0 / np.sqrt(dt)
    basis = []
    for j in range(n):
        for k in range(2 * d):
            xis = [HVelocity(np.zeros(2 * d)) for _ in range(n)]
            xis[j] = HVelocity(speed * np.eye(2 * d)[k])
            basis.append(xis)
    return basis


def renormalization_term(basis: Sequence[Sequence[HVelocity]], dt: float) -> float:
    """Sum over basis paths of the area each one sweeps, sum_k int e_k ^ de_k."""
    total = 0.0
    for xis in basis:
        nodes = piecewise_horizontal(HPoint.identity(xis[0].d), xis, dt)
        total += swept_area(np.array([p.z for p in nodes]))
    return total
