"""
Field Service
Complex fields sampled on rectangular grids over H^d, their partial (s -> alpha)
and horizontal (z -> eta) Fourier transforms, norms and interpolation.

Array layout: axes 0..2d-1 are the horizontal axes (x^1..x^d, y^1..y^d), the
last axis is s (physical) or alpha (partial / spectral). Frequency axes are
stored in FFT order.

Transform conventions (continuum formulas discretized on the box [-L, L)):
    partial:   psi~(z, a)  = (1/2pi)      int e^{-i a s} psi(z, s) ds
    spectral:  psi^(eta,a) = (2pi)^{-2d}  int e^{-i eta.z} psi~(z, a) dz
so that psi(z, s) = int int e^{i eta.z + i a s} psi^(eta, a) d eta da.
"""
import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.fft

from app.config import settings
from app.errors import (
    BoundaryMassError,
    DimensionMismatchError,
    GridError,
    RepresentationError,
    SupportViolationError,
)
from app.services.hgroup import HPoint, ztilde_arrays
from app.utils.parallel import map_slices, resolve_threads


logger = logging.getLogger("field")

TWO_PI = 2.0 * np.pi
PACKET_MARGIN_WIDTHS = 6.0
MIN_WIDTH_OVER_SPACING = 0.5


class Repr(str, Enum):
    PHYSICAL = "physical"
    PARTIAL = "partial"
    SPECTRAL = "spectral"


# ============ Grid ============

@dataclass(frozen=True)
class GridSpec:
    """Per-axis extents L (axis covers [-L, L)) and point counts N.

    extents / counts have length 2d + 1, ordered (x.., y.., s).
    """

    extents: Tuple[float, ...]
    counts: Tuple[int, ...]

    def __post_init__(self):
        extents = tuple(float(e) for e in self.extents)
        counts = tuple(int(n) for n in self.counts)
        if len(extents) != len(counts):
            raise DimensionMismatchError("extents and counts must have the same length")
        if len(counts) < 3 or len(counts) % 2 == 0:
            raise DimensionMismatchError(f"grid needs 2d+1 axes, got {len(counts)}")
        if any(e <= 0 for e in extents):
            raise GridError(f"extents must be positive, got {extents}")
        if any(n < 4 for n in counts):
            raise GridError(f"every axis needs at least 4 points, got {counts}")
        for n in counts[:-1]:
            if n & (n - 1):
                raise GridError(f"horizontal axis point counts must be powers of two, got {n}")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def uniform(cls, d: int, extent: float, n_z: int, n_s: int, extent_s: Optional[float] = None) -> "GridSpec":
        return cls((extent,) * (2 * d) + (extent_s or extent,), (n_z,) * (2 * d) + (n_s,))

    @property
    def d(self) -> int:
        return (len(self.counts) - 1) // 2

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.counts

    @property
    def z_shape(self) -> Tuple[int, ...]:
        return self.counts[:-1]

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(2.0 * e / n for e, n in zip(self.extents, self.counts))

    def nodes(self, axis: int) -> np.ndarray:
        return -self.extents[axis] + self.spacing[axis] * np.arange(self.counts[axis])

    def frequencies(self, axis: int) -> np.ndarray:
        """Dual variable of an axis in FFT order (eta for z-axes, alpha for s)."""
        return TWO_PI * np.fft.fftfreq(self.counts[axis], d=self.spacing[axis])

    def alphas(self) -> np.ndarray:
        return self.frequencies(-1)

    def dual_spacing(self, axis: int) -> float:
        return TWO_PI / (self.counts[axis] * self.spacing[axis])

    def z_points(self) -> np.ndarray:
        """All horizontal nodes, shape (prod z_shape, 2d), C order."""
        mesh = np.meshgrid(*[self.nodes(k) for k in range(2 * self.d)], indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """(Z, S) with Z of shape counts + (2d,) and S of shape counts."""
        mesh = np.meshgrid(*[self.nodes(k) for k in range(2 * self.d + 1)], indexing="ij")
        return np.stack(mesh[:-1], axis=-1), mesh[-1]

    def broadcast_axis(self, values: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * len(self.counts)
        shape[axis] = -1
        return np.asarray(values).reshape(shape)

    def cell_volume(self, rep: Repr) -> float:
        ndim = len(self.counts)
        if rep == Repr.PHYSICAL:
            return float(np.prod(self.spacing))
        if rep == Repr.PARTIAL:
            return float(TWO_PI * self.dual_spacing(ndim - 1) * np.prod(self.spacing[:-1]))
        return float(TWO_PI ** ndim * np.prod([self.dual_spacing(k) for k in range(ndim)]))

    def z_max(self) -> float:
        return float(np.sqrt(np.sum(np.asarray(self.extents[:-1]) ** 2)))


# ============ Fields ============

@dataclass
class Field:
    grid: GridSpec
    values: np.ndarray
    repr: Repr = Repr.PHYSICAL

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise DimensionMismatchError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        self.repr = Repr(self.repr)

    def with_values(self, values: np.ndarray, rep: Optional[Repr] = None) -> "Field":
        return Field(self.grid, values, rep or self.repr)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.repr)

    @classmethod
    def zeros(cls, grid: GridSpec, rep: Repr = Repr.PHYSICAL) -> "Field":
        return cls(grid, np.zeros(grid.shape, dtype=complex), rep)

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "Field":
        """Sample fn(z, s) with z of shape (..., 2d) and s of shape (...)."""
        z, s = grid.mesh()
        return cls(grid, np.broadcast_to(fn(z, s), grid.shape).astype(complex), Repr.PHYSICAL)


@dataclass(frozen=True)
class GaussianPacketSpec:
    """Modulated Gaussian exp(-sum (p_k - c_k)^2 / (2 w_k^2) + i sum k_k (p_k - c_k))."""

    center: HPoint
    widths: Tuple[float, ...]
    momentum: Tuple[float, ...] = ()

    def __post_init__(self):
        widths = tuple(float(w) for w in self.widths)
        dim = 2 * self.center.d + 1
        if len(widths) == 1:
            widths = widths * dim
        if len(widths) != dim:
            raise DimensionMismatchError(f"packet needs {dim} widths, got {len(widths)}")
        if any(w <= 0 for w in widths):
            raise GridError(f"packet widths must be positive, got {widths}")
        momentum = tuple(float(k) for k in self.momentum) or (0.0,) * dim
        if len(momentum) != dim:
            raise DimensionMismatchError(f"packet needs {dim} momentum components, got {len(momentum)}")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "momentum", momentum)


def packet_margin(spec: GaussianPacketSpec, grid: GridSpec) -> float:
    """Smallest distance from the packet center to the box boundary, in widths."""
    center = spec.center.to_array()
    margins = [
        min(c + L, L - c) / w
        for c, L, w in zip(center, grid.extents, spec.widths)
    ]
    return float(min(margins))


def make_packet(spec: GaussianPacketSpec, grid: GridSpec) -> Field:
    if spec.center.d != grid.d:
        raise DimensionMismatchError(f"packet in H^{spec.center.d} on a grid over H^{grid.d}")
    for w, h in zip(spec.widths, grid.spacing):
        if w < MIN_WIDTH_OVER_SPACING * h:
            raise GridError(f"packet width {w} is under-resolved by spacing {h}")
    margin = packet_margin(spec, grid)
    if margin < PACKET_MARGIN_WIDTHS:
        raise SupportViolationError(
            f"packet is only {margin:.2f} widths from the boundary", margin, PACKET_MARGIN_WIDTHS
        )
    center = spec.center.to_array()
    exponent = np.zeros(grid.shape, dtype=complex)
    for axis in range(len(grid.counts)):
        u = grid.broadcast_axis(grid.nodes(axis) - center[axis], axis)
        exponent = exponent + (-0.5 * (u / spec.widths[axis]) ** 2 + 1j * spec.momentum[axis] * u)
    f = Field(grid, np.exp(exponent), Repr.PHYSICAL)
    f.values /= l2_norm(f)
    return f


# ============ Transforms ============

def _require(f: Field, rep: Repr, op: str):
    if f.repr != rep:
        raise RepresentationError(f"{op} expects a {rep.value} field, got {f.repr.value}")


def _phase(grid: GridSpec, axis: int, sign: float) -> np.ndarray:
    """exp(sign * i * freq * x0) along one axis, x0 the first node."""
    return grid.broadcast_axis(np.exp(sign * 1j * grid.frequencies(axis) * grid.nodes(axis)[0]), axis)


def partial_ft(f: Field) -> Field:
    _require(f, Repr.PHYSICAL, "partial_ft")
    grid = f.grid
    h = grid.spacing[-1]
    values = scipy.fft.fft(f.values, axis=-1, workers=resolve_threads()) * (h / TWO_PI)
    return Field(grid, values * _phase(grid, -1, -1.0), Repr.PARTIAL)


def inverse_partial_ft(f: Field) -> Field:
    _require(f, Repr.PARTIAL, "inverse_partial_ft")
    grid = f.grid
    h = grid.spacing[-1]
    values = scipy.fft.ifft(f.values * _phase(grid, -1, 1.0), axis=-1, workers=resolve_threads())
    return Field(grid, values * (TWO_PI / h), Repr.PHYSICAL)


def fft_z(f: Field) -> Field:
    _require(f, Repr.PARTIAL, "fft_z")
    grid = f.grid
    axes = tuple(range(2 * grid.d))
    values = scipy.fft.fftn(f.values, axes=axes, workers=resolve_threads())
    for k in axes:
        values *= (grid.spacing[k] / TWO_PI) * _phase(grid, k, -1.0)
    return Field(grid, values, Repr.SPECTRAL)


def inverse_fft_z(f: Field) -> Field:
    _require(f, Repr.SPECTRAL, "inverse_fft_z")
    grid = f.grid
    axes = tuple(range(2 * grid.d))
    values = f.values.copy()
    for k in axes:
        values *= _phase(grid, k, 1.0)
    values = scipy.fft.ifftn(values, axes=axes, workers=resolve_threads())
    for k in axes:
        values *= TWO_PI / grid.spacing[k]
    return Field(grid, values, Repr.PARTIAL)


def to_partial(f: Field) -> Field:
    if f.repr == Repr.PHYSICAL:
        return partial_ft(f)
    if f.repr == Repr.SPECTRAL:
        return inverse_fft_z(f)
    return f


def to_physical(f: Field) -> Field:
    if f.repr == Repr.PHYSICAL:
        return f
    return inverse_partial_ft(to_partial(f))


def to_spectral(f: Field) -> Field:
    if f.repr == Repr.SPECTRAL:
        return f
    return fft_z(to_partial(f))


def to_repr(f: Field, rep: Repr) -> Field:
    return {Repr.PHYSICAL: to_physical, Repr.PARTIAL: to_partial, Repr.SPECTRAL: to_spectral}[Repr(rep)](f)


# ============ Norms ============

def l2_norm(f: Field) -> float:
    return float(np.sqrt(np.sum(np.abs(f.values) ** 2) * f.grid.cell_volume(f.repr)))


def inner(f: Field, g: Field) -> complex:
    """<f, g> = int conj(f) g, computed in f's representation."""
    g = to_repr(g, f.repr)
    return complex(np.vdot(f.values, g.values) * f.grid.cell_volume(f.repr))


def sup_norm_sampled(f: Field) -> float:
    _require(f, Repr.PHYSICAL, "sup_norm_sampled")
    return float(np.max(np.abs(f.values))) if f.values.size else 0.0


def relative_l2(f: Field, reference: Field) -> float:
    diff = f.with_values(f.values - to_repr(reference, f.repr).values)
    ref = l2_norm(reference)
    return l2_norm(diff) / ref if ref > 0 else l2_norm(diff)


def boundary_mass(f: Field, layer: Optional[int] = None) -> float:
    """Fraction of L^2 mass carried by the outer `layer` nodes of any axis."""
    layer = layer or settings.boundary_layer
    mass = np.abs(to_physical(f).values) ** 2
    total = float(np.sum(mass))
    if total == 0.0:
        return 0.0
    interior = mass
    for axis, n in enumerate(f.grid.counts):
        interior = np.take(interior, np.arange(layer, n - layer), axis=axis)
    return float((total - np.sum(interior)) / total)


def check_boundary_mass(f: Field, step: Optional[int] = None, threshold: Optional[float] = None) -> float:
    threshold = threshold if threshold is not None else settings.boundary_mass_abort
    mass = boundary_mass(f)
    if mass > threshold:
        raise BoundaryMassError(
            f"boundary mass {mass:.3e} exceeds {threshold:.1e}", mass, threshold, step
        )
    return mass


# ============ Interpolation ============

def _catmull_rom_weights(t: np.ndarray) -> Tuple[np.ndarray, ...]:
    t2 = t * t
    t3 = t2 * t
    return (
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    )


def catmull_rom(values: np.ndarray, frac_index: Sequence[np.ndarray]) -> Tuple[np.ndarray, int]:
    """Separable cubic interpolation over the leading len(frac_index) axes.

    frac_index[a] holds fractional node indices (P,) along axis a. Queries
    outside the node hull return 0 and are counted; stencil nodes beyond the
    edge are read as 0. Trailing axes of `values` are carried along.
    """
    k = len(frac_index)
    shape = values.shape[:k]
    n_points = np.asarray(frac_index[0]).shape[0]
    inside = np.ones(n_points, dtype=bool)
    base: List[np.ndarray] = []
    weights: List[Tuple[np.ndarray, ...]] = []
    for a in range(k):
        u = np.asarray(frac_index[a], dtype=float)
        inside &= (u >= 0.0) & (u <= shape[a] - 1)
        u = np.where(np.isfinite(u), u, 0.0)
        i = np.floor(u).astype(np.int64)
        base.append(i)
        weights.append(_catmull_rom_weights(u - i))

    out = np.zeros((n_points,) + values.shape[k:], dtype=complex)
    trailing = (1,) * (values.ndim - k)
    for offsets in itertools.product(range(4), repeat=k):
        w = np.ones(n_points)
        valid = inside.copy()
        index = []
        for a, o in enumerate(offsets):
            j = base[a] + o - 1
            valid &= (j >= 0) & (j < shape[a])
            index.append(np.clip(j, 0, shape[a] - 1))
            w = w * weights[a][o]
        w = np.where(valid, w, 0.0)
        out += w.reshape((n_points,) + trailing) * values[tuple(index)]
    n_clipped = int(n_points - np.count_nonzero(inside))
    return out, n_clipped


def _fractional_index(grid: GridSpec, points: np.ndarray, n_axes: int) -> List[np.ndarray]:
    return [
        (points[:, a] - grid.nodes(a)[0]) / grid.spacing[a]
        for a in range(n_axes)
    ]


def interpolate_many(f: Field, points: np.ndarray) -> Tuple[np.ndarray, int]:
    """Interpolate at many off-grid points.

    physical: points (P, 2d + 1) -> values (P,)
    partial:  points (P, 2d)     -> values (P, N_alpha), one per alpha slice
    Returns (values, number of clipped out-of-hull queries).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    grid = f.grid
    if f.repr == Repr.PHYSICAL:
        n_axes = 2 * grid.d + 1
    elif f.repr == Repr.PARTIAL:
        n_axes = 2 * grid.d
    else:
        raise RepresentationError("interpolation needs a physical or partial field")
    if points.shape[1] != n_axes:
        raise DimensionMismatchError(f"expected points with {n_axes} coordinates, got {points.shape[1]}")
    return catmull_rom(f.values, _fractional_index(grid, points, n_axes))


def interpolate(f: Field, p: Union[HPoint, Sequence[float], np.ndarray]) -> Union[complex, np.ndarray]:
    if isinstance(p, HPoint):
        coords = p.to_array() if f.repr == Repr.PHYSICAL else p.z
    else:
        coords = np.asarray(p, dtype=float).reshape(-1)
    values, n_clipped = interpolate_many(f, coords[None, :])
    if n_clipped:
        logger.debug(f"clipped evaluation at {coords.tolist()}")
    return complex(values[0]) if f.repr == Repr.PHYSICAL else values[0]


# ============ Spectral refinement ============

def _refine_last_axis(g: np.ndarray, factor: int) -> np.ndarray:
    n = g.shape[-1]
    m = n * factor
    spectrum = scipy.fft.fft(g, axis=-1)
    padded = np.zeros(g.shape[:-1] + (m,), dtype=complex)
    half = n // 2
    padded[..., :half] = spectrum[..., :half]
    padded[..., m - half + 1:] = spectrum[..., half + 1:]
    # Nyquist mode split symmetrically
    padded[..., half] = 0.5 * spectrum[..., half]
    padded[..., m - half] += 0.5 * spectrum[..., half]
    return scipy.fft.ifft(padded, axis=-1) * factor


def spectral_refine(values: np.ndarray, factor: int, axes: Optional[Sequence[int]] = None) -> np.ndarray:
    """Trigonometric interpolant of periodic samples on a grid `factor` times finer.

    Refined node j sits at x0 + j h / factor; node j * factor reproduces the input.
    """
    if factor == 1:
        return np.asarray(values, dtype=complex)
    out = np.asarray(values, dtype=complex)
    for axis in axes if axes is not None else range(out.ndim):
        out = np.moveaxis(_refine_last_axis(np.moveaxis(out, axis, -1), factor), -1, axis)
    return out


# ============ Horizontal pseudodifferential symbols ============

SymbolFactor = Callable[[np.ndarray, int], np.ndarray]


def apply_symbol(
    f: Field,
    factor: SymbolFactor,
    threads: Optional[int] = None,
    chunk: int = 4096,
) -> Field:
    """Apply the z-dependent multiplier prod_k factor(eta_k + alpha ztilde_k, k).

    For every alpha slice and output node z:
        out(z, a) = sum_eta dEta^{2d} e^{i eta.z} prod_k factor(q_k, k) psi^(eta, a),
        q = eta + a ztilde(z).
    The product structure lets the eta-sum contract one axis at a time, so the
    cost per slice is (number of z nodes) x (number of eta nodes) with no
    interpolation anywhere. Returns a partial-representation field.
    """
    spectral = to_spectral(f)
    grid = f.grid
    n_axes = 2 * grid.d
    pts = grid.z_points()
    partner = ztilde_arrays(pts)
    etas = [grid.frequencies(k) for k in range(n_axes)]
    weight = float(np.prod([grid.dual_spacing(k) for k in range(n_axes)]))
    alphas = grid.alphas()
    out = np.empty(grid.shape, dtype=complex)

    def run_slice(ia: int):
        alpha = alphas[ia]
        coeff = spectral.values[..., ia]
        res = np.empty(pts.shape[0], dtype=complex)
        for start in range(0, pts.shape[0], chunk):
            zc = pts[start:start + chunk]
            pc = partner[start:start + chunk]
            acc = None
            for k in range(n_axes):
                q = etas[k][None, :] + alpha * pc[:, k:k + 1]
                v = np.exp(1j * etas[k][None, :] * zc[:, k:k + 1]) * factor(q, k)
                if acc is None:
                    acc = np.tensordot(v, coeff, axes=([1], [0]))
                else:
                    acc = np.einsum("pa,pa...->p...", v, acc)
            res[start:start + chunk] = acc
        out[..., ia] = (weight * res).reshape(grid.z_shape)

    map_slices(run_slice, len(alphas), threads)
    return Field(grid, out, Repr.PARTIAL)
