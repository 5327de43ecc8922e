"""
Magnetic Service
Exact evolution of each alpha slice (d = 1) through the Mehler kernels of the
planar magnetic Laplacian with vector potential A = (-alpha y, alpha x), B = 2 alpha.

    heat:        K = alpha / (2 pi sinh(alpha t))
                     * exp(-(alpha/2) coth(alpha t) |z - z'|^2 + i alpha (x' y - x y'))
    schrodinger: K = alpha / (2 pi i sin(alpha t))
                     * exp(+i (alpha/2) cot(alpha t) |z - z'|^2 + i alpha (x' y - x y'))

with the free kernels as the alpha = 0 branch. The heat kernel carries mass
sech(alpha t) exp(-(alpha/2) tanh(alpha t) |z|^2); only the alpha = 0 slice
conserves mass.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.errors import CausticError, DimensionMismatchError, HeisenbergError, RepresentationError
from app.services.field import Field, GridSpec, Repr, inverse_partial_ft, partial_ft, spectral_refine
from app.utils.parallel import map_slices


logger = logging.getLogger("magnetic")

KERNEL_REJECT_SIN = 1e-6
MAX_REFINE = 16
GAUSSIAN_BAND_SIGMAS = 12.0

FLAVORS = ("heat", "schrodinger")


@dataclass(frozen=True)
class MehlerKernelSpec:
    alpha: float
    t: float
    flavor: str = "heat"

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise HeisenbergError(f"unknown kernel flavor {self.flavor!r}")
        if not self.t > 0:
            raise HeisenbergError(f"kernel time must be positive, got {self.t}")

    @property
    def caustic_distance(self) -> float:
        """|sin(alpha t)|; the Schrodinger kernel degenerates where it vanishes."""
        return abs(math.sin(self.alpha * self.t)) if self.alpha != 0 else 1.0

    def prefactor(self) -> complex:
        a, t = self.alpha, self.t
        if self.flavor == "heat":
            return 1.0 / (2.0 * np.pi * t) if a == 0 else a / (2.0 * np.pi * math.sinh(a * t))
        return 1.0 / (2j * np.pi * t) if a == 0 else a / (2j * np.pi * math.sin(a * t))

    def quadratic_coefficient(self) -> complex:
        """c with K proportional to exp(c |z - z'|^2)."""
        a, t = self.alpha, self.t
        if self.flavor == "heat":
            return -1.0 / (2.0 * t) if a == 0 else -0.5 * a / math.tanh(a * t)
        return 0.5j / t if a == 0 else 0.5j * a / math.tan(a * t)


def _kernel(spec: MehlerKernelSpec, z: np.ndarray, zp: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    zp = np.asarray(zp, dtype=float)
    if z.shape[-1] != 2 or zp.shape[-1] != 2:
        raise DimensionMismatchError("Mehler kernels act on planar points (d = 1)")
    w2 = np.sum((z - zp) ** 2, axis=-1)
    phase = spec.alpha * (zp[..., 0] * z[..., 1] - z[..., 0] * zp[..., 1])
    return spec.prefactor() * np.exp(spec.quadratic_coefficient() * w2 + 1j * phase)


def mehler_heat_kernel(spec: MehlerKernelSpec, z: np.ndarray, zp: np.ndarray) -> np.ndarray:
    if spec.flavor != "heat":
        raise HeisenbergError("mehler_heat_kernel needs a heat spec")
    return _kernel(spec, z, zp)


def mehler_schrodinger_kernel(spec: MehlerKernelSpec, z: np.ndarray, zp: np.ndarray) -> np.ndarray:
    if spec.flavor != "schrodinger":
        raise HeisenbergError("mehler_schrodinger_kernel needs a schrodinger spec")
    if spec.caustic_distance <= KERNEL_REJECT_SIN:
        raise CausticError(
            f"alpha t = {spec.alpha * spec.t:.6g} is at a caustic (|sin| = {spec.caustic_distance:.1e})",
            [spec.alpha],
            spec.caustic_distance,
        )
    return _kernel(spec, z, zp)


def heat_kernel_mass(alpha: float, t: float, z: np.ndarray) -> np.ndarray:
    """int K_heat(z, z') dz' in closed form."""
    r2 = np.sum(np.asarray(z, dtype=float) ** 2, axis=-1)
    if alpha == 0:
        return np.ones_like(r2)
    return np.exp(-0.5 * alpha * math.tanh(alpha * t) * r2) / math.cosh(alpha * t)


def kernel_table(
    alphas: Sequence[float],
    t: float,
    pairs: Sequence[Tuple[Sequence[float], Sequence[float]]],
    flavor: str = "heat",
) -> List[Dict[str, float]]:
    """Rows (alpha, t, x, y, x', y', re, im) for regression pinning."""
    rows = []
    for alpha in alphas:
        spec = MehlerKernelSpec(float(alpha), t, flavor)
        for z, zp in pairs:
            k = complex(_kernel(spec, np.asarray(z, float), np.asarray(zp, float)))
            rows.append({
                "alpha": float(alpha), "t": t,
                "x": float(z[0]), "y": float(z[1]),
                "xp": float(zp[0]), "yp": float(zp[1]),
                "re": k.real, "im": k.imag,
            })
    return rows


# ============ Oracle ============

def caustic_alphas(grid: GridSpec, t: float, margin: Optional[float] = None) -> Tuple[List[float], float]:
    """alpha nodes with |sin(alpha t)| <= margin, and the smallest |sin| over nonzero nodes."""
    margin = settings.caustic_margin if margin is None else margin
    alphas = grid.alphas()
    nonzero = alphas[alphas != 0]
    if nonzero.size == 0:
        return [], 1.0
    sines = np.abs(np.sin(nonzero * t))
    offending = [float(a) for a, s in zip(nonzero, sines) if s <= margin]
    return offending, float(np.min(sines))


def refine_factor(spec: MehlerKernelSpec, grid: GridSpec) -> int:
    """Refinement making the trapezoid rule exact for the band of kernel x slice."""
    h = max(grid.spacing[:2])
    L = max(grid.extents[:2])
    a = abs(spec.alpha)
    c = spec.quadratic_coefficient()
    if spec.flavor == "heat":
        kernel_band = GAUSSIAN_BAND_SIGMAS * math.sqrt(abs(c.real))
    else:
        kernel_band = 2.0 * abs(c.imag) * 2.0 * L
    band = kernel_band + a * L + np.pi / h
    factor = max(1, int(math.ceil(h * band / (2.0 * np.pi))))
    if factor > MAX_REFINE:
        logger.warning(f"refinement {factor} capped at {MAX_REFINE} for alpha={spec.alpha:.4g}")
        factor = MAX_REFINE
    return factor


def evolve_slice(values: np.ndarray, grid: GridSpec, spec: MehlerKernelSpec) -> np.ndarray:
    """Apply the kernel of one alpha slice to samples on the grid's z nodes."""
    r = refine_factor(spec, grid)
    fine = spectral_refine(values, r)
    x, y = grid.nodes(0), grid.nodes(1)
    hx, hy = grid.spacing[0] / r, grid.spacing[1] / r
    xs = x[0] + hx * np.arange(fine.shape[0])
    ys = y[0] + hy * np.arange(fine.shape[1])
    c = spec.quadratic_coefficient()
    a = spec.alpha
    X = x[:, None, None]
    Y = y[None, :, None]
    kx = np.exp(c * (X - xs[None, None, :]) ** 2 + 1j * a * xs[None, None, :] * Y)
    ky = np.exp(c * (Y - ys[None, None, :]) ** 2 - 1j * a * X * ys[None, None, :])
    n_targets = x.size * y.size
    partial = ky.reshape(n_targets, -1) @ fine.T
    out = np.sum(kx.reshape(n_targets, -1) * partial, axis=1)
    return (spec.prefactor() * hx * hy * out).reshape(x.size, y.size)


def oracle_evolve(f0: Field, t: float, flavor: str = "heat", threads: Optional[int] = None) -> Field:
    """Partial transform, per-slice Mehler kernel quadrature, inverse transform."""
    if f0.grid.d != 1:
        raise DimensionMismatchError("the Mehler oracle is implemented for d = 1")
    if f0.repr != Repr.PHYSICAL:
        raise RepresentationError("oracle_evolve expects a physical field")
    if flavor not in FLAVORS:
        raise HeisenbergError(f"unknown flavor {flavor!r}")
    if t < 0:
        raise HeisenbergError(f"oracle time must be >= 0, got {t}")
    if t == 0:
        return f0.copy()
    grid = f0.grid
    if flavor == "schrodinger":
        offending, min_sin = caustic_alphas(grid, t)
        if offending:
            raise CausticError(
                f"{len(offending)} alpha nodes are within the caustic margin at t={t}", offending, min_sin
            )
        logger.debug(f"closest caustic: min |sin(alpha t)| = {min_sin:.3e}")

    partial = partial_ft(f0)
    alphas = grid.alphas()
    out = np.empty_like(partial.values)

    def run_slice(ia: int):
        spec = MehlerKernelSpec(float(alphas[ia]), t, flavor)
        out[..., ia] = evolve_slice(partial.values[..., ia], grid, spec)

    map_slices(run_slice, len(alphas), threads)
    logger.info(f"{flavor} oracle t={t} on grid {grid.counts}")
    return inverse_partial_ft(Field(grid, out, Repr.PARTIAL))
