"""
Heat Service
Chernoff one-step operator for the heat semigroup e^{t(L/2 + c)} on H^d:

    [S(tau) psi](z, s) = E[ psi(z + sqrt(tau) zeta, s + sqrt(tau) sigma(z, zeta)) ] + tau c psi(z, s)

with zeta standard Gaussian on R^{2d}. Three evaluation strategies:
quadrature (tensor Gauss-Hermite + cubic interpolation), montecarlo
(common random numbers, exact spectral translations) and dense (the exact
per-alpha multiplier exp(-tau |eta + alpha ztilde|^2 / 2)).
"""
import itertools
import logging
import time
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.errors import ConfigError, HeisenbergError, RepresentationError
from app.services.field import (
    Field,
    GridSpec,
    Repr,
    apply_symbol,
    check_boundary_mass,
    interpolate_many,
    inverse_fft_z,
    l2_norm,
    sup_norm_sampled,
    to_physical,
    to_spectral,
)
from app.services.hgroup import sigma_arrays
from app.services.rng import RngStream


logger = logging.getLogger("heat")

DEFAULT_QUADRATURE_POINTS = 8
MIN_MC_SAMPLES = 1000


# ============ Types ============

@dataclass(frozen=True)
class PotentialSpec:
    """Real bounded potential c(z, s) with declared sup bound."""

    fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    bound: float = 0.0

    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls(None, 0.0)

    @classmethod
    def constant(cls, kappa: float) -> "PotentialSpec":
        return cls(lambda z, s: np.full(np.shape(s), float(kappa)), abs(float(kappa)))

    @property
    def is_zero(self) -> bool:
        return self.fn is None

    def sample(self, grid: GridSpec) -> np.ndarray:
        if self.fn is None:
            return np.zeros(grid.shape)
        z, s = grid.mesh()
        values = np.broadcast_to(np.asarray(self.fn(z, s)), grid.shape)
        if np.iscomplexobj(values) and np.any(np.imag(values) != 0):
            raise ConfigError("potential must be real-valued")
        values = np.real(values).astype(float)
        peak = float(np.max(np.abs(values)))
        if peak > self.bound * (1.0 + 1e-12) + 1e-15:
            raise ConfigError(f"potential reaches {peak:.6g} above its declared bound {self.bound:.6g}")
        return values


@dataclass(frozen=True)
class HeatStepMethod:
    kind: str = "dense"
    points: int = DEFAULT_QUADRATURE_POINTS
    samples: int = 4096
    stream: Optional[RngStream] = None

    def __post_init__(self):
        if self.kind not in ("quadrature", "montecarlo", "dense"):
            raise ConfigError(f"unknown heat step method {self.kind!r}")
        if self.kind == "quadrature" and self.points < 2:
            raise ConfigError("Gauss-Hermite order must be at least 2")
        if self.kind == "montecarlo":
            if self.samples < MIN_MC_SAMPLES:
                raise ConfigError(f"Monte-Carlo step needs at least {MIN_MC_SAMPLES} samples")
            if self.stream is None:
                raise ConfigError("Monte-Carlo step needs an RngStream")

    @classmethod
    def dense(cls) -> "HeatStepMethod":
        return cls("dense")

    @classmethod
    def quadrature(cls, points: int = DEFAULT_QUADRATURE_POINTS) -> "HeatStepMethod":
        return cls("quadrature", points=points)

    @classmethod
    def montecarlo(cls, samples: int, stream: RngStream) -> "HeatStepMethod":
        return cls("montecarlo", samples=samples, stream=stream)


@dataclass
class EvolutionRecord:
    """Per-step diagnostics of a Chernoff iteration."""

    norms: List[float] = dataclass_field(default_factory=list)
    boundary_masses: List[float] = dataclass_field(default_factory=list)
    clipped: List[int] = dataclass_field(default_factory=list)
    wall_time: float = 0.0

    @property
    def norm_drift(self) -> float:
        if len(self.norms) < 2:
            return 0.0
        return abs(self.norms[-1] - self.norms[0])


# ============ Quadrature helpers ============

def gauss_hermite(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for the standard Gaussian density."""
    knots, weights = np.polynomial.hermite.hermgauss(n)
    return knots * np.sqrt(2.0), weights / np.sqrt(np.pi)


def gauss_hermite_tensor(n: int, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    knots, weights = gauss_hermite(n)
    nodes = np.array(list(itertools.product(knots, repeat=dim)))
    w = np.prod(np.array(list(itertools.product(weights, repeat=dim))), axis=1)
    return nodes, w


# ============ One-step strategies ============

def _gaussian_factor(tau: float):
    return lambda q, k: np.exp(-0.5 * tau * q * q)


def _step_dense(f: Field, tau: float) -> Tuple[np.ndarray, int]:
    return to_physical(apply_symbol(f, _gaussian_factor(tau))).values, 0


def _step_quadrature(f: Field, tau: float, points: int) -> Tuple[np.ndarray, int]:
    grid = f.grid
    nodes, weights = gauss_hermite_tensor(points, 2 * grid.d)
    z, s = grid.mesh()
    pts_z = z.reshape(-1, 2 * grid.d)
    pts_s = s.reshape(-1)
    root = np.sqrt(tau)
    out = np.zeros(pts_s.shape[0], dtype=complex)
    clipped = 0
    for zeta, w in zip(nodes, weights):
        shifted = np.column_stack([
            pts_z + root * zeta,
            pts_s + root * sigma_arrays(pts_z, zeta),
        ])
        values, n_clipped = interpolate_many(f, shifted)
        out += w * values
        clipped += n_clipped
    return out.reshape(grid.shape), clipped


def _step_montecarlo(f: Field, tau: float, samples: int, stream: RngStream) -> Tuple[np.ndarray, int]:
    grid = f.grid
    n_axes = 2 * grid.d
    zetas = stream.generator().standard_normal((samples, n_axes))
    spectral = to_spectral(f)
    etas = [grid.broadcast_axis(grid.frequencies(k), k) for k in range(n_axes)]
    alphas = grid.broadcast_axis(grid.alphas(), -1)
    z, _ = grid.mesh()
    z = z[..., 0, :]
    root = np.sqrt(tau)
    acc = np.zeros(grid.shape, dtype=complex)
    for zeta in zetas:
        shift = sum(eta * zeta[k] for k, eta in enumerate(etas))
        translated = inverse_fft_z(spectral.with_values(spectral.values * np.exp(1j * root * shift)))
        area = sigma_arrays(z, zeta)[..., None]
        acc += translated.values * np.exp(1j * root * alphas * area)
    return to_physical(Field(grid, acc / samples, Repr.PARTIAL)).values, 0


# ============ Public operations ============

def _heat_step(
    f: Field,
    tau: float,
    c: PotentialSpec,
    m: HeatStepMethod,
    step: Optional[int] = None,
    c_values: Optional[np.ndarray] = None,
) -> Tuple[Field, int]:
    if f.repr != Repr.PHYSICAL:
        raise RepresentationError("heat_step expects a physical field")
    if tau < 0:
        raise HeisenbergError(f"heat step needs tau >= 0, got {tau}")
    if tau == 0:
        return f.copy(), 0
    check_boundary_mass(f, step)

    if m.kind == "dense":
        values, clipped = _step_dense(f, tau)
    elif m.kind == "quadrature":
        values, clipped = _step_quadrature(f, tau, m.points)
    else:
        stream = m.stream if step is None else m.stream.derive(step)
        values, clipped = _step_montecarlo(f, tau, m.samples, stream)

    if not c.is_zero:
        if c_values is None:
            c_values = c.sample(f.grid)
        values = values + tau * c_values * f.values

    n_evals = f.values.size * (m.points ** (2 * f.grid.d) if m.kind == "quadrature" else 1)
    if clipped and clipped > settings.clip_warn_rate * n_evals:
        logger.warning(f"clip rate {clipped / n_evals:.2e} above {settings.clip_warn_rate:.0e} (step {step})")
    return Field(f.grid, values, Repr.PHYSICAL), clipped


def heat_step(f: Field, tau: float, c: Optional[PotentialSpec] = None, m: Optional[HeatStepMethod] = None) -> Field:
    """Apply S(tau) once; f must be physical."""
    out, _ = _heat_step(f, tau, c or PotentialSpec.zero(), m or HeatStepMethod.dense())
    return out


def apply_sublaplacian(f: Field) -> Field:
    """L f through its exact symbol -|eta + alpha ztilde|^2, returned physical."""
    n_axes = 2 * f.grid.d
    total = None
    for axis in range(n_axes):
        term = apply_symbol(f, lambda q, k, axis=axis: -q * q if k == axis else np.ones_like(q))
        total = term.values if total is None else total + term.values
    return to_physical(Field(f.grid, total, Repr.PARTIAL))


def generator_residual(f: Field, tau: float, c: Optional[PotentialSpec] = None) -> float:
    """||(S(tau) f - f) / tau - (L/2 + c) f|| with the dense step."""
    if tau <= 0:
        raise HeisenbergError(f"generator residual needs tau > 0, got {tau}")
    c = c or PotentialSpec.zero()
    f = to_physical(f)
    stepped = heat_step(f, tau, c, HeatStepMethod.dense())
    generator = 0.5 * apply_sublaplacian(f).values + c.sample(f.grid) * f.values
    residual = (stepped.values - f.values) / tau - generator
    return l2_norm(f.with_values(residual))


def strong_continuity_profile(
    f: Field,
    taus: Sequence[float],
    c: Optional[PotentialSpec] = None,
    m: Optional[HeatStepMethod] = None,
) -> List[float]:
    """||S(tau) f - f|| for each tau."""
    return [l2_norm(f.with_values(heat_step(f, tau, c, m).values - f.values)) for tau in taus]


def sup_norm_check(
    f: Field,
    tau: float,
    c: Optional[PotentialSpec] = None,
    m: Optional[HeatStepMethod] = None,
) -> Tuple[float, float]:
    """Sampled sup after one step and the contraction bound (1 + tau ||c||) sup|f|."""
    c = c or PotentialSpec.zero()
    after = sup_norm_sampled(heat_step(f, tau, c, m))
    return after, (1.0 + tau * c.bound) * sup_norm_sampled(f)


def chernoff_evolve_heat(
    f0: Field,
    t: float,
    n: int,
    c: Optional[PotentialSpec] = None,
    m: Optional[HeatStepMethod] = None,
    record: Optional[EvolutionRecord] = None,
) -> Field:
    """S(t/n)^n f0."""
    if n < 1:
        raise HeisenbergError(f"step count must be >= 1, got {n}")
    if t < 0:
        raise HeisenbergError(f"evolution time must be >= 0, got {t}")
    if f0.repr != Repr.PHYSICAL:
        raise RepresentationError("chernoff_evolve_heat expects a physical field")
    c = c or PotentialSpec.zero()
    m = m or HeatStepMethod.dense()
    record = record if record is not None else EvolutionRecord()
    started = time.perf_counter()

    f = f0.copy()
    record.norms.append(l2_norm(f))
    if t == 0:
        record.boundary_masses.append(check_boundary_mass(f))
        return f

    tau = t / n
    c_values = None if c.is_zero else c.sample(f0.grid)
    for step in range(n):
        f, clipped = _heat_step(f, tau, c, m, step=step, c_values=c_values)
        record.norms.append(l2_norm(f))
        record.boundary_masses.append(check_boundary_mass(f, step))
        record.clipped.append(clipped)
        logger.debug(
            f"step {step + 1}/{n}: norm={record.norms[-1]:.12f} "
            f"boundary={record.boundary_masses[-1]:.2e} clipped={clipped}"
        )

    record.wall_time = time.perf_counter() - started
    logger.info(f"heat {m.kind} n={n} t={t}: norm {record.norms[0]:.6f} -> {record.norms[-1]:.6f} ({record.wall_time:.2f}s)")
    return f
