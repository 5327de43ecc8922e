"""
Schrodinger Service
Oscillatory Chernoff step for the group e^{itL/2} on H^d and its potential
perturbation S_v(tau) = S(tau) M(tau), M(tau) = e^{-i tau v}.

In the partial representation the step factorizes as U2 V U1:
    U1  spectral multiplier e^{-i tau |eta|^2 / 2}
    V   shear psi(z - tau alpha ztilde, alpha)
    U2  phase e^{-i tau alpha^2 |z|^2 / 2}
The dense variant applies the combined multiplier e^{-i tau |eta + alpha ztilde|^2 / 2}
directly. The shear has Jacobian (1 + alpha^2 tau^2)^d, so every step scales
the alpha-slice norm by (1 + alpha^2 tau^2)^{-d/2}: S(tau) is a contraction,
not an isometry, for alpha != 0.
"""
import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.errors import (
    ConvergenceDiagnosticError,
    GridError,
    HeisenbergError,
    RepresentationError,
    ShearBoundError,
)
from app.services.field import (
    TWO_PI,
    Field,
    GridSpec,
    Repr,
    apply_symbol,
    catmull_rom,
    check_boundary_mass,
    fft_z,
    inverse_fft_z,
    l2_norm,
    relative_l2,
    spectral_refine,
    to_partial,
    to_physical,
    to_repr,
)
from app.services.heat import EvolutionRecord, PotentialSpec, apply_sublaplacian
from app.services.hgroup import sigma_arrays, ztilde_arrays
from app.utils.parallel import map_slices


logger = logging.getLogger("schrodinger")

SHEAR_BOUND = 0.5
MAX_DIRECT_POINTS = 32
MAX_DIRECT_NODES = 2 ** 16
DIRECT_REFINE = 8
DIRECT_PANEL_NODES = 8
DIRECT_CONTRACTION_SIZE = 2 ** 22
DEFAULT_EPS_SEQUENCE = (0.1, 0.05, 0.025)
GAUSSIAN_CUTOFF = 6.0
PANEL_NODES = 12


class ShearMethod(str, Enum):
    INTERPOLATED = "interpolated"
    DENSE = "dense"


@dataclass(frozen=True)
class VPotentialSpec(PotentialSpec):
    """Bounded real potential v; `smooth` marks the C_b^infinity regime."""

    smooth: bool = True

    @classmethod
    def zero(cls) -> "VPotentialSpec":
        return cls(None, 0.0, True)

    @classmethod
    def constant(cls, kappa: float) -> "VPotentialSpec":
        return cls(lambda z, s: np.full(np.shape(s), float(kappa)), abs(float(kappa)), True)


@dataclass
class FeynmanResult:
    field: Field
    reference: Field
    discrepancy: float


# ============ Factors ============

def u1_apply(f: Field, tau: float) -> Field:
    if f.repr != Repr.PARTIAL:
        raise RepresentationError("u1_apply expects a partial field")
    if tau == 0:
        return f.copy()
    spectral = fft_z(f)
    grid = f.grid
    eta2 = sum(grid.broadcast_axis(grid.frequencies(k), k) ** 2 for k in range(2 * grid.d))
    return inverse_fft_z(spectral.with_values(spectral.values * np.exp(-0.5j * tau * eta2)))


def u2_apply(f: Field, tau: float) -> Field:
    if f.repr != Repr.PARTIAL:
        raise RepresentationError("u2_apply expects a partial field")
    grid = f.grid
    z, _ = grid.mesh()
    r2 = np.sum(z[..., 0, :] ** 2, axis=-1)[..., None]
    alpha2 = grid.broadcast_axis(grid.alphas(), -1) ** 2
    return f.with_values(f.values * np.exp(-0.5j * tau * alpha2 * r2))


def check_shear_bound(grid: GridSpec, tau: float):
    """|tau alpha_max z_max| <= L_z / 2 with z_max = L_z, i.e. |tau| alpha_max <= 1/2."""
    alpha_max = float(np.max(np.abs(grid.alphas())))
    if abs(tau) * alpha_max > SHEAR_BOUND:
        raise ShearBoundError(
            f"shear displacement |tau alpha_max| = {abs(tau) * alpha_max:.3f} exceeds {SHEAR_BOUND}",
            {"tau": tau, "alpha_max": alpha_max},
        )


def _shear(f: Field, tau: float) -> Tuple[np.ndarray, int]:
    grid = f.grid
    pts = grid.z_points()
    partner = ztilde_arrays(pts)
    origin = np.array([grid.nodes(k)[0] for k in range(2 * grid.d)])
    spacing = np.array(grid.spacing[:-1])
    out = np.empty_like(f.values)
    clipped = 0
    for ia, alpha in enumerate(grid.alphas()):
        target = (pts - tau * alpha * partner - origin) / spacing
        values, n_clipped = catmull_rom(f.values[..., ia], [target[:, k] for k in range(2 * grid.d)])
        out[..., ia] = values.reshape(grid.z_shape)
        clipped += n_clipped
    return out, clipped


def shear_apply(f: Field, tau: float, m: ShearMethod = ShearMethod.INTERPOLATED) -> Field:
    """psi(z - tau alpha ztilde, alpha) by cubic resampling, out-of-hull reads are 0."""
    if ShearMethod(m) == ShearMethod.DENSE:
        raise HeisenbergError("the dense shear is folded into schrodinger_step_dense")
    if f.repr != Repr.PARTIAL:
        raise RepresentationError("shear_apply expects a partial field")
    if tau == 0:
        return f.copy()
    values, clipped = _shear(f, tau)
    rate = clipped / f.values[..., 0].size / f.grid.counts[-1]
    if rate > settings.clip_warn_rate:
        logger.warning(f"shear clip rate {rate:.2e} above {settings.clip_warn_rate:.0e} (tau={tau})")
    return f.with_values(values)


# ============ One step ============

def schrodinger_step_dense(f: Field, tau: float) -> Field:
    if tau == 0:
        return to_partial(f).copy()
    return apply_symbol(f, lambda q, k: np.exp(-0.5j * tau * q * q))


def schrodinger_step(f: Field, tau: float, m: ShearMethod = ShearMethod.DENSE) -> Field:
    """U2 V U1 applied per alpha slice; returns the input's representation."""
    rep = f.repr
    partial = to_partial(f)
    if tau == 0:
        return f.copy()
    if ShearMethod(m) == ShearMethod.DENSE:
        out = schrodinger_step_dense(partial, tau)
    else:
        check_shear_bound(f.grid, tau)
        out = u2_apply(shear_apply(u1_apply(partial, tau), tau), tau)
    return to_repr(out, rep)


def potential_phase(f: Field, tau: float, v: Optional[VPotentialSpec] = None, v_values: Optional[np.ndarray] = None) -> Field:
    if f.repr != Repr.PHYSICAL:
        raise RepresentationError("potential_phase expects a physical field")
    if v_values is None:
        if v is None or v.is_zero:
            return f.copy()
        v_values = v.sample(f.grid)
    return f.with_values(f.values * np.exp(-1j * tau * v_values))


def predicted_dense_norm(f: Field, tau: float, steps: int = 1) -> float:
    """Norm after `steps` free steps: each alpha slice shrinks by (1 + alpha^2 tau^2)^{-d/2}."""
    partial = to_partial(f)
    grid = f.grid
    slice_mass = np.sum(np.abs(partial.values) ** 2, axis=tuple(range(2 * grid.d)))
    factor = (1.0 + (grid.alphas() * tau) ** 2) ** (-grid.d * steps)
    return float(np.sqrt(np.sum(slice_mass * factor) * grid.cell_volume(Repr.PARTIAL)))


def schrodinger_generator_residual(f: Field, tau: float) -> float:
    """||(S(tau) f - f) / tau - (i/2) L f|| with the dense step."""
    if tau <= 0:
        raise HeisenbergError(f"generator residual needs tau > 0, got {tau}")
    f = to_physical(f)
    stepped = to_physical(schrodinger_step_dense(f, tau))
    generator = 0.5j * apply_sublaplacian(f).values
    return l2_norm(f.with_values((stepped.values - f.values) / tau - generator))


def strong_continuity_profile(f: Field, taus: Sequence[float], m: ShearMethod = ShearMethod.DENSE) -> List[float]:
    f = to_physical(f)
    return [l2_norm(f.with_values(to_physical(schrodinger_step(f, tau, m)).values - f.values)) for tau in taus]


# ============ Iteration ============

def chernoff_evolve_schrodinger(
    f0: Field,
    t: float,
    n: int,
    v: Optional[VPotentialSpec] = None,
    m: ShearMethod = ShearMethod.DENSE,
    order: str = "SM",
    record: Optional[EvolutionRecord] = None,
) -> Field:
    """(S(t/n) M(t/n))^n f0 for order SM, (M(t/n) S(t/n))^n for MS; physical in and out."""
    if n < 1:
        raise HeisenbergError(f"step count must be >= 1, got {n}")
    if order not in ("SM", "MS"):
        raise HeisenbergError(f"order must be 'SM' or 'MS', got {order!r}")
    if f0.repr != Repr.PHYSICAL:
        raise RepresentationError("chernoff_evolve_schrodinger expects a physical field")
    v = v or VPotentialSpec.zero()
    m = ShearMethod(m)
    record = record if record is not None else EvolutionRecord()
    started = time.perf_counter()

    f = f0.copy()
    record.norms.append(l2_norm(f))
    if t == 0:
        return f

    tau = t / n
    if m == ShearMethod.INTERPOLATED:
        check_shear_bound(f0.grid, tau)
    v_values = None if v.is_zero else v.sample(f0.grid)

    for step in range(n):
        if v_values is not None and order == "SM":
            f = potential_phase(f, tau, v_values=v_values)
        f = to_physical(schrodinger_step(f, tau, m))
        if v_values is not None and order == "MS":
            f = potential_phase(f, tau, v_values=v_values)
        record.norms.append(l2_norm(f))
        record.boundary_masses.append(check_boundary_mass(f, step))
        logger.debug(f"step {step + 1}/{n}: norm={record.norms[-1]:.12f} drift={record.norms[-1] - record.norms[0]:.2e}")

    record.wall_time = time.perf_counter() - started
    logger.info(f"schrodinger {m.value}/{order} n={n} t={t}: norm drift {record.norm_drift:.3e} ({record.wall_time:.2f}s)")
    return f


# ============ Direct oscillatory evaluation ============

def gauss_legendre_panels(a: float, b: float, n_panels: int, nodes_per_panel: int = PANEL_NODES) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes / weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(nodes_per_panel)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).reshape(-1)
    weights = (half[:, None] * w[None, :]).reshape(-1)
    return nodes, weights


def _bump(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    return out


# regulator phi(x) per horizontal coordinate and the half-width of its support
REGULATORS = {
    "gaussian": (lambda x: np.exp(-0.5 * x * x), GAUSSIAN_CUTOFF),
    "bump": (_bump, 1.0),
}


def richardson_eps2(values: Sequence[np.ndarray], eps: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Neville extrapolation to eps = 0 in the variable eps^2.

    Returns (full extrapolation, extrapolation without the coarsest eps).
    """
    x = np.asarray(eps, dtype=float) ** 2
    level = [np.asarray(v) for v in values]
    previous = level[-1]
    m = 1
    while len(level) > 1:
        if len(level) == 2:
            previous = level[-1]
        level = [
            (x[i + m] * level[i] - x[i] * level[i + 1]) / (x[i + m] - x[i])
            for i in range(len(level) - 1)
        ]
        m += 1
    return level[0], previous


def sigma_coefficients(points: np.ndarray) -> np.ndarray:
    """c[p, k] = sigma(z_p, e_k), so that sigma(z_p, zeta) = sum_k c[p, k] zeta_k."""
    points = np.asarray(points, dtype=float)
    basis = np.eye(points.shape[-1])
    return sigma_arrays(points[:, None, :], basis[None, :, :])


def direct_axis_weights(
    grid: GridSpec,
    axis: int,
    tau: float,
    eps: float,
    regulator: str,
    coefficients: np.ndarray,
) -> np.ndarray:
    """Quadrature weights of the regulated zeta_k-integral along one horizontal axis.

    W[a, j, c, m] = (2 pi i)^{-1/2} sum_q w_q phi(eps zeta_q) e^{i zeta_q^2 / 2}
                    e^{i alpha_a sqrt(tau) coefficients[c] zeta_q} C_m(z_j + sqrt(tau) zeta_q)
    where C_m is the cubic cardinal function of node m of the axis refined
    DIRECT_REFINE times. Panel edges sit on the refined nodes, so each panel
    integrates a single cubic piece; nodes that read outside the hull are
    dropped (the interpolant is 0 there). For tau < 0 the Fresnel factor is
    conjugated.
    """
    phi, cutoff = REGULATORS[regulator]
    root = np.sqrt(abs(tau))
    nodes = grid.nodes(axis)
    h = grid.spacing[axis]
    h_fine = h / DIRECT_REFINE
    n_fine = grid.counts[axis] * DIRECT_REFINE
    alphas = grid.alphas()

    base = h_fine / root
    half = min(cutoff / eps, (n_fine - 1) * base)
    f_max = half + root * (np.pi / h + np.max(np.abs(alphas)) * np.max(np.abs(coefficients)))
    per_interval = max(1, int(np.ceil(base * f_max / TWO_PI)))
    width = base / per_interval
    n_side = int(np.ceil(half / width))
    zeta, w = gauss_legendre_panels(-n_side * width, n_side * width, 2 * n_side, DIRECT_PANEL_NODES)
    kernel = w * phi(eps * zeta) * np.exp(0.5j * zeta * zeta) / np.sqrt(2j * np.pi)
    if tau < 0:
        kernel = np.conj(kernel)

    identity = np.eye(n_fine)
    out = np.zeros((alphas.size, nodes.size, coefficients.size, n_fine), dtype=complex)
    for j, zj in enumerate(nodes):
        frac = (zj + root * zeta - nodes[0]) / h_fine
        keep = (frac >= 0.0) & (frac <= n_fine - 1)
        if not np.any(keep):
            continue
        cardinal, _ = catmull_rom(identity, [frac[keep]])
        phase = np.exp(1j * root * np.multiply.outer(np.multiply.outer(alphas, coefficients), zeta[keep]))
        weighted = (phase * kernel[keep]).reshape(-1, cardinal.shape[0])
        out[:, j] = (weighted @ cardinal).reshape(alphas.size, coefficients.size, n_fine)
    return out


def _regulated_values(partial: Field, tau: float, eps: float, regulator: str, threads: Optional[int]) -> np.ndarray:
    grid = partial.grid
    n_axes = 2 * grid.d
    pts = grid.z_points()
    coeff = sigma_coefficients(pts)
    own = np.unravel_index(np.arange(pts.shape[0]), grid.z_shape)

    gathered = []
    for k in range(n_axes):
        unique, inverse = np.unique(coeff[:, k], return_inverse=True)
        weights = direct_axis_weights(grid, k, tau, eps, regulator, unique)
        gathered.append(weights[:, own[k], inverse.reshape(-1), :])

    out = np.empty(grid.shape, dtype=complex)
    row_size = int(np.prod([n * DIRECT_REFINE for n in grid.z_shape[1:]]))
    chunk = max(1, DIRECT_CONTRACTION_SIZE // row_size)

    def run_slice(ia: int):
        refined = spectral_refine(partial.values[..., ia], DIRECT_REFINE, axes=range(n_axes))
        res = np.empty(pts.shape[0], dtype=complex)
        for start in range(0, pts.shape[0], chunk):
            rows = slice(start, start + chunk)
            acc = np.tensordot(gathered[0][ia, rows], refined, axes=([1], [0]))
            for k in range(1, n_axes):
                acc = np.einsum("pm,pm...->p...", gathered[k][ia, rows], acc)
            res[rows] = acc
        out[..., ia] = res.reshape(grid.z_shape)

    map_slices(run_slice, grid.counts[-1], threads)
    return out


def oscillatory_integral_direct(
    f: Field,
    tau: float,
    eps_sequence: Sequence[float] = DEFAULT_EPS_SEQUENCE,
    regulators: Sequence[str] = ("gaussian", "bump"),
    convergence_tol: float = 1e-3,
    regulator_tol: float = 1e-3,
    threads: Optional[int] = None,
) -> Field:
    """Regularized oscillatory integral
        (2 pi i)^{-d} int phi(eps zeta) e^{i |zeta|^2 / 2} psi(z + sqrt(tau) zeta, s + sqrt(tau) sigma(z, zeta)) d zeta
    extrapolated to eps -> 0.

    psi is read through a cubic interpolant of the spectrally refined alpha
    slices; the s-translation becomes the phase e^{i alpha sqrt(tau) sigma(z, zeta)}.
    Quadrature is a tensor product of composite Gauss-Legendre rules in
    zeta, one per horizontal coordinate, with the separable regulator
    prod_k phi(eps zeta_k). The interpolant vanishes outside the box, which
    caps the zeta window at the box diameter over sqrt(tau).

    Raises ConvergenceDiagnosticError if the extrapolation has not settled or
    the regulators disagree. Returns a partial field.
    """
    grid = f.grid
    if any(n > MAX_DIRECT_POINTS for n in grid.z_shape):
        raise GridError(f"direct oscillatory evaluation is limited to {MAX_DIRECT_POINTS} points per axis")
    if int(np.prod(grid.z_shape)) * DIRECT_REFINE ** (2 * grid.d) > MAX_DIRECT_NODES:
        raise GridError(
            f"refined horizontal grid {tuple(n * DIRECT_REFINE for n in grid.z_shape)} is too large for direct evaluation"
        )
    eps_sequence = [float(e) for e in eps_sequence]
    if len(eps_sequence) < 2 or any(e <= 0 for e in eps_sequence) or any(
        b >= a for a, b in zip(eps_sequence, eps_sequence[1:])
    ):
        raise HeisenbergError(f"eps sequence must be positive and strictly decreasing, got {eps_sequence}")
    unknown = [r for r in regulators if r not in REGULATORS]
    if unknown or not regulators:
        raise HeisenbergError(f"unknown regulators {unknown}, expected some of {sorted(REGULATORS)}")
    partial = to_partial(f)
    if tau == 0:
        return partial.copy()

    results = {}
    for regulator in regulators:
        raw = [_regulated_values(partial, tau, eps, regulator, threads) for eps in eps_sequence]
        final, previous = richardson_eps2(raw, eps_sequence)
        scale = max(float(np.linalg.norm(final)), 1e-300)
        change = float(np.linalg.norm(final - previous)) / scale
        logger.debug(f"{regulator} regulator: extrapolation change {change:.2e}")
        if change > convergence_tol:
            raise ConvergenceDiagnosticError(
                f"{regulator} regulator did not settle: last extrapolation changed by {change:.2e}",
                {"regulator": regulator, "change": change, "eps": eps_sequence},
            )
        results[regulator] = final

    names = list(results)
    reference = results[names[0]]
    for other in names[1:]:
        gap = float(np.linalg.norm(results[other] - reference)) / max(float(np.linalg.norm(reference)), 1e-300)
        if gap > regulator_tol:
            raise ConvergenceDiagnosticError(
                f"regulators {names[0]} and {other} disagree by {gap:.2e}",
                {"gap": gap, "regulators": [names[0], other]},
            )
    return partial.with_values(reference)


def feynman_piecewise_geodesic(
    f0: Field,
    t: float,
    n: int,
    v: Optional[VPotentialSpec] = None,
    eps_sequence: Sequence[float] = DEFAULT_EPS_SEQUENCE,
    tol: float = 1e-3,
) -> FeynmanResult:
    """n-fold oscillatory integral over piecewise-horizontal paths with Riemann-sum potential.

    The integral is nested from the last segment backwards: the innermost
    direct integral reads e^{-i v tau} psi0 at gamma(t), the next one reads
    the result at gamma(t - tau). Potential samples therefore sit at the path
    nodes gamma(j t / n), j = 1..n, and each factor is S(t/n) applied after
    M(t/n). Checked against the SM Chernoff composition with the dense step.
    """
    if n not in (1, 2):
        raise HeisenbergError(f"piecewise-geodesic evaluation supports n = 1 or 2, got {n}")
    v = v or VPotentialSpec.zero()
    f0 = to_physical(f0)
    tau = t / n
    v_values = None if v.is_zero else v.sample(f0.grid)
    g = f0
    for _ in range(n):
        weighted = potential_phase(g, tau, v_values=v_values) if v_values is not None else g
        g = to_physical(oscillatory_integral_direct(weighted, tau, eps_sequence))
    reference = chernoff_evolve_schrodinger(f0, t, n, v, ShearMethod.DENSE, order="SM")
    discrepancy = relative_l2(g, reference)
    logger.info(f"piecewise-geodesic n={n} t={t}: discrepancy {discrepancy:.2e} against the Chernoff composition")
    if discrepancy > tol:
        raise ConvergenceDiagnosticError(
            f"piecewise-geodesic integral differs from the Chernoff composition by {discrepancy:.2e}",
            {"discrepancy": discrepancy, "n": n},
        )
    return FeynmanResult(g, reference, discrepancy)
