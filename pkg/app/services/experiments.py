"""
Experiments Service
Builds numerical objects from an ExperimentConfig, runs one experiment kind and
commits its artifacts atomically:

    outputs are written into a staging directory next to the target and moved
    into place only after the manifest is complete, so a failed run leaves
    nothing behind.

Artifacts carry no timestamps or wall times; rerunning a config reproduces the
same bytes.
"""
import logging
import math
import os
import shutil
import tempfile
import time
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from app.config import settings
from app.errors import CausticError, ConfigError, HeisenbergError
from app.schemas import ConvergenceRow, ExperimentConfig, FKRow, ManifestEntry, TightnessRow, VerifyCheck
from app.services import hgroup
from app.services.field import (
    Field,
    GaussianPacketSpec,
    GridSpec,
    interpolate_many,
    l2_norm,
    make_packet,
    partial_ft,
    relative_l2,
    to_physical,
    to_spectral,
)
from app.services.heat import (
    EvolutionRecord,
    HeatStepMethod,
    PotentialSpec,
    chernoff_evolve_heat,
    generator_residual,
    heat_step,
)
from app.services.magnetic import (
    MehlerKernelSpec,
    caustic_alphas,
    heat_kernel_mass,
    kernel_table,
    mehler_heat_kernel,
    oracle_evolve,
)
from app.services.rng import RngStream
from app.services.schrodinger import (
    ShearMethod,
    VPotentialSpec,
    check_shear_bound,
    chernoff_evolve_schrodinger,
    predicted_dense_norm,
    schrodinger_generator_residual,
    schrodinger_step,
    strong_continuity_profile,
)
from app.services import stochastic
from app.utils.io import build_manifest, dump_field, export_slice_csv, path_rows, write_csv, write_json


logger = logging.getLogger("experiments")

# stream ids under the run seed
STREAM_HEAT_MC = 1
STREAM_FK = 2
STREAM_LEVY = 3
STREAM_WALK = 4
STREAM_VERIFY = 5


# ============ Builders ============

def build_grid(cfg: ExperimentConfig) -> GridSpec:
    g = cfg.grid
    return GridSpec.uniform(g.d, g.extent_z, g.n_z, g.n_s, g.extent_s)


def build_packet_spec(cfg: ExperimentConfig) -> GaussianPacketSpec:
    dim = 2 * cfg.grid.d + 1
    center = cfg.initial.center or [0.0] * dim
    return GaussianPacketSpec(
        hgroup.HPoint.from_array(center),
        tuple(cfg.initial.widths),
        tuple(cfg.initial.momentum),
    )


def build_potential(cfg: ExperimentConfig, cls=PotentialSpec) -> PotentialSpec:
    p = cfg.potential
    if p.kind == "zero":
        return cls.zero()
    if p.kind == "constant":
        return cls.constant(p.amplitude)
    amplitude, width = p.amplitude, p.width

    def gaussian(z, s):
        r2 = np.sum(z * z, axis=-1) + s * s
        return amplitude * np.exp(-0.5 * r2 / width ** 2)

    return cls(gaussian, abs(amplitude))


def default_probes(d: int) -> List[List[float]]:
    """3 x 3 probes in the first (x, y) plane at s = 0."""
    probes = []
    for a in (-0.5, 0.0, 0.5):
        for b in (-0.5, 0.0, 0.5):
            p = [0.0] * (2 * d + 1)
            p[0], p[d] = a, b
            probes.append(p)
    return probes


def validate_config(cfg: ExperimentConfig) -> GridSpec:
    """Cross-field preconditions; raises before any computation or file is created."""
    grid = build_grid(cfg)
    if cfg.kind in ("heat", "schrodinger", "fk"):
        make_packet(build_packet_spec(cfg), grid)
    if cfg.kind in ("heat", "schrodinger"):
        cls = VPotentialSpec if cfg.kind == "schrodinger" else PotentialSpec
        build_potential(cfg, cls).sample(grid)
    if cfg.kind == "heat" and cfg.plan.method == "quadrature" and grid.d > 1 and cfg.plan.quadrature_points > 4:
        raise ConfigError("tensor Gauss-Hermite above 4 points per axis is limited to d = 1")
    if cfg.kind == "schrodinger":
        if cfg.plan.shear == "interpolated":
            for n in cfg.plan.n_list:
                check_shear_bound(grid, cfg.plan.t / n)
        if _schrodinger_oracle_applies(cfg):
            offending, min_sin = caustic_alphas(grid, cfg.plan.t)
            if offending:
                raise CausticError(
                    f"{len(offending)} alpha nodes sit within the caustic margin at t={cfg.plan.t}",
                    offending,
                    min_sin,
                )
    if cfg.kind == "fk" and grid.d != 1:
        raise ConfigError("the Feynman-Kac cross-check needs the d = 1 Mehler oracle")
    return grid


def _schrodinger_oracle_applies(cfg: ExperimentConfig) -> bool:
    return cfg.grid.d == 1 and cfg.potential.kind == "zero"


def observed_orders(ns: List[int], errors: List[float]) -> List[Optional[float]]:
    orders = []
    for (n0, e0), (n1, e1) in zip(zip(ns, errors), zip(ns[1:], errors[1:])):
        if e0 > 0 and e1 > 0:
            orders.append(math.log(e0 / e1) / math.log(n1 / n0))
        else:
            orders.append(None)
    return orders


# ============ Runners ============

def run_heat(cfg: ExperimentConfig, out: str) -> Dict[str, Any]:
    grid = build_grid(cfg)
    f0 = make_packet(build_packet_spec(cfg), grid)
    c = build_potential(cfg)
    plan = cfg.plan
    if grid.d == 1 and c.is_zero:
        reference, oracle = oracle_evolve(f0, plan.t, "heat"), "mehler"
    else:
        reference, oracle = chernoff_evolve_heat(f0, plan.t, plan.reference_n, c), "dense"
    if plan.method == "montecarlo":
        method = HeatStepMethod.montecarlo(plan.mc_samples, RngStream(cfg.seed, STREAM_HEAT_MC))
    elif plan.method == "quadrature":
        method = HeatStepMethod.quadrature(plan.quadrature_points)
    else:
        method = HeatStepMethod.dense()

    rows = []
    for n in plan.n_list:
        record = EvolutionRecord()
        f = chernoff_evolve_heat(f0, plan.t, n, c, method, record)
        row = ConvergenceRow(
            n=n,
            method=plan.method,
            l2_error_vs_oracle=relative_l2(f, reference),
            norm_drift=record.norm_drift,
            boundary_mass=max(record.boundary_masses or [0.0]),
        )
        rows.append(row.model_dump())
        print(f"[Heat] n={n} error={row.l2_error_vs_oracle:.3e} drift={row.norm_drift:.2e} ({record.wall_time:.2f}s)")
        if plan.dump_fields:
            dump_field(f, os.path.join(out, f"heat_n{n}.hfld"))
            if grid.d == 1:
                export_slice_csv(f, os.path.join(out, f"heat_n{n}_s0.csv"), grid.counts[-1] // 2)
    if plan.dump_fields:
        dump_field(reference, os.path.join(out, "reference.hfld"))
    write_csv(os.path.join(out, "convergence.csv"), rows)
    errors = [r["l2_error_vs_oracle"] for r in rows]
    return {"oracle": oracle, "errors": errors, "orders": observed_orders(plan.n_list, errors)}


def run_schrodinger(cfg: ExperimentConfig, out: str) -> Dict[str, Any]:
    grid = build_grid(cfg)
    f0 = make_packet(build_packet_spec(cfg), grid)
    v = build_potential(cfg, VPotentialSpec)
    plan = cfg.plan
    shear = ShearMethod(plan.shear)
    if _schrodinger_oracle_applies(cfg):
        reference, oracle = oracle_evolve(f0, plan.t, "schrodinger"), "mehler"
    else:
        reference = chernoff_evolve_schrodinger(f0, plan.t, plan.reference_n, v, ShearMethod.DENSE, plan.order)
        oracle = "dense"

    rows, order_gaps, contraction = [], [], []
    for n in plan.n_list:
        record = EvolutionRecord()
        f = chernoff_evolve_schrodinger(f0, plan.t, n, v, shear, plan.order, record)
        rows.append(ConvergenceRow(
            n=n,
            method=shear.value,
            l2_error_vs_oracle=relative_l2(f, reference),
            norm_drift=record.norm_drift,
            boundary_mass=max(record.boundary_masses or [0.0]),
        ).model_dump())
        if v.is_zero:
            predicted = predicted_dense_norm(f0, plan.t / n, n)
            contraction.append({"n": n, "measured": record.norms[-1], "predicted": predicted})
        else:
            other = "MS" if plan.order == "SM" else "SM"
            order_gaps.append({"n": n, "gap": relative_l2(f, chernoff_evolve_schrodinger(f0, plan.t, n, v, shear, other))})
        print(f"[Schrodinger] n={n} error={rows[-1]['l2_error_vs_oracle']:.3e} drift={record.norm_drift:.2e}")
        if plan.dump_fields:
            dump_field(f, os.path.join(out, f"schrodinger_n{n}.hfld"))
            if grid.d == 1:
                export_slice_csv(f, os.path.join(out, f"schrodinger_n{n}_s0.csv"), grid.counts[-1] // 2)
    write_csv(os.path.join(out, "convergence.csv"), rows)
    if order_gaps:
        write_csv(os.path.join(out, "order_gap.csv"), order_gaps)
    if contraction:
        write_csv(os.path.join(out, "norm_contraction.csv"), contraction)
    errors = [r["l2_error_vs_oracle"] for r in rows]
    return {"oracle": oracle, "errors": errors, "orders": observed_orders(plan.n_list, errors)}


def run_fk(cfg: ExperimentConfig, out: str) -> Dict[str, Any]:
    grid = build_grid(cfg)
    f0 = make_packet(build_packet_spec(cfg), grid)
    mc = cfg.mc
    reference = oracle_evolve(f0, mc.t, "heat")
    probes = mc.probes or default_probes(grid.d)
    oracle_values, _ = interpolate_many(reference, np.asarray(probes, dtype=float))
    root = RngStream(cfg.seed, STREAM_FK)

    rows = []
    for i, (probe, exact) in enumerate(zip(probes, oracle_values)):
        est = stochastic.fk_estimate(f0, hgroup.HPoint.from_array(probe), mc.t, mc.paths, mc.steps, root.derive(i), mc.scheme)
        row = FKRow(
            x=probe[0], y=probe[grid.d], s=probe[-1],
            estimate_re=est.value.real, estimate_im=est.value.imag, se=est.se,
            oracle_re=exact.real, oracle_im=exact.imag, abs_diff=abs(est.value - exact),
        )
        rows.append(row.model_dump())
        print(f"[FK] probe {i}: |diff|={row.abs_diff:.3e} se={row.se:.3e}")
    write_csv(os.path.join(out, "fk.csv"), rows)

    levy = stochastic.levy_area_statistics(mc.t, mc.steps, mc.paths, RngStream(cfg.seed, STREAM_LEVY), mc.lambdas, grid.d, mc.scheme)
    levy["variance_closed_form"] = stochastic.levy_area_variance(mc.t, grid.d) * (1.0 - 1.0 / mc.steps)
    for entry in levy["char"]:
        entry["closed_form"] = float(stochastic.levy_area_characteristic(entry["lambda"], mc.t, grid.d))
    write_json(os.path.join(out, "levy.json"), levy)
    worst = max(r["abs_diff"] / max(r["se"], 1e-300) for r in rows)
    return {"probes": len(rows), "max_diff_over_se": worst}


def run_walk(cfg: ExperimentConfig, out: str) -> Dict[str, Any]:
    grid = build_grid(cfg)
    w = cfg.walk
    dim = 2 * grid.d + 1
    start = hgroup.HPoint.from_array(w.start or [0.0] * dim)
    root = RngStream(cfg.seed, STREAM_WALK)

    table = stochastic.tightness_diagnostic(w.n_list, w.delta_list, w.eps, w.horizon, w.paths, root.derive(0), start, w.substeps)
    write_csv(os.path.join(out, "tightness.csv"), [TightnessRow(**row).model_dump() for row in table])

    bumps = stochastic.default_bumps(grid.d)
    references = [stochastic.semigroup_reference(b, w.t, start, grid) for b in bumps]
    weak = []
    for n in w.n_list:
        rows = stochastic.weak_convergence_stat(n, w.t, bumps, start, w.paths, root.derive(1000 + n), references=references)
        weak.extend(rows)
        print(f"[Walk] n={n} max disc Z={max(r['disc_z'] for r in rows):.3e} X={max(r['disc_x'] for r in rows):.3e}")
    write_csv(os.path.join(out, "weak.csv"), weak)
    trend = stochastic.weak_convergence_trend(weak)
    failing = [r["bump"] for r in trend if not r["passed"]]
    print(f"[Walk] weak-convergence trend: {len(trend) - len(failing)}/{len(trend)} bumps non-increasing within 3 SE")

    for n in w.n_list if w.dump_paths else []:
        for k in range(w.dump_paths):
            jump = stochastic.sample_jump_path(start, n, w.horizon, root.derive(2000 + 100 * n + k))
            smooth = stochastic.interpolate_geodesic(jump, w.substeps)
            write_csv(os.path.join(out, f"path_jump_n{n}_{k}.csv"), path_rows(jump.times, jump.points))
            write_csv(os.path.join(out, f"path_geodesic_n{n}_{k}.csv"), path_rows(smooth.times, smooth.points))
    return {
        "tightness_rows": len(table),
        "weak_rows": len(weak),
        "weak_trend_passed": not failing,
        "weak_trend_failing_bumps": failing,
    }


def run_dump_kernel(cfg: ExperimentConfig, out: str) -> Dict[str, Any]:
    k = cfg.kernel
    pairs = [(p[0], p[1]) for p in k.pairs]
    rows = kernel_table(k.alphas, k.t, pairs, k.flavor)
    write_csv(os.path.join(out, "kernel.csv"), rows)
    return {"rows": len(rows), "flavor": k.flavor}


# ============ Verify suite ============

def _check(name: str, value: float, tolerance: float) -> Dict[str, Any]:
    return VerifyCheck(name=name, passed=bool(value <= tolerance), value=float(value), tolerance=tolerance).model_dump()


# coarse-grid fractions 1/4 and 3/4 on every axis
INTERPOLATION_POINTS = np.array([[0.375, -0.625, 0.125], [1.125, 0.875, -0.375]])


def gaussian_interpolation_error(counts: int, points: np.ndarray = INTERPOLATION_POINTS, width: float = 1.25) -> float:
    """Max cubic-interpolation error for a centered Gaussian on a counts^3 grid over [-8, 8]^3."""
    grid = GridSpec((8.0, 8.0, 8.0), (counts,) * 3)

    def gauss(z, s):
        return np.exp(-0.5 * (np.sum(z * z, axis=-1) + s * s) / width ** 2)

    values, _ = interpolate_many(Field.from_function(grid, gauss), points)
    return float(np.max(np.abs(values - gauss(points[:, :2], points[:, 2]))))


def verify_suite(seed: int = 0) -> List[Dict[str, Any]]:
    """Fast invariant checks, mostly on a 16 x 16 x 16 grid.

    The quadrature and interpolation-order checks use the 32^3 grid where the
    cubic interpolant is in its asymptotic regime.
    """
    rng = RngStream(seed, STREAM_VERIFY).generator()
    checks = []

    p, q, r = (hgroup.HPoint.from_array(rng.standard_normal(3)) for _ in range(3))
    lhs = hgroup.group_mul(hgroup.group_mul(p, q), r).to_array()
    rhs = hgroup.group_mul(p, hgroup.group_mul(q, r)).to_array()
    checks.append(_check("associativity", float(np.max(np.abs(lhs - rhs))), 1e-12))
    inv = hgroup.group_mul(p, hgroup.group_inv(p)).to_array()
    checks.append(_check("inverse", float(np.max(np.abs(inv))), 1e-12))
    center = hgroup.commutator(hgroup.HPoint([1.0, 0.0], 0.0), hgroup.HPoint([0.0, 1.0], 0.0))
    checks.append(_check("commutator_center", abs(center.s + 2.0) + float(np.max(np.abs(center.z))), 1e-12))
    lam = 1.7
    homogeneity = abs(hgroup.koranyi_gauge(hgroup.dilate(p, lam)) - lam * hgroup.koranyi_gauge(p))
    checks.append(_check("gauge_homogeneity", homogeneity, 1e-12))

    grid = GridSpec((6.0, 6.0, 8.0), (16, 16, 16))
    f = make_packet(GaussianPacketSpec(hgroup.HPoint.identity(), (1.0,), (0.5, -0.25, 0.0)), grid)
    round_trip = relative_l2(to_physical(to_spectral(f)), f)
    checks.append(_check("transform_round_trip", round_trip, 1e-10))
    checks.append(_check("parseval_partial", abs(l2_norm(partial_ft(f)) - l2_norm(f)), 1e-10))
    checks.append(_check("parseval_spectral", abs(l2_norm(to_spectral(f)) - l2_norm(f)), 1e-10))

    checks.append(_check("heat_identity_at_zero", relative_l2(heat_step(f, 0.0), f), 0.0))
    checks.append(_check("heat_nonexpansive", max(l2_norm(heat_step(f, 0.05)) - l2_norm(f), 0.0), 1e-8))
    residuals = [generator_residual(f, tau) for tau in (2e-3, 1e-3)]
    checks.append(_check("heat_generator_order", residuals[1] / residuals[0], 0.7))

    checks.append(_check("schrodinger_identity_at_zero", relative_l2(schrodinger_step(f, 0.0), f), 0.0))
    predicted = predicted_dense_norm(f, 0.05)
    norm_gap = abs(l2_norm(schrodinger_step(f, 0.05)) - predicted) / predicted
    checks.append(_check("schrodinger_norm_prediction", norm_gap, 1e-5))
    residuals = [schrodinger_generator_residual(f, tau) for tau in (2e-3, 1e-3)]
    checks.append(_check("schrodinger_generator_order", residuals[1] / residuals[0], 0.7))
    profile = strong_continuity_profile(f, [0.1, 0.05, 0.025])
    checks.append(_check("schrodinger_strong_continuity", max(b - a for a, b in zip(profile, profile[1:])), 0.0))
    evolved = oracle_evolve(f, 0.25, "schrodinger")
    checks.append(_check("schrodinger_kernel_unitarity", abs(l2_norm(evolved) / l2_norm(f) - 1.0), 1e-3))

    spec = MehlerKernelSpec(0.8, 0.3, "heat")
    nodes = np.linspace(-8.0, 8.0, 161)
    X, Y = np.meshgrid(nodes, nodes, indexing="ij")
    zp = np.stack([X, Y], axis=-1)
    z = np.array([0.4, -0.3])
    mass = np.sum(mehler_heat_kernel(spec, z, zp)) * (nodes[1] - nodes[0]) ** 2
    checks.append(_check("heat_kernel_mass", abs(mass - heat_kernel_mass(0.8, 0.3, z)), 1e-6))
    free = MehlerKernelSpec(0.0, 0.3, "heat")
    near = MehlerKernelSpec(1e-7, 0.3, "heat")
    pts = np.array([[0.2, 0.1], [-0.3, 0.4]])
    gap = abs(mehler_heat_kernel(free, pts[0], pts[1]) - mehler_heat_kernel(near, pts[0], pts[1]))
    checks.append(_check("heat_kernel_free_limit", float(gap), 1e-6))
    ck_nodes = np.linspace(-7.0, 7.0, 141)
    CX, CY = np.meshgrid(ck_nodes, ck_nodes, indexing="ij")
    mid = np.stack([CX, CY], axis=-1)
    w = np.array([-0.2, 0.6])
    composed = np.sum(
        mehler_heat_kernel(MehlerKernelSpec(0.8, 0.2), z, mid) * mehler_heat_kernel(MehlerKernelSpec(0.8, 0.35), mid, w)
    ) * (ck_nodes[1] - ck_nodes[0]) ** 2
    direct = mehler_heat_kernel(MehlerKernelSpec(0.8, 0.55), z, w)
    checks.append(_check("chapman_kolmogorov", float(abs(composed - direct)), 1e-6))

    fine_grid = GridSpec((8.0, 8.0, 8.0), (32, 32, 32))
    wide = make_packet(GaussianPacketSpec(hgroup.HPoint.identity(), (1.25,), (0.6, -0.4, 0.5)), fine_grid)
    quad = heat_step(wide, 0.01, m=HeatStepMethod.quadrature(8))
    checks.append(_check("heat_quadrature_tracks_dense", relative_l2(quad, heat_step(wide, 0.01)), 2e-2))
    ratio = gaussian_interpolation_error(64) / gaussian_interpolation_error(32)
    checks.append(_check("interpolation_order", ratio, 0.2))
    renormalization = hgroup.renormalization_term(hgroup.segment_basis(4, 1.0), 0.25)
    checks.append(_check("segment_basis_renormalization", abs(renormalization), 1e-14))

    stats = stochastic.levy_area_statistics(0.5, 50, 20000, RngStream(seed, STREAM_VERIFY).derive(1))
    checks.append(_check("levy_area_mean_in_se", abs(stats["mean"]) / stats["se_mean"], 4.0))

    for check in checks:
        status = "ok" if check["passed"] else "FAILED"
        print(f"[Verify] {check['name']}: {check['value']:.3e} (tol {check['tolerance']:.1e}) {status}")
    return checks


def run_verify(cfg: ExperimentConfig, out: str) -> Dict[str, Any]:
    checks = verify_suite(cfg.seed)
    write_json(os.path.join(out, "verify.json"), checks)
    return {"passed": all(c["passed"] for c in checks), "checks": len(checks)}


RUNNERS: Dict[str, Callable[[ExperimentConfig, str], Dict[str, Any]]] = {
    "heat": run_heat,
    "schrodinger": run_schrodinger,
    "fk": run_fk,
    "walk": run_walk,
    "verify": run_verify,
    "dump-kernel": run_dump_kernel,
}


# ============ Orchestration ============

def resolve_output_dir(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> str:
    return os.path.abspath(out_dir or cfg.output_dir or os.path.join(settings.output_dir, cfg.kind))


def run(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> Dict[str, Any]:
    """Validate, run, write manifest.json, then move the staging directory into place."""
    validate_config(cfg)
    target = resolve_output_dir(cfg, out_dir)
    parent = os.path.dirname(target)
    os.makedirs(parent, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".staging-", dir=parent)
    started = time.perf_counter()
    try:
        summary = RUNNERS[cfg.kind](cfg, staging)
        summary["kind"] = cfg.kind
        write_json(os.path.join(staging, "config.json"), cfg.model_dump())
        write_json(os.path.join(staging, "summary.json"), summary)
        manifest = [ManifestEntry(**e).model_dump() for e in build_manifest(staging)]
        write_json(os.path.join(staging, "manifest.json"), manifest)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    retired = None
    if os.path.isdir(target):
        # previous artifacts stay on disk until the new ones are in place
        retired = os.path.join(parent, ".retired-" + os.path.basename(staging)[len(".staging-"):])
        os.replace(target, retired)
    elif os.path.exists(target):
        shutil.rmtree(staging, ignore_errors=True)
        raise HeisenbergError(f"output path {target} exists and is not a directory")
    try:
        os.replace(staging, target)
    except BaseException:
        if retired is not None:
            os.replace(retired, target)
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if retired is not None:
        shutil.rmtree(retired, ignore_errors=True)
    logger.info(f"{cfg.kind} run committed to {target} ({time.perf_counter() - started:.2f}s)")
    summary["output_dir"] = target
    return summary
