import numpy as np
import pytest

from app.errors import ConfigError, HeisenbergError, RepresentationError
from app.services.field import (
    Field,
    GridSpec,
    interpolate_many,
    l2_norm,
    partial_ft,
    relative_l2,
)
from app.services.heat import (
    EvolutionRecord,
    HeatStepMethod,
    PotentialSpec,
    apply_sublaplacian,
    chernoff_evolve_heat,
    gauss_hermite,
    generator_residual,
    heat_step,
    strong_continuity_profile,
    sup_norm_check,
)
from app.services.hgroup import sigma_arrays
from app.services.magnetic import oracle_evolve
from app.services.rng import RngStream


def test_gauss_hermite_moments():
    x, w = gauss_hermite(8)
    assert np.sum(w) == pytest.approx(1.0)
    assert np.sum(w * x ** 2) == pytest.approx(1.0)
    assert np.sum(w * x ** 4) == pytest.approx(3.0)


def test_step_at_zero_is_identity(packet32):
    assert np.array_equal(heat_step(packet32, 0.0).values, packet32.values)
    assert np.array_equal(heat_step(packet32, 0.0, m=HeatStepMethod.quadrature()).values, packet32.values)


def test_step_preconditions(packet32):
    with pytest.raises(HeisenbergError):
        heat_step(packet32, -0.1)
    with pytest.raises(RepresentationError):
        heat_step(partial_ft(packet32), 0.1)
    with pytest.raises(ConfigError):
        HeatStepMethod("montecarlo", samples=10, stream=RngStream(1))
    with pytest.raises(ConfigError):
        HeatStepMethod.montecarlo(2000, None)
    with pytest.raises(ConfigError):
        PotentialSpec(lambda z, s: 2.0 + 0 * s, bound=1.0).sample(packet32.grid)


def test_dense_step_is_non_expansive(moving_packet32):
    for tau in (1e-3, 1e-2, 0.1, 0.5):
        assert l2_norm(heat_step(moving_packet32, tau)) <= l2_norm(moving_packet32) + 1e-8


def test_quadrature_step_tracks_dense(moving_packet32):
    tau = 0.01
    dense = heat_step(moving_packet32, tau)
    quad = heat_step(moving_packet32, tau, m=HeatStepMethod.quadrature(8))
    assert relative_l2(quad, dense) < 2e-2
    assert l2_norm(quad) <= l2_norm(moving_packet32) * (1 + 1e-3)


def test_montecarlo_step_is_reproducible_and_unbiased(packet16):
    tau = 0.01
    m = HeatStepMethod.montecarlo(2000, RngStream(11, 3))
    a = heat_step(packet16, tau, m=m)
    b = heat_step(packet16, tau, m=m)
    assert np.array_equal(a.values, b.values)
    assert relative_l2(a, heat_step(packet16, tau)) < 2e-2


def test_dense_step_is_the_gaussian_translation_average():
    """S(tau) psi(p) = E psi(z + sqrt(tau) zeta, s + sqrt(tau) sigma(z, zeta)) on a band-limited psi."""
    grid = GridSpec((8.0, 8.0, 8.0), (32, 32, 32))
    f = Field.from_function(grid, lambda z, s: np.exp(-0.5 * np.sum(z * z, axis=-1) - 0.5 * s * s))
    tau = 0.04
    stepped = heat_step(f, tau)
    x, w = gauss_hermite(20)
    probe = np.array([0.5, -1.0])
    s0 = 0.5
    total = 0.0
    for xa, wa in zip(x, w):
        for xb, wb in zip(x, w):
            zeta = np.array([xa, xb])
            z = probe + np.sqrt(tau) * zeta
            s = s0 + np.sqrt(tau) * sigma_arrays(probe, zeta)
            total += wa * wb * np.exp(-0.5 * z @ z - 0.5 * s * s)
    ix = int(round((probe[0] + 8.0) / grid.spacing[0]))
    iy = int(round((probe[1] + 8.0) / grid.spacing[1]))
    js = int(round((s0 + 8.0) / grid.spacing[2]))
    assert stepped.values[ix, iy, js].real == pytest.approx(total, abs=1e-7)


def test_sublaplacian_on_s_independent_field_is_euclidean():
    grid = GridSpec((8.0, 8.0, 4.0), (32, 32, 8))
    f = Field.from_function(grid, lambda z, s: np.exp(-0.5 * np.sum(z * z, axis=-1)) + 0 * s)
    expected = Field.from_function(
        grid, lambda z, s: (np.sum(z * z, axis=-1) - 2.0) * np.exp(-0.5 * np.sum(z * z, axis=-1)) + 0 * s
    )
    assert relative_l2(apply_sublaplacian(f), expected) < 1e-6


def test_generator_residual_is_first_order(moving_packet32):
    for c in (PotentialSpec.zero(), PotentialSpec.constant(0.3)):
        residuals = [generator_residual(moving_packet32, tau, c) for tau in (1e-2, 5e-3, 2.5e-3)]
        assert residuals[1] / residuals[0] <= 0.7
        assert residuals[2] / residuals[1] <= 0.7


def test_strong_continuity_and_sup_contraction(moving_packet32):
    taus = [0.1, 0.05, 0.025, 0.0125]
    profile = strong_continuity_profile(moving_packet32, taus)
    assert all(b < a for a, b in zip(profile, profile[1:]))
    after, bound = sup_norm_check(moving_packet32, 0.05, PotentialSpec.constant(0.5))
    assert after <= bound * (1 + 1e-6)


def test_constant_potential_adds_tau_c(packet32):
    tau, kappa = 0.02, 0.4
    plain = heat_step(packet32, tau)
    shifted = heat_step(packet32, tau, PotentialSpec.constant(kappa))
    np.testing.assert_allclose(shifted.values - plain.values, tau * kappa * packet32.values, atol=1e-14)


def test_evolve_records_diagnostics(packet32):
    record = EvolutionRecord()
    f = chernoff_evolve_heat(packet32, 0.25, 4, record=record)
    assert len(record.norms) == 5
    assert len(record.boundary_masses) == 4
    assert all(b <= a + 1e-12 for a, b in zip(record.norms, record.norms[1:]))
    assert record.norm_drift == pytest.approx(record.norms[0] - record.norms[-1])
    assert f.repr == packet32.repr
    with pytest.raises(HeisenbergError):
        chernoff_evolve_heat(packet32, 0.25, 0)


@pytest.mark.slow
def test_chernoff_converges_to_mehler_oracle_at_first_order(moving_packet32):
    t = 0.25
    reference = oracle_evolve(moving_packet32, t, "heat")
    ns = [2, 4, 8, 16]
    errors = [relative_l2(chernoff_evolve_heat(moving_packet32, t, n), reference) for n in ns]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    orders = [np.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert 0.7 <= orders[-1] <= 1.3
    assert 0.7 <= float(np.mean(orders)) <= 1.3


@pytest.mark.slow
def test_heat_iterate_is_the_jump_chain_expectation(grid32):
    """S(t/n)^n f(p) equals E f(Y_n) for the chain with steps of variance t/n."""
    from app.services.stochastic import GaussianBump, walk_positions
    from app.services.hgroup import HPoint

    bump = GaussianBump(HPoint.identity(), 1.0)
    f = bump.field(grid32)
    n = 4
    evolved = chernoff_evolve_heat(f, 1.0, n)
    exact, _ = interpolate_many(evolved, np.zeros((1, 3)))
    x, _ = walk_positions(HPoint.identity(), n, 1.0, 200000, RngStream(5, 9))
    values = bump(x)
    se = values.std(ddof=1) / np.sqrt(values.size)
    assert abs(values.mean() - exact[0].real) < 4 * se + 1e-4


def test_constant_potential_run_tends_to_exponential_factor(packet16):
    t, kappa = 0.25, 0.8
    errors = []
    for n in (2, 4, 8):
        free = chernoff_evolve_heat(packet16, t, n)
        shifted = chernoff_evolve_heat(packet16, t, n, PotentialSpec.constant(kappa))
        errors.append(relative_l2(shifted, free.with_values(np.exp(kappa * t) * free.values)))
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 0.6 * errors[0]
