import numpy as np
import pytest

from app.errors import CausticError, DimensionMismatchError, HeisenbergError
from app.services.field import GridSpec, l2_norm, relative_l2
from app.services.heat import chernoff_evolve_heat
from app.services.magnetic import (
    MehlerKernelSpec,
    caustic_alphas,
    heat_kernel_mass,
    kernel_table,
    mehler_heat_kernel,
    mehler_schrodinger_kernel,
    oracle_evolve,
    refine_factor,
)


def plane(extent=8.0, n=161):
    nodes = np.linspace(-extent, extent, n)
    X, Y = np.meshgrid(nodes, nodes, indexing="ij")
    return np.stack([X, Y], axis=-1), nodes[1] - nodes[0]


def test_free_limit_is_exact():
    z, zp = np.array([0.3, -0.2]), np.array([-0.5, 0.4])
    t = 0.4
    free = complex(mehler_heat_kernel(MehlerKernelSpec(0.0, t), z, zp))
    w2 = np.sum((z - zp) ** 2)
    assert free == pytest.approx(np.exp(-w2 / (2 * t)) / (2 * np.pi * t), rel=1e-14)
    near = mehler_heat_kernel(MehlerKernelSpec(1e-10, t), z, zp)
    assert abs(near - free) < 1e-9
    schr = complex(mehler_schrodinger_kernel(MehlerKernelSpec(0.0, t, "schrodinger"), z, zp))
    assert schr == pytest.approx(np.exp(0.5j * w2 / t) / (2j * np.pi * t), rel=1e-14)


@pytest.mark.parametrize("alpha", [0.0, 0.7, -1.3])
def test_heat_kernel_mass_closed_form(alpha):
    t = 0.3
    zp, h = plane()
    for z in (np.array([0.0, 0.0]), np.array([0.4, -0.9])):
        mass = np.sum(mehler_heat_kernel(MehlerKernelSpec(alpha, t), z, zp)) * h * h
        assert abs(mass - heat_kernel_mass(alpha, t, z)) < 1e-6
    if alpha != 0:
        assert heat_kernel_mass(alpha, t, np.zeros(2)) < 1.0


def test_heat_kernel_is_hermitian():
    spec = MehlerKernelSpec(0.9, 0.5)
    z, zp = np.array([0.2, 1.1]), np.array([-0.7, 0.3])
    forward = complex(mehler_heat_kernel(spec, z, zp))
    backward = complex(mehler_heat_kernel(spec, zp, z))
    assert forward == pytest.approx(backward.conjugate(), rel=1e-14)


def test_chapman_kolmogorov():
    alpha, s, t = 0.8, 0.2, 0.35
    zp, h = plane(extent=7.0, n=141)
    z, w = np.array([0.3, -0.4]), np.array([-0.2, 0.6])
    left = mehler_heat_kernel(MehlerKernelSpec(alpha, s), z, zp)
    right = mehler_heat_kernel(MehlerKernelSpec(alpha, t), zp, w)
    composed = np.sum(left * right) * h * h
    direct = mehler_heat_kernel(MehlerKernelSpec(alpha, s + t), z, w)
    assert abs(composed - direct) < 1e-6


def test_schrodinger_kernel_rejects_caustics():
    spec = MehlerKernelSpec(np.pi, 1.0, "schrodinger")
    with pytest.raises(CausticError) as err:
        mehler_schrodinger_kernel(spec, np.zeros(2), np.ones(2))
    assert err.value.exit_code == 3
    with pytest.raises(HeisenbergError):
        MehlerKernelSpec(1.0, 0.0)
    with pytest.raises(HeisenbergError):
        mehler_heat_kernel(MehlerKernelSpec(1.0, 0.2, "schrodinger"), np.zeros(2), np.zeros(2))
    with pytest.raises(DimensionMismatchError):
        mehler_heat_kernel(MehlerKernelSpec(1.0, 0.2), np.zeros(4), np.zeros(4))


def test_caustic_scan(grid32):
    offending, min_sin = caustic_alphas(grid32, 0.25)
    assert offending == []
    assert min_sin > 0.09
    # alpha t = pi lands on the Nyquist node -2 pi at t = 0.5
    offending, min_sin = caustic_alphas(grid32, 0.5)
    assert len(offending) == 1
    assert min_sin < 1e-12


def test_kernel_table_rows():
    rows = kernel_table([0.0, 1.0], 0.25, [([0.0, 0.0], [0.5, 0.5])], "heat")
    assert len(rows) == 2
    assert set(rows[0]) == {"alpha", "t", "x", "y", "xp", "yp", "re", "im"}
    assert rows[0]["im"] == 0.0
    assert rows[0]["re"] == pytest.approx(np.exp(-0.5 / 0.5) / (2 * np.pi * 0.25))


def test_refine_factor_grows_with_bandwidth(grid32):
    low = refine_factor(MehlerKernelSpec(0.0, 0.25), grid32)
    high = refine_factor(MehlerKernelSpec(6.0, 0.25), grid32)
    assert 1 <= low <= high <= 16


def test_oracle_preconditions(moving_packet32, grid32):
    with pytest.raises(CausticError):
        oracle_evolve(moving_packet32, 0.5, "schrodinger")
    with pytest.raises(HeisenbergError):
        oracle_evolve(moving_packet32, -0.1)
    assert np.array_equal(oracle_evolve(moving_packet32, 0.0).values, moving_packet32.values)
    with pytest.raises(DimensionMismatchError):
        oracle_evolve(moving_packet32.__class__(GridSpec((4.0,) * 5, (8,) * 5), np.zeros((8,) * 5)), 0.1)


@pytest.mark.slow
def test_oracle_semigroup_and_unitarity(moving_packet32):
    heat_once = oracle_evolve(moving_packet32, 0.2, "heat")
    heat_twice = oracle_evolve(oracle_evolve(moving_packet32, 0.1, "heat"), 0.1, "heat")
    assert relative_l2(heat_twice, heat_once) < 1e-5
    assert l2_norm(heat_once) < l2_norm(moving_packet32)

    schr = oracle_evolve(moving_packet32, 0.25, "schrodinger")
    assert l2_norm(schr) == pytest.approx(l2_norm(moving_packet32), abs=1e-5)
    schr_twice = oracle_evolve(oracle_evolve(moving_packet32, 0.125, "schrodinger"), 0.125, "schrodinger")
    assert relative_l2(schr_twice, schr) < 1e-5


@pytest.mark.slow
def test_chernoff_error_against_oracle_shrinks_with_n(moving_packet32):
    oracle = oracle_evolve(moving_packet32, 0.1, "heat")
    coarse = relative_l2(chernoff_evolve_heat(moving_packet32, 0.1, 8), oracle)
    fine = relative_l2(chernoff_evolve_heat(moving_packet32, 0.1, 64), oracle)
    assert fine < coarse / 4


@pytest.mark.slow
@pytest.mark.parametrize("flavor, t", [("heat", 0.2), ("schrodinger", 0.25)])
def test_oracle_commutes_with_center_translation(moving_packet32, flavor, t):
    shifted = moving_packet32.with_values(np.roll(moving_packet32.values, 3, axis=-1))
    evolved = oracle_evolve(moving_packet32, t, flavor)
    evolved_shifted = oracle_evolve(shifted, t, flavor)
    assert relative_l2(evolved_shifted, evolved.with_values(np.roll(evolved.values, 3, axis=-1))) < 1e-10


@pytest.mark.slow
def test_heat_oracle_keeps_real_symmetric_data_positive(packet32):
    evolved = oracle_evolve(packet32, 0.2, "heat")
    peak = float(np.max(evolved.values.real))
    assert peak > 0
    assert float(np.max(np.abs(evolved.values.imag))) < 1e-8 * peak
    assert float(np.min(evolved.values.real)) >= -1e-6 * peak
