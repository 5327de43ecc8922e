import numpy as np
import pytest

from app.services.field import GaussianPacketSpec, GridSpec, make_packet
from app.services.hgroup import HPoint
from app.services.rng import RngStream


@pytest.fixture
def grid32() -> GridSpec:
    """h_s = 0.5, alpha_max = 2 pi; alpha_max t < pi up to t = 0.5."""
    return GridSpec((8.0, 8.0, 8.0), (32, 32, 32))


@pytest.fixture
def grid16() -> GridSpec:
    return GridSpec((6.0, 6.0, 8.0), (16, 16, 16))


@pytest.fixture
def packet32(grid32):
    return make_packet(GaussianPacketSpec(HPoint.identity(), (1.25,)), grid32)


@pytest.fixture
def moving_packet32(grid32):
    return make_packet(GaussianPacketSpec(HPoint.identity(), (1.25,), (0.6, -0.4, 0.5)), grid32)


@pytest.fixture
def packet16(grid16):
    return make_packet(GaussianPacketSpec(HPoint.identity(), (1.0,), (0.5, -0.25, 0.0)), grid16)


@pytest.fixture
def rng() -> np.random.Generator:
    return RngStream(20240611).generator()


@pytest.fixture
def stream() -> RngStream:
    return RngStream(7, 0)
