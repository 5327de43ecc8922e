import numpy as np

from app.services.rng import RngStream


def test_same_key_same_draws():
    a = RngStream(42, 3).generator().standard_normal(8)
    b = RngStream(42, 3).generator().standard_normal(8)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, RngStream(42, 4).generator().standard_normal(8))


def test_children_are_stable_and_distinct():
    parent = RngStream(42)
    children = parent.spawn(4)
    assert children == [parent.derive(i) for i in range(4)]
    assert len({c.stream for c in children}) == 4
    assert parent.derive(0) != RngStream(42, 1).derive(0)
    assert RngStream(-1).seed == 2 ** 64 - 1
