import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from equitransporter.groups import (compose, element, from_angle, identity, inverse, permute, quotient,
                                    regular, rep_matrix, standard, trivial)

orders = st.sampled_from([1, 2, 3, 4, 6, 8, 36])


@given(orders, st.integers(-100, 100), st.integers(-100, 100))
def test_composition_adds_indices(n, a, b):
    assert compose(element(n, a), element(n, b)) == element(n, a + b)
    assert element(n, a) * inverse(element(n, a)) == identity(n)


def test_element_validation():
    with pytest.raises(ValueError):
        element(0, 1)
    with pytest.raises(ValueError):
        compose(element(4, 1), element(8, 1))


def test_angle_quantization_ties_toward_zero():
    assert from_angle(0.0, 8) == element(8, 0)
    assert from_angle(math.pi / 4, 8) == element(8, 1)
    # exactly half a bin rounds toward zero
    assert from_angle(math.pi / 8, 8) == element(8, 0)
    assert from_angle(-math.pi / 8, 8) == element(8, 0)
    assert from_angle(math.pi / 8 + 1e-9, 8) == element(8, 1)
    assert from_angle(2 * math.pi, 8) == element(8, 0)
    assert from_angle(-math.pi / 2, 4) == element(4, 3)


def test_regular_generator_moves_last_coordinate_first():
    x = np.arange(4.0)
    m = rep_matrix(regular(4), element(4, 1))
    np.testing.assert_array_equal(m @ x, [3.0, 0.0, 1.0, 2.0])
    np.testing.assert_array_equal(permute(regular(4), element(4, 1), x), [3.0, 0.0, 1.0, 2.0])


def test_quotient_matrices_frozen():
    # C4/C2 acts on 2 cosets; the generator swaps them, the half turn is trivial
    np.testing.assert_array_equal(rep_matrix(quotient(4, 2), element(4, 1)), [[0, 1], [1, 0]])
    np.testing.assert_array_equal(rep_matrix(quotient(4, 2), element(4, 2)), np.eye(2))
    assert quotient(8, 2).dim == 4
    with pytest.raises(ValueError):
        quotient(6, 4)


def test_standard_rep_is_rotation_matrix():
    m = rep_matrix(standard(4), element(4, 1))
    np.testing.assert_allclose(m, [[0, -1], [1, 0]], atol=1e-16)
    assert trivial(4).dim == 1 and np.all(rep_matrix(trivial(4), element(4, 3)) == 1)


@pytest.mark.parametrize("rep", [regular(4), regular(8), quotient(8, 2), quotient(36, 2), trivial(8)])
def test_permutation_reps_are_exact_homomorphisms(rep):
    n = rep.n
    for a in range(n):
        for b in range(n):
            lhs = rep_matrix(rep, element(n, a)) @ rep_matrix(rep, element(n, b))
            assert np.array_equal(lhs, rep_matrix(rep, element(n, a + b)))
        assert np.array_equal(rep_matrix(rep, element(n, a)) @ rep_matrix(rep, element(n, -a)), np.eye(rep.dim))


def test_quotient_kernel_invariance():
    rep = quotient(36, 2)
    for a in range(36):
        assert np.array_equal(rep_matrix(rep, element(36, a)), rep_matrix(rep, element(36, a + 18)))


def test_permute_blocks_and_axis(rng):
    x = rng.normal(size=(3, 8, 5))  # two regular C4 blocks along axis 1
    y = permute(regular(4), element(4, 1), x, axis=1)
    np.testing.assert_array_equal(y[:, :4], np.roll(x[:, :4], 1, axis=1))
    np.testing.assert_array_equal(y[:, 4:], np.roll(x[:, 4:], 1, axis=1))
    with pytest.raises(ValueError):
        permute(regular(4), element(4, 1), np.zeros(6))
    with pytest.raises(ValueError):
        permute(standard(4), element(4, 1), np.zeros(2))
