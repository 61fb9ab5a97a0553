import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from zipdefense.linops import AvgPoolOperator

X = np.array([[1.0, 3.0], [5.0, 7.0]])[..., None]


def test_pool_block_mean():
    op = AvgPoolOperator(2)
    np.testing.assert_array_equal(op.apply(X), [[[4.0]]])
    np.testing.assert_array_equal(op.pinv([[[4.0]]]), np.full((2, 2, 1), 4.0))
    np.testing.assert_array_equal(op.project_range(X), np.full((2, 2, 1), 4.0))
    np.testing.assert_array_equal(op.project_null(X)[..., 0], [[-3.0, -1.0], [1.0, 3.0]])


def test_k1_is_identity(rng):
    op = AvgPoolOperator(1)
    x = rng.standard_normal((4, 6, 3))
    np.testing.assert_array_equal(op.apply(x), x)
    np.testing.assert_array_equal(op.pinv(x), x)
    np.testing.assert_array_equal(op.project_null(x), np.zeros_like(x))


def test_constant_image_is_fixed():
    op = AvgPoolOperator(4)
    c = np.full((8, 8, 3), 0.37)
    np.testing.assert_allclose(op.apply(c), np.full((2, 2, 3), 0.37), rtol=0, atol=1e-15)
    np.testing.assert_allclose(op.project_range(c), c, atol=1e-15)


def test_channels_pooled_independently():
    op = AvgPoolOperator(2)
    x = np.zeros((2, 2, 3))
    x[..., 1] = 1.0
    np.testing.assert_array_equal(op.apply(x)[0, 0], [0.0, 1.0, 0.0])


def test_non_divisible_rejected():
    op = AvgPoolOperator(2)
    with pytest.raises(ValueError):
        op.apply(np.zeros((3, 4, 1)))
    with pytest.raises(ValueError):
        op.project_null(np.zeros((4, 5, 1)))
    with pytest.raises(ValueError):
        AvgPoolOperator(0)


def test_batched_matches_unbatched(rng):
    op = AvgPoolOperator(2)
    xs = rng.standard_normal((5, 8, 8, 3))
    np.testing.assert_array_equal(op.apply(xs)[3], op.apply(xs[3]))


latents = arrays(np.float64, (6, 6, 2), elements=st.floats(-1, 1))


@settings(max_examples=60)
@given(x=latents, y=latents, k=st.sampled_from([1, 2, 3, 6]))
def test_projection_laws(x, y, k):
    op = AvgPoolOperator(k)
    px, py = op.project_range(x), op.project_range(y)
    np.testing.assert_allclose(op.apply(op.pinv(op.apply(x))), op.apply(x), atol=1e-12)
    np.testing.assert_allclose(op.project_range(px), px, atol=1e-12)
    assert abs(np.vdot(px, y) - np.vdot(x, py)) < 1e-10
    assert abs(np.vdot(px, op.project_null(y))) < 1e-9 * max(np.linalg.norm(x) * np.linalg.norm(y), 1e-300) + 1e-12
    np.testing.assert_allclose(op.project_range(op.project_null(x)), 0.0, atol=1e-12)
    np.testing.assert_allclose(px + op.project_null(x), x, atol=1e-15)


@given(y=arrays(np.float64, (3, 3, 1), elements=st.floats(-1, 1)), k=st.integers(1, 4))
def test_pool_of_upsample_recovers(y, k):
    op = AvgPoolOperator(k)
    np.testing.assert_allclose(op.apply(op.pinv(y)), y, atol=1e-15)


def test_matrix_form_is_orthogonal_projection():
    """Explicit matrix of P = A+A on a small grid: symmetric, idempotent, rank = pooled size."""
    op = AvgPoolOperator(2)
    n = 4 * 4 * 1
    P = np.stack([op.project_range(e.reshape(4, 4, 1)).ravel() for e in np.eye(n)], axis=1)
    np.testing.assert_allclose(P, P.T, atol=1e-15)
    np.testing.assert_allclose(P @ P, P, atol=1e-15)
    assert np.linalg.matrix_rank(P) == 4
