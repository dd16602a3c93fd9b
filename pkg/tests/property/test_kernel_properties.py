"""Property-based tests for the numeric kernel.

**Feature: ghostrnn-kit, Property 18: Kernel Identities**

For any matrix and vectors, matvec is additive, the squared singular
values sum to the squared Frobenius norm, and cosine similarity is
symmetric and ignores positive rescaling.
"""

import numpy as np
from hypothesis import given, settings, strategies as st

from ghostrnn.kernel import Xoshiro256StarStar, cosine_similarity, matvec, singular_values


seed_strategy = st.integers(min_value=0, max_value=2**32 - 1)
dim_strategy = st.integers(min_value=1, max_value=8)


class TestMatvecLinearity:
    """matvec distributes over vector addition."""

    @settings(max_examples=100, deadline=None)
    @given(rows=dim_strategy, cols=dim_strategy, seed=seed_strategy)
    def test_additive(self, rows, cols, seed):
        """
        **Feature: ghostrnn-kit, Property 18: Kernel Identities**

        For any A, x and y, matvec(A, x + y) equals
        matvec(A, x) + matvec(A, y) to 1e-12 of |A|(|x| + |y|).
        """
        rng = Xoshiro256StarStar(seed)
        A = rng.uniform_array(-2.0, 2.0, (rows, cols))
        x = rng.uniform_array(-2.0, 2.0, cols)
        y = rng.uniform_array(-2.0, 2.0, cols)
        joint = matvec(A, x + y)
        split = matvec(A, x) + matvec(A, y)
        scale = np.abs(A) @ (np.abs(x) + np.abs(y))
        assert np.all(np.abs(joint - split) <= 1e-12 * scale)


class TestSingularValueIdentities:
    """Frobenius identity and ordering."""

    @settings(max_examples=100, deadline=None)
    @given(rows=dim_strategy, cols=dim_strategy, seed=seed_strategy)
    def test_squares_sum_to_frobenius(self, rows, cols, seed):
        """
        **Feature: ghostrnn-kit, Property 18: Kernel Identities**

        For any nonzero matrix, the singular values are nonnegative and
        descending, and their squares sum to ||A||_F^2 to 1e-9 relative.
        """
        A = Xoshiro256StarStar(seed).uniform_array(-1.0, 1.0, (rows, cols))
        sigma = singular_values(A)
        assert sigma.shape == (min(rows, cols),)
        assert np.all(sigma >= 0.0)
        assert np.all(np.diff(sigma) <= 0.0)
        frobenius = float(np.sum(A * A))
        assert abs(float(np.sum(sigma * sigma)) - frobenius) <= 1e-9 * frobenius


class TestCosineInvariance:
    """Symmetry and positive scale invariance."""

    @settings(max_examples=200, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=32),
        seed=seed_strategy,
        a=st.floats(min_value=1e-3, max_value=1e3),
        b=st.floats(min_value=1e-3, max_value=1e3),
    )
    def test_symmetric_and_scale_free(self, n, seed, a, b):
        """
        **Feature: ghostrnn-kit, Property 18: Kernel Identities**

        For any u, v and positive a, b, cos(u, v) == cos(v, u) and
        cos(a u, b v) equals cos(u, v) to 1e-12.
        """
        rng = Xoshiro256StarStar(seed)
        u = rng.uniform_array(-1.0, 1.0, n)
        v = rng.uniform_array(-1.0, 1.0, n)
        base = cosine_similarity(u, v)
        assert abs(cosine_similarity(v, u) - base) <= 1e-12
        assert abs(cosine_similarity(a * u, b * v) - base) <= 1e-12
        assert -1.0 <= base <= 1.0
