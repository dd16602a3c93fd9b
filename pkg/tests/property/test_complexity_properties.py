"""Property-based tests for parameter accounting.

**Feature: ghostrnn-kit, Property 7: Parameter Accounting**

For any dimensions, the closed-form counts agree with the tensors a cell
actually holds and the multiplies a step actually performs.
"""

from hypothesis import given, settings, strategies as st

from ghostrnn.cells import CellKind, init_cell
from ghostrnn.complexity import (
    allocated_weights,
    count_report,
    matched_gru_state_dim,
    measured_macs_per_step,
    param_count_ghost,
    param_count_gru,
    param_count_phi,
)


feature_strategy = st.integers(min_value=1, max_value=256)


@st.composite
def state_and_ratio(draw, max_intrinsic=128):
    intrinsic = draw(st.integers(min_value=1, max_value=max_intrinsic))
    ratio = draw(st.integers(min_value=1, max_value=8))
    return intrinsic * ratio, ratio


class TestClosedForms:
    """Relations between the closed forms."""

    @settings(max_examples=200)
    @given(feature_dim=feature_strategy, dims=state_and_ratio())
    def test_ratio_one_equals_gru(self, feature_dim, dims):
        """
        **Feature: ghostrnn-kit, Property 7: Parameter Accounting**

        For any f and s, the ratio-1 GhostRNN has exactly the GRU count.
        """
        state_dim, _ = dims
        assert param_count_ghost(feature_dim, state_dim, 1) == param_count_gru(feature_dim, state_dim)

    @settings(max_examples=200)
    @given(feature_dim=feature_strategy, dims=state_and_ratio())
    def test_ghost_never_exceeds_gru(self, feature_dim, dims):
        """
        **Feature: ghostrnn-kit, Property 7: Parameter Accounting**

        For any ratio, the GhostRNN count is at most the GRU count and the
        phi count is the product of intrinsic and ghost sizes.
        """
        state_dim, ratio = dims
        k = state_dim // ratio
        assert param_count_phi(state_dim, ratio) == k * (state_dim - k)
        assert param_count_ghost(feature_dim, state_dim, ratio) <= param_count_gru(feature_dim, state_dim)
        report = count_report(CellKind.GHOST, feature_dim, state_dim, ratio)
        assert 0.0 <= report.compression_vs_gru < 1.0 or ratio == 1

    @settings(max_examples=200)
    @given(feature_dim=feature_strategy, dims=state_and_ratio())
    def test_matched_baseline_is_tight(self, feature_dim, dims):
        """
        **Feature: ghostrnn-kit, Property 7: Parameter Accounting**

        For any GhostRNN, the matched GRU fits the budget and one more
        unit would not.
        """
        state_dim, ratio = dims
        budget = param_count_ghost(feature_dim, state_dim, ratio)
        s = matched_gru_state_dim(feature_dim, state_dim, ratio)
        assert s >= 1
        assert param_count_gru(feature_dim, s) <= budget or s == 1
        assert param_count_gru(feature_dim, s + 1) > budget


class TestAllocatedTensors:
    """Counts measured on real cells."""

    @settings(max_examples=50, deadline=None)
    @given(
        feature_dim=st.integers(min_value=1, max_value=12),
        dims=state_and_ratio(max_intrinsic=6),
        use_gru=st.booleans(),
    )
    def test_allocated_and_measured_equal_formula(self, feature_dim, dims, use_gru):
        """
        **Feature: ghostrnn-kit, Property 7: Parameter Accounting**

        For any cell, allocated weight elements and multiplies per step both
        equal the closed-form weight count.
        """
        state_dim, ratio = dims
        kind = CellKind.GRU if use_gru else CellKind.GHOST
        r = 1 if use_gru else ratio
        cell = init_cell(kind, feature_dim, state_dim, r, seed=0)
        report = count_report(kind, feature_dim, state_dim, r)
        assert allocated_weights(cell) == report.weights_only
        assert measured_macs_per_step(cell) == report.weights_only
