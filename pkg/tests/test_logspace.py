import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from smcdiv.logspace import logmeanexp, logsumexp


def test_logsumexp_known_values():
    assert logsumexp([math.log(1.0), math.log(3.0)]) == pytest.approx(math.log(4.0))
    assert logsumexp([0.0]) == 0.0


def test_logsumexp_handles_neg_inf_entries():
    assert logsumexp([-math.inf, 0.0]) == pytest.approx(0.0)
    assert logsumexp([-math.inf, -math.inf]) == -math.inf


def test_logsumexp_empty_rejected():
    with pytest.raises(ValueError):
        logsumexp([])


def test_logmeanexp_uniform_vector_is_identity():
    assert logmeanexp([1.7, 1.7, 1.7]) == pytest.approx(1.7)


@given(
    st.lists(
        st.floats(min_value=-1e6, max_value=700.0, allow_nan=False),
        min_size=1,
        max_size=30,
    )
)
def test_logsumexp_matches_direct_sum_after_shift(values):
    # direct reference computation, stable because inputs are bounded above
    m = max(values)
    expected = m + math.log(sum(math.exp(v - m) for v in values))
    assert logsumexp(values) == pytest.approx(expected, rel=1e-12)


@given(
    st.lists(
        st.floats(min_value=-50.0, max_value=50.0, allow_nan=False),
        min_size=1,
        max_size=30,
    ),
    st.floats(min_value=-100.0, max_value=100.0, allow_nan=False),
)
def test_logsumexp_shift_invariance(values, shift):
    shifted = logsumexp([v + shift for v in values])
    assert shifted == pytest.approx(logsumexp(values) + shift, rel=1e-9, abs=1e-9)
