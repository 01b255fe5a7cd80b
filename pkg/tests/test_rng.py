import numpy as np
import pytest

from marketlab.numerics import RngStream, draw_student_t_unit, student_t_unit_series


def test_same_identity_bit_identical():
    a = student_t_unit_series(RngStream(7, 3), 1000)
    b = student_t_unit_series(RngStream(7, 3), 1000)
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = student_t_unit_series(RngStream(7, 0), 1000)
    b = student_t_unit_series(RngStream(7, 1), 1000)
    assert not np.array_equal(a, b)
    # independence sanity: correlation small
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_moments_of_truncated_t3():
    # Monte Carlo oracle, 1e6 draws. The scaled t(3) loses the variance
    # carried by the rejected |eta| > 10 tail: (4/pi)/cutoff ~ 0.127, so the
    # sample variance settles near 0.876 (not "just below 1": the t(3) tail
    # carries that much variance).
    draws = student_t_unit_series(RngStream(7, 0), 10**6, df=3, cutoff=10.0)
    assert np.all(np.abs(draws) <= 10.0)
    assert abs(draws.mean()) < 0.004
    var = draws.var()
    assert 0.85 < var < 0.90
    m2 = (draws**2).mean()
    m4 = (draws**4).mean()
    assert m4 / m2**2 - 3.0 > 3.0  # heavy tails survive truncation


def test_single_draw_matches_series():
    assert draw_student_t_unit(RngStream(5, 1)) == student_t_unit_series(RngStream(5, 1), 1)[0]


def test_degenerate_cutoff_terminates_with_error():
    with pytest.raises(RuntimeError, match="rejection"):
        student_t_unit_series(RngStream(0, 0), 100, cutoff=1e-4)


@pytest.mark.parametrize("df", [1, 2])
def test_low_df_rejected(df):
    with pytest.raises(ValueError, match="df"):
        student_t_unit_series(RngStream(0, 0), 10, df=df)


def test_bad_cutoff_rejected():
    with pytest.raises(ValueError, match="cutoff"):
        student_t_unit_series(RngStream(0, 0), 10, cutoff=0.0)
