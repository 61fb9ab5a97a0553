import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zipdefense.schedule import TimestepPath, make_linear_schedule, make_timestep_path, sigma_ddpm


def mp_alpha_bar(T, b0, b1):
    """Extended-precision cumulative product of (1 - beta_t) for a linear schedule."""
    mpmath.mp.dps = 50
    out, prod = [], mpmath.mpf(1)
    for t in range(1, T + 1):
        beta = mpmath.mpf(b0) if T == 1 else mpmath.mpf(b0) + mpmath.mpf(t - 1) / (T - 1) * (mpmath.mpf(b1) - mpmath.mpf(b0))
        prod *= 1 - beta
        out.append(prod)
    return out


def test_two_step_endpoints():
    s = make_linear_schedule(2, 1e-4, 0.02)
    np.testing.assert_array_equal(s.beta, [1e-4, 0.02])
    assert s.abar(2) == pytest.approx(0.9999 * 0.98, abs=1e-15)
    assert s.abar(2) == pytest.approx(0.979902, abs=1e-15)
    assert s.abar(0) == 1.0


def test_T1000_alpha_bar_against_extended_precision(sched1000):
    ref = mp_alpha_bar(1000, 1e-4, 0.02)
    assert float(abs(sched1000.abar(1000) - ref[-1]) / ref[-1]) < 1e-10
    dev = max(abs(float(ref[t - 1]) - sched1000.abar(t)) for t in range(1, 1001))
    assert dev < 1e-12


def test_single_step_schedule():
    s = make_linear_schedule(1, 0.01, 0.02)
    assert s.beta_at(1) == 0.01


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 1e-4, 1.0), (10, 0.02, 1e-4), (2.5, 1e-4, 0.02)])
def test_schedule_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        make_linear_schedule(*args)


def test_table_invariants(sched1000):
    s = sched1000
    assert np.all((s.beta > 0) & (s.beta < 1))
    assert np.all(np.diff(s.beta) >= 0)
    np.testing.assert_array_equal(s.alpha, 1.0 - s.beta)
    np.testing.assert_array_equal(s.alpha_bar[1:], s.alpha_bar[:-1] * s.alpha[1:])
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert 0 < s.alpha_bar[-1] < s.alpha_bar[0] < 1


def test_tables_are_read_only(sched1000):
    with pytest.raises(ValueError):
        sched1000.beta[0] = 0.5


@settings(max_examples=25, deadline=None)
@given(T=st.integers(1, 300), b0=st.floats(1e-5, 0.05), width=st.floats(0.0, 0.05))
def test_alpha_bar_matches_oracle_for_any_schedule(T, b0, width):
    s = make_linear_schedule(T, b0, b0 + width)
    ref = mp_alpha_bar(T, b0, b0 + width)
    assert max(abs(float(r) - a) for r, a in zip(ref, s.alpha_bar)) < 1e-12
    assert sigma_ddpm(s, 1) == 0.0


def test_sigma_ddpm_substitution():
    s = make_linear_schedule(2, 1e-4, 0.02)
    expected = np.sqrt((1 - 0.9999) / (1 - 0.9999 * 0.98) * 0.02)
    assert sigma_ddpm(s, 2) == pytest.approx(expected, rel=1e-12)
    assert sigma_ddpm(s, 1) == 0.0


def test_sigma_vanishes_with_beta():
    s = make_linear_schedule(10, 1e-12, 1e-12)
    assert all(sigma_ddpm(s, t) < 1e-5 for t in range(1, 11))


def test_sigma_out_of_range(sched50):
    for t in (0, 51):
        with pytest.raises(ValueError):
            sigma_ddpm(sched50, t)


@pytest.mark.parametrize("T,S,expected", [(10, 3, (10, 7, 4, 1)), (4, 1, (4, 3, 2, 1)), (10, 9, (10, 1)), (5, 5, (5, 1)), (1, 1, (1,))])
def test_timestep_path(T, S, expected):
    path = make_timestep_path(make_linear_schedule(T), S)
    assert path.steps == expected
    assert path.prev(1) == 0


def test_timestep_path_T1000_S50(sched1000):
    path = make_timestep_path(sched1000, 50)
    assert len(path) == 21
    assert path.steps[0] == 1000 and path.steps[-2] == 50 and path.steps[-1] == 1
    assert path.prev(1000) == 950


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 2000), data=st.data())
def test_timestep_path_properties(T, data):
    S = data.draw(st.integers(1, T))
    path = make_timestep_path(make_linear_schedule(T), S)
    steps = path.steps
    assert steps[0] == T and steps[-1] == 1
    assert all(a > b for a, b in zip(steps, steps[1:]))
    assert all(a - b == S for a, b in zip(steps[:-2], steps[1:-1]))
    assert all(1 <= t <= T for t in steps)


@pytest.mark.parametrize("S", [0, 11])
def test_timestep_path_rejects_bad_pace(S):
    with pytest.raises(ValueError):
        make_timestep_path(make_linear_schedule(10), S)


def test_timestep_path_validation():
    with pytest.raises(ValueError):
        TimestepPath((5, 3))
    with pytest.raises(ValueError):
        TimestepPath((3, 3, 1))
