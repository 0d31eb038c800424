import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinchcomp.geometry import (build_geometry, pa_coordinates, PinchingState,
                                spacing_violations, range_violations,
                                respace_positions, clamp_to_range,
                                dbm_to_watt, default_y_offsets)


def test_table1_defaults_build():
    geom = build_geometry(seed=0)
    assert geom.span == 80.0
    assert geom.n_pas == 4
    assert geom.n_waveguides == 2
    assert geom.heights == (10.0, 15.0)
    assert geom.wavelength == 0.01
    assert geom.n_users == 2
    assert geom.rate_threshold == 0.2
    assert geom.power_budget[0] == pytest.approx(dbm_to_watt(18.0))
    # -173 dBm/Hz over 1 MHz
    assert geom.noise_power == pytest.approx(10 ** ((-173 - 30) / 10) * 1e6)
    assert geom.guided_wavelength == pytest.approx(0.01 / 1.4)


def test_delta_eq_bound_rejected():
    with pytest.raises(ValueError):
        build_geometry(delta_eq=0.3, n_pas=4, seed=0)


def test_zero_users_rejected():
    with pytest.raises(ValueError):
        build_geometry(n_users=0, seed=0)


def test_nonpositive_span_rejected():
    with pytest.raises(ValueError):
        build_geometry(span=-1.0, seed=0)


def test_user_sampling_deterministic():
    g1 = build_geometry(seed=42)
    g2 = build_geometry(seed=42)
    assert np.array_equal(g1.users, g2.users)
    g3 = build_geometry(seed=43)
    assert not np.array_equal(g1.users, g3.users)


def test_default_y_offsets_evenly_spaced():
    assert default_y_offsets(80.0, 2) == (80.0 / 3, 160.0 / 3)
    assert default_y_offsets(60.0, 3) == (15.0, 30.0, 45.0)


def test_pa_coordinates_basic():
    geom = build_geometry(seed=0, y_offsets=(20.0, 40.0))
    x = np.zeros((2, 2, 4))
    x[0, 0, 0] = 10.0
    state = PinchingState(x)
    np.testing.assert_allclose(pa_coordinates(geom, state, 0, 0, 0), [10.0, 20.0, 10.0])
    # feed point column
    np.testing.assert_allclose(pa_coordinates(geom, state, 0, 0, 1), [0.0, 20.0, 10.0])
    # BS2 carries the 15 m height
    assert pa_coordinates(geom, state, 1, 1, 0)[2] == 15.0


def test_pa_coordinates_out_of_range():
    geom = build_geometry(seed=0)
    state = PinchingState(np.zeros((2, 2, 4)))
    with pytest.raises(IndexError):
        pa_coordinates(geom, state, 2, 0, 0)
    with pytest.raises(IndexError):
        pa_coordinates(geom, state, 0, 5, 0)


def test_spacing_violations_examples():
    geom = build_geometry(seed=0, min_spacing=0.005)
    x = np.tile(np.array([10.0, 20.0, 30.0, 40.0]), (2, 2, 1))
    assert spacing_violations(geom, PinchingState(x)) == []

    x[0, 0] = [1.0, 1.0, 30.0, 40.0]
    out = spacing_violations(geom, PinchingState(x))
    assert len(out) == 1
    b, n, p, q, deficit = out[0]
    assert (b, n, p, q) == (0, 0, 0, 1)
    assert deficit == pytest.approx(0.005)

    x[0, 0] = [10.0, 10.003, 30.0, 40.0]
    out = spacing_violations(geom, PinchingState(x))
    # deficit recomputed by scalar arithmetic: 0.005 - 0.003
    assert out[0][4] == pytest.approx(0.005 - 0.003)


def test_range_violations_examples():
    geom = build_geometry(seed=0)
    x = np.tile(np.array([16.0, 32.0, 48.0, 64.0]), (2, 2, 1))
    x[0, 0, 0] = -0.5
    out = range_violations(geom, PinchingState(x))
    assert out == [(0, 0, 0, 0.5)]

    x[0, 0, 0] = 80.0   # boundary is inclusive
    assert range_violations(geom, PinchingState(x)) == []

    x[0, 0, 0] = 81.2
    out = range_violations(geom, PinchingState(x))
    assert out[0][3] == pytest.approx(1.2)


@given(perm=st.permutations(range(4)))
@settings(max_examples=24, deadline=None)
def test_spacing_violation_count_permutation_invariant(perm):
    geom = build_geometry(seed=0)
    rng = np.random.default_rng(9)
    x = np.tile(rng.uniform(0, 80, 4), (2, 2, 1))
    base = spacing_violations(geom, PinchingState(x))
    x_perm = x[:, :, list(perm)]
    shuffled = spacing_violations(geom, PinchingState(x_perm))
    assert len(shuffled) == len(base)
    assert sum(v[4] for v in shuffled) == pytest.approx(sum(v[4] for v in base))


def test_equidistant_positions_feasible():
    from pinchcomp.baselines import equidistant_positions
    geom = build_geometry(seed=0)
    state = equidistant_positions(geom)
    np.testing.assert_allclose(state.x[0, 0], [16.0, 32.0, 48.0, 64.0])
    assert spacing_violations(geom, state) == []
    assert range_violations(geom, state) == []
    # single PA sits at the midpoint
    geom1 = build_geometry(n_pas=1, seed=0)
    assert equidistant_positions(geom1).x[0, 0, 0] == pytest.approx(40.0)


def test_respace_positions_projects_to_feasible():
    geom = build_geometry(seed=0)
    rng = np.random.default_rng(3)
    x = rng.uniform(-5.0, 85.0, size=(2, 2, 4))
    x[0, 0, :2] = 10.0   # coincident pair
    fixed = respace_positions(geom, x)
    state = PinchingState(fixed)
    assert spacing_violations(geom, state) == []
    assert range_violations(geom, state) == []


def test_clamp_to_range():
    geom = build_geometry(seed=0)
    x = np.full((2, 2, 4), 40.0)
    x[0, 0, 0] = -1.0
    x[1, 1, 3] = 90.0
    out = clamp_to_range(geom, PinchingState(x))
    assert out.x[0, 0, 0] == 0.0
    assert out.x[1, 1, 3] == 80.0
