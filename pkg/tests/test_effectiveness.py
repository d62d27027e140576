import numpy as np
import pytest

from annalloc.effectiveness import (
    DEFAULT_BOX,
    DEFAULT_PARAMS_FILE,
    AffineModel,
    BoxSet,
    SyntheticModel,
    SyntheticModelParams,
    WeightMatrix,
    project_box,
    pwl,
    read_model_file,
    write_model_file,
)
from annalloc.errors import EmptyBoxError, FormatError, PwlBreakpointError


def random_controls(rng, n, box=DEFAULT_BOX):
    return box.lower + rng.random((n, box.dim)) * box.width


def random_states(rng, n):
    return np.column_stack([rng.uniform(0, 8, n), rng.uniform(-12, 12, n)])


# --- project_box ------------------------------------------------------------

def test_project_clamps_to_table_limits():
    out = project_box([25, -5, -50, 10, 10], DEFAULT_BOX)
    np.testing.assert_array_equal(out, [20, 0, -40, 10, 0])


def test_project_keeps_admissible_points():
    rng = np.random.default_rng(0)
    u = random_controls(rng, 1000)
    np.testing.assert_array_equal(project_box(u, DEFAULT_BOX), u)
    np.testing.assert_array_equal(project_box(np.zeros(5), DEFAULT_BOX), np.zeros(5))


def test_project_is_idempotent():
    rng = np.random.default_rng(1)
    u = rng.normal(scale=60, size=(1000, 5))
    once = project_box(u, DEFAULT_BOX)
    np.testing.assert_array_equal(project_box(once, DEFAULT_BOX), once)
    assert DEFAULT_BOX.contains(once).all()


def test_box_rejects_inverted_bounds():
    with pytest.raises(EmptyBoxError):
        BoxSet(np.array([1.0]), np.array([0.0]))


def test_box_arrays_are_read_only():
    with pytest.raises(ValueError):
        DEFAULT_BOX.lower[0] = 3.0


# --- synthetic model --------------------------------------------------------

def test_zero_command_gives_zero_moment():
    m = SyntheticModel()
    rng = np.random.default_rng(2)
    np.testing.assert_array_equal(m.evaluate(np.zeros((50, 5)), random_states(rng, 50)), 0.0)


def test_elevator_only_pitch():
    # Cm = c_me*10 + c_m2*10*|10| = -0.010 - 0.0005
    tau = SyntheticModel().evaluate([10, 0, 0, 0, 0], [0, 0])
    np.testing.assert_allclose(tau, [0.0, -0.0105, 0.0], atol=1e-15)


def test_left_clamshell_split_gives_yaw():
    tau = SyntheticModel().evaluate([0, 20, -20, 0, 0], [0, 0])
    np.testing.assert_allclose(tau, [0.0, 0.0, 0.01], atol=1e-15)


def test_hand_evaluation_at_generic_point():
    p = SyntheticModelParams()
    u = np.array([-7.0, 12.0, -3.0, 5.0, -30.0])
    a, b = 6.0, -4.0
    e, sl, sr, fl, fr = -7.0, 9.0, -25.0, 15.0, 35.0
    expect = [
        p.c_le * (sl - sr) * (1 + 0.01 * a) + p.c_lb * e * b,
        p.c_me * e * (1 + 0.02 * a) + p.c_ms * (sl + sr) + p.c_m2 * e * abs(e),
        p.c_nf * (fl - fr) * (1 + 0.01 * a) + p.c_na * (sl - sr) * a,
    ]
    np.testing.assert_allclose(SyntheticModel().evaluate(u, [a, b]), expect, rtol=1e-14)


def test_pwl_function_segments():
    np.testing.assert_allclose(pwl([-25, -10, 3, 10, 16]), [-17.5, -10, 3, 10, 13])


def test_pwl_variant_drops_quadratic_term():
    m = SyntheticModel(SyntheticModelParams(pwl_variant=True))
    # elevator 16 -> pwl 13; alpha 0 -> gain 1
    np.testing.assert_allclose(m.evaluate([16, 0, 0, 0, 0], [0, 0]), [0, -0.013, 0], atol=1e-15)


def test_jacobian_at_origin():
    jac = SyntheticModel().jacobian_u(np.zeros(5), np.zeros(2))
    assert jac.shape == (3, 5)
    assert jac[1, 0] == pytest.approx(-1.0e-3, abs=1e-18)


def test_roll_elevator_derivative_vanishes_without_sideslip():
    rng = np.random.default_rng(3)
    u = random_controls(rng, 20)
    jac = SyntheticModel().jacobian_u(u, np.column_stack([np.zeros(20), np.zeros(20)]))
    np.testing.assert_array_equal(jac[:, 0, 0], 0.0)


def _central_diff(m, u, sigma, h=1e-5):
    cols = []
    for j in range(5):
        d = np.zeros(5)
        d[j] = h
        cols.append((m.evaluate(u + d, sigma) - m.evaluate(u - d, sigma)) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("pwl_variant", [False, True])
def test_jacobian_matches_finite_differences(pwl_variant):
    m = SyntheticModel(SyntheticModelParams(pwl_variant=pwl_variant))
    rng = np.random.default_rng(4)
    worst = 0.0
    count = 0
    while count < 100:
        u = random_controls(rng, 1)[0]
        if abs(abs(u[0]) - 10.0) < 1e-3:
            continue
        s = random_states(rng, 1)[0]
        worst = max(worst, np.max(np.abs(m.jacobian_u(u, s) - _central_diff(m, u, s))))
        count += 1
    assert worst <= 1e-6


def test_pwl_kink_needs_a_side():
    m = SyntheticModel(SyntheticModelParams(pwl_variant=True))
    u = np.array([10.0, 0, 0, 0, 0])
    with pytest.raises(PwlBreakpointError) as info:
        m.jacobian_u(u, [0, 0])
    assert info.value.code == "PWL_BREAKPOINT"
    assert m.jacobian_u(u, [0, 0], side=1)[1, 0] == pytest.approx(-0.5e-3)
    assert m.jacobian_u(u, [0, 0], side=-1)[1, 0] == pytest.approx(-1.0e-3)


def test_lipschitz_bound_holds_on_random_pairs():
    m = SyntheticModel()
    rng = np.random.default_rng(5)
    u1, u2 = random_controls(rng, 2000), random_controls(rng, 2000)
    s = random_states(rng, 2000)
    lhs = np.linalg.norm(m.evaluate(u1, s) - m.evaluate(u2, s), axis=1)
    rhs = m.lipschitz_bound() * np.linalg.norm(u1 - u2, axis=1)
    assert np.all(lhs <= rhs)


def test_batched_evaluation_matches_loop():
    m = SyntheticModel()
    rng = np.random.default_rng(6)
    u, s = random_controls(rng, 30), random_states(rng, 30)
    batch = m.evaluate(u, s)
    for k in range(30):
        np.testing.assert_array_equal(batch[k], m.evaluate(u[k], s[k]))


def test_affine_model_is_exactly_affine():
    rng = np.random.default_rng(7)
    a = AffineModel(rng.normal(size=(3, 5)), rng.normal(size=3))
    u = rng.normal(size=(10, 5))
    np.testing.assert_allclose(a.evaluate(u), u @ a.slope.T + a.offset)
    assert a.jacobian_u(u).shape == (10, 3, 5)
    assert not np.isfinite(a.box().upper).any()


# --- weights ----------------------------------------------------------------

def test_weight_rejects_indefinite_matrix():
    with pytest.raises(ValueError):
        WeightMatrix(np.diag([1.0, -0.5, 2.0]))


def test_weight_rejects_asymmetric_matrix():
    with pytest.raises(ValueError):
        WeightMatrix([[1.0, 0.2, 0], [0, 1.0, 0], [0, 0, 1.0]])


def test_weight_root_reproduces_norm():
    w = WeightMatrix([[2.0, 0.3, 0], [0.3, 1.0, 0.1], [0, 0.1, 3.0]])
    r = np.array([0.4, -1.2, 0.7])
    assert np.linalg.norm(w.root @ r) ** 2 == pytest.approx(w.norm2(r))


# --- parameter files --------------------------------------------------------

def test_shipped_parameter_file_matches_defaults():
    m = read_model_file(DEFAULT_PARAMS_FILE)
    assert m.params == SyntheticModelParams()
    np.testing.assert_array_equal(m.box().lower, DEFAULT_BOX.lower)
    np.testing.assert_array_equal(m.box().upper, DEFAULT_BOX.upper)


def test_parameter_file_round_trip(tmp_path):
    params = SyntheticModelParams(c_le=5e-4, c_ma=-2e-5, pwl_variant=True)
    box = BoxSet(np.array([-10.0, 0, -30, 0, -30]), np.array([10.0, 30, 0, 30, 0]))
    path = tmp_path / "m.txt"
    write_model_file(path, params, box)
    text = path.read_text()
    assert "de_min = -10" in text and "d8L_max = 0" in text
    m = read_model_file(path)
    assert m.params == params
    np.testing.assert_array_equal(m.box().lower, box.lower)


def test_parameter_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("c_le = 1e-4\nc_zz = 3\n")
    with pytest.raises(FormatError):
        read_model_file(path)
