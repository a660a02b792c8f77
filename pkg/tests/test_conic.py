import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_mrmp import conic
from parabolic_mrmp.conic import (
    NONNEGATIVE,
    PSD,
    ROTATED_SECOND_ORDER,
    SECOND_ORDER,
    Affine,
    CapabilityError,
    ConicProgram,
    add_abs_epigraph,
    add_norm2_epigraph,
    add_quadratic_upper_bound,
    residuals,
)


def fixed(prog, values):
    """Variables pinned to ``values`` by equalities."""
    idx = prog.add_variables(len(values), "x")
    prog.add_equality(Affine.var(idx) - np.asarray(values, dtype=float))
    return idx


@pytest.mark.parametrize("value", [3.0, -3.0])
def test_abs_epigraph_of_fixed_value(value):
    prog = ConicProgram()
    x = fixed(prog, [value])
    s = add_abs_epigraph(prog, Affine.var(x))
    prog.add_objective(Affine.var(s))
    res = conic.solve(prog)
    assert res.status == conic.OPTIMAL
    np.testing.assert_allclose(res.primal[s], 3.0, atol=1e-7)


def test_abs_epigraph_of_free_value():
    prog = ConicProgram()
    x = prog.add_variables(1)
    s = add_abs_epigraph(prog, Affine.var(x))
    prog.add_objective(Affine.var(s))
    res = conic.solve(prog)
    np.testing.assert_allclose(res.primal[s], 0.0, atol=1e-7)


@pytest.mark.parametrize("values, expected", [([3, 4], 5.0), ([0, 0], 0.0),
                                              ([1, 1, 1], np.sqrt(3))])
def test_norm2_epigraph(values, expected):
    prog = ConicProgram()
    x = fixed(prog, values)
    t = add_norm2_epigraph(prog, Affine.var(x))
    prog.add_objective(Affine.var(t))
    res = conic.solve(prog)
    np.testing.assert_allclose(res.primal[t], expected, atol=1e-6)


def test_quadratic_upper_bound_tight_and_infeasible():
    prog = ConicProgram()
    lin, vec = fixed(prog, [1.0]), fixed(prog, [1.0, 0.0])
    add_quadratic_upper_bound(prog, Affine.var(lin), Affine.var(vec))
    assert conic.solve(prog).status == conic.OPTIMAL

    prog = ConicProgram()
    lin, vec = fixed(prog, [0.5]), fixed(prog, [1.0, 0.0])
    add_quadratic_upper_bound(prog, Affine.var(lin), Affine.var(vec))
    assert conic.solve(prog).status == conic.INFEASIBLE


def test_quadratic_upper_bound_minimized_to_tightness():
    prog = ConicProgram()
    vec = fixed(prog, [2.0, 1.0])
    lin = prog.add_variables(1)
    add_quadratic_upper_bound(prog, Affine.var(lin), Affine.var(vec))
    prog.add_objective(Affine.var(lin))
    res = conic.solve(prog)
    np.testing.assert_allclose(res.primal[lin], 5.0, atol=1e-6)


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(0, 1))
def test_quadratic_upper_bound_set_is_convex(values, theta):
    prog = ConicProgram()
    z = prog.add_variables(3)
    add_quadratic_upper_bound(prog, Affine.var(z[:1]), Affine.var(z[1:]))
    a, b = np.asarray(values[:3]), np.asarray(values[3:])
    # lift each point onto the boundary so both are feasible
    a[0] = a[1] ** 2 + a[2] ** 2
    b[0] = b[1] ** 2 + b[2] ** 2
    assert residuals(prog, a)["cone_residual"] <= 1e-12
    assert residuals(prog, b)["cone_residual"] <= 1e-12
    mix = theta * a + (1 - theta) * b
    assert residuals(prog, mix)["cone_residual"] <= 1e-9


def test_solve_simple_bound_and_infeasible():
    prog = ConicProgram()
    z = prog.add_variables(1)
    prog.add_cone(NONNEGATIVE, Affine.var(z) - 3.0)
    prog.add_objective(Affine.var(z))
    res = conic.solve(prog)
    np.testing.assert_allclose(res.primal, [3.0], atol=1e-7)
    np.testing.assert_allclose(res.objective_value, 3.0, atol=1e-7)

    prog = ConicProgram()
    z = prog.add_variables(1)
    prog.add_cone(NONNEGATIVE, Affine.stack([Affine.var(z) - 1.0, -Affine.var(z)]))
    res = conic.solve(prog)
    assert res.status == conic.INFEASIBLE
    assert res.primal is None


def test_solve_second_order():
    prog = ConicProgram()
    t = prog.add_variables(1)
    prog.add_cone(SECOND_ORDER, Affine.stack([Affine.var(t), Affine.constant([3.0, 4.0])]), 3)
    prog.add_objective(Affine.var(t))
    np.testing.assert_allclose(conic.solve(prog).primal, [5.0], atol=1e-6)


def test_solve_unbounded():
    prog = ConicProgram()
    z = prog.add_variables(1)
    prog.add_objective(Affine.var(z))
    assert conic.solve(prog).status == conic.UNBOUNDED


def test_psd_cone_and_capability_error():
    # minimize x s.t. [[x, 1], [1, x]] is PSD, so x = 1
    prog = ConicProgram()
    x = prog.add_variables(1)
    xv, one = Affine.var(x), Affine.constant([1.0])
    prog.add_cone(PSD, conic.psd_vectorize([[xv, one], [one, xv]]), 4)
    prog.add_objective(xv)
    np.testing.assert_allclose(conic.solve(prog, "clarabel").primal, [1.0], atol=1e-6)
    with pytest.raises(CapabilityError):
        conic.solve(prog, "clarabel-socp")


def test_rotated_cone_matches_definition():
    # 2 u v >= w^2 with u = 2 fixed, minimize v for w = 2  ->  v = 1
    prog = ConicProgram()
    v = prog.add_variables(1)
    expr = Affine.stack([Affine.constant([2.0]), Affine.var(v), Affine.constant([2.0])])
    prog.add_cone(ROTATED_SECOND_ORDER, expr, 3)
    prog.add_objective(Affine.var(v))
    np.testing.assert_allclose(conic.solve(prog).primal, [1.0], atol=1e-6)


def test_residuals_examples():
    prog = ConicProgram()
    x = fixed(prog, [1.0, 2.0])
    z = np.array([1.0, 2.0])
    assert residuals(prog, z) == {"equality_residual": 0.0, "cone_residual": 0.0}
    z[1] += 1e-3
    np.testing.assert_allclose(residuals(prog, z)["equality_residual"], 1e-3, rtol=1e-9)

    prog = ConicProgram()
    w = prog.add_variables(3)
    prog.add_cone(SECOND_ORDER, Affine.var(w), 3)
    delta = 0.25
    point = np.array([5.0 - delta, 3.0, 4.0])
    np.testing.assert_allclose(residuals(prog, point)["cone_residual"], delta, rtol=1e-12)
    del x


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.floats(0.1, 3))
def test_reformulation_matches_grid_oracle(target, weight):
    # minimize |x - a| + w * ||(x, y) - b||_2 with x on a grid, y free -> y = b_y
    a, b = target
    prog = ConicProgram()
    x = prog.add_variables(2)
    s = add_abs_epigraph(prog, Affine.var(x[:1]) - a)
    t = add_norm2_epigraph(prog, Affine.var(x) - np.array([b, 0.5]))
    prog.add_objective(Affine.var(s))
    prog.add_objective(Affine.var(t), weight)
    res = conic.solve(prog)
    grid = np.linspace(-3, 3, 60001)
    oracle = np.min(np.abs(grid - a) + weight * np.abs(grid - b))
    assert res.objective_value <= oracle + 1e-6
    assert res.objective_value >= oracle - 1e-3


def test_certified_output_residuals():
    prog = ConicProgram()
    x = prog.add_variables(3)
    add_quadratic_upper_bound(prog, Affine.var(x[:1]), Affine.var(x[1:]))
    prog.add_cone(NONNEGATIVE, Affine.var(x[1:]) - 1.0)
    prog.add_objective(Affine.var(x[:1]))
    res = conic.solve(prog)
    r = residuals(prog, res.primal)
    assert r["equality_residual"] <= 1e-6 and r["cone_residual"] <= 1e-6
    np.testing.assert_allclose(res.primal[0], 2.0, atol=1e-6)


def test_add_cone_rejects_bad_shapes():
    prog = ConicProgram()
    x = prog.add_variables(3)
    with pytest.raises(ValueError):
        prog.add_cone(SECOND_ORDER, Affine.var(x[:1]), 1)
    with pytest.raises(ValueError):
        prog.add_cone(ROTATED_SECOND_ORDER, Affine.var(x[:2]), 2)
    with pytest.raises(ValueError):
        prog.add_cone(PSD, Affine.var(x), 3)
    with pytest.raises(ValueError):
        prog.add_cone(NONNEGATIVE, Affine.var([7]))


def test_dump_is_stable():
    def build():
        prog = ConicProgram()
        x = fixed(prog, [1.0, -2.0])
        s = add_abs_epigraph(prog, Affine.var(x))
        prog.add_objective(Affine.var(s))
        return prog

    text = conic.dump(build())
    assert text == conic.dump(build())
    assert text.splitlines()[0] == "vars 4"
    assert any(line.startswith("cone 0 nonnegative") for line in text.splitlines())


def test_affine_arithmetic():
    e = Affine.var([0, 2], [1.0, -1.0]) * 2.0 + 1.0
    np.testing.assert_array_equal(e.value([1.0, 5.0, 3.0]), [3.0, -5.0])
    f = Affine.stack([e, Affine.constant([4.0])])
    np.testing.assert_array_equal((-f).value([0.0, 0.0, 0.0]), [-1.0, -1.0, -4.0])
    np.testing.assert_array_equal((e * np.array([1.0, 0.0])).value([1, 1, 1]), [3.0, 0.0])


def test_interleave_groups_rows_per_cone():
    heads = [Affine.constant([1.0, 2.0])]
    tails = [Affine.constant([10.0, 11.0, 20.0, 21.0])]
    out = conic._interleave(heads, tails, 2)
    np.testing.assert_array_equal(out.const, [1, 10, 11, 2, 20, 21])
    assert list(itertools.islice(out.const, 3)) == [1, 10, 11]
