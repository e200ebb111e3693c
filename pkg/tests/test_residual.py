import numpy as np
import pytest

from oracles import CASES, fitted_order, residual_ladder
from physcp.errors import ConfigurationError, GridMismatchError
from physcp.grid import Axis, FieldTensor, Grid
from physcp.residual import (ResidualProgram, Term, Factor, advection_program,
                             boundary_residual_program, burgers_program, linear_program,
                             navier_stokes_programs, wave_program)
from physcp.stencil import apply, build_kernel, derivative_kernel


def grid_tx(nt=9, nx=17, tmax=0.5, xmax=2.0):
    return Grid([Axis("t", 0, tmax, nt), Axis("x", 0, xmax, nx)])


def grid_txy(n=9):
    return Grid([Axis("t", 0, 1, n), Axis("x", -1, 1, n), Axis("y", -1, 1, n)])


def test_advection_structure_and_output_grid():
    g = grid_tx()
    prog = advection_program(g, 1.0)
    assert len(prog.terms) == 2 and prog.fields == ("u",)
    out = prog.evaluate(FieldTensor(g, np.zeros(g.shape)))
    assert out.grid.shape == (7, 15)
    assert not out.values.any()


def test_advection_traveling_profile_below_taylor_bound_and_shrinks():
    bounds, errs = [], []
    for n in (32, 64, 128):
        g = Grid([Axis("t", 0, 0.5, n), Axis("x", 0, 1, n)])
        t, x = g.coords()
        r = advection_program(g, 1.0).evaluate(FieldTensor(g, np.sin(2 * np.pi * (x - t))))
        h, dt = g.spacing("x"), g.spacing("t")
        k3 = (2 * np.pi) ** 3
        bounds.append(k3 * (h ** 2 + dt ** 2) / 6)
        errs.append(np.max(np.abs(r.values)))
    assert all(e <= b for e, b in zip(errs, bounds))
    assert errs[0] / errs[-1] > 14  # ~16 for O(h^2)


def test_v_zero_on_time_constant_field_is_exactly_zero(rng):
    g = grid_tx()
    f = FieldTensor(g, np.broadcast_to(rng.standard_normal(g.shape[1]), g.shape))
    assert not advection_program(g, 0.0).evaluate(f).values.any()


def test_advection_speed_difference_equals_dx(rng):
    g = grid_tx()
    f = FieldTensor(g, rng.standard_normal(g.shape))
    diff = advection_program(g, 2.0).evaluate(f).values - advection_program(g, 1.0).evaluate(f).values
    dx = apply(build_kernel(g, [("x", 1)]), f).crop({"t": (1, 1)})
    np.testing.assert_allclose(diff, dx.values, rtol=1e-12, atol=1e-12 * np.abs(dx.values).max())


def test_burgers_on_constant_field_is_exactly_zero():
    g = grid_tx()
    f = FieldTensor(g, np.full(g.shape, 1.2345678))
    assert not burgers_program(g, 0.37).evaluate(f).values.any()


def test_burgers_ramp_gives_a_squared_x():
    g = grid_tx(nx=33, xmax=4.0)      # dyadic spacing keeps the arithmetic exact
    t, x = g.coords()
    a = 1.5
    r = burgers_program(g, 0.0).evaluate(FieldTensor(g, a * x))
    xi = x[1:-1, 1:-1]
    assert np.array_equal(r.values, a * a * xi)


def test_burgers_ablation_matches_diffusion_residual(rng):
    g = grid_tx()
    f = FieldTensor(g, rng.standard_normal(g.shape))
    nu = 0.002
    prog = burgers_program(g, nu)
    no_adv = ResidualProgram([prog.terms[0], prog.terms[2]])
    heat = ResidualProgram([Term(1.0, (Factor("u", build_kernel(g, [("t", 1)])),)),
                            Term(-nu, (Factor("u", build_kernel(g, [("x", 2)])),))])
    np.testing.assert_allclose(no_adv.evaluate(f).values, heat.evaluate(f).values, rtol=1e-12, atol=1e-12)
    assert prog.terms[2].coefficient == -0.002


def test_ablation_consistency_all_programs(rng):
    for g, progs in ((grid_tx(), [advection_program(grid_tx(), 0.7), burgers_program(grid_tx(), 0.1)]),
                     (grid_txy(), [wave_program(grid_txy(), 1.0)])):
        f = FieldTensor(g, rng.standard_normal(g.shape))
        for prog in progs:
            full = prog.evaluate(f).values
            parts = sum(sp.evaluate(f).values for sp in prog.single_terms())
            np.testing.assert_allclose(full, parts, rtol=1e-12, atol=1e-12 * np.abs(full).max())


def test_term_linearity_in_coefficient(rng):
    g = grid_tx()
    f = FieldTensor(g, rng.standard_normal(g.shape))
    k = build_kernel(g, [("x", 2)])
    a = linear_program(k).evaluate(f).values
    b = ResidualProgram([Term(3.5, (Factor("u", k),))]).evaluate(f).values
    np.testing.assert_array_equal(b, 3.5 * a)


def test_wave_structure_and_affine_annihilation():
    g = Grid([Axis("t", 0, 1, 9), Axis("x", -1, 1, 9), Axis("y", -1, 1, 9)])
    prog = wave_program(g, 1.0)
    assert len(prog.terms) == 3 and prog.terms[1].coefficient == -1.0
    t, x, y = g.coords()
    r = prog.evaluate(FieldTensor(g, 0.5 + 2.0 * t - 0.75 * x + 0.25 * y))
    assert not r.values.any()


def test_linear_program_with_forcing():
    g = grid_tx()
    prog = linear_program(build_kernel(g, [("x", 2)]), forcing=2.0)
    r = prog.evaluate(FieldTensor(g, np.zeros(g.shape)))
    assert np.all(r.values == -2.0)


def test_missing_field_and_grid_mismatch():
    g = grid_tx()
    c, mx, my = navier_stokes_programs(grid_txy(), 0.1)
    with pytest.raises(ConfigurationError):
        mx.evaluate({"u": FieldTensor(grid_txy(), np.zeros(grid_txy().shape))})
    other = Grid([Axis("t", 0, 1, 9), Axis("x", -1, 2, 9), Axis("y", -1, 1, 9)])
    z = np.zeros(grid_txy().shape)
    with pytest.raises(GridMismatchError):
        c.evaluate({"u": FieldTensor(grid_txy(), z), "v": FieldTensor(other, z)})


def test_navier_stokes_constant_velocity_zero_pressure():
    g = grid_txy()
    one = FieldTensor(g, np.full(g.shape, 0.3))
    fields = {"u": one, "v": FieldTensor(g, np.full(g.shape, -1.1)), "P": FieldTensor(g, np.zeros(g.shape))}
    for prog in navier_stokes_programs(g, 0.01):
        assert not prog.evaluate(fields).values.any()


def test_navier_stokes_reflection_symmetry(rng):
    g = grid_txy()
    a = rng.standard_normal(g.shape)
    u = a
    v = np.swapaxes(a, 1, 2)          # v(x, y) = u(y, x)
    P = rng.standard_normal(g.shape)
    P = P + np.swapaxes(P, 1, 2)
    fields = {n: FieldTensor(g, arr) for n, arr in (("u", u), ("v", v), ("P", P))}
    _, mx, my = navier_stokes_programs(g, 0.05)
    rx = mx.evaluate(fields).values
    ry = my.evaluate(fields).values
    np.testing.assert_allclose(rx, np.swapaxes(ry, 1, 2), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("p", [2, 4])
def test_convergence_on_analytic_solutions(name, p):
    hs, errs = residual_ladder(name, p)
    for j in range(errs.shape[1]):
        col = errs[:, j]
        assert np.all(col <= 1e-12) or fitted_order(hs, col) >= p - 0.3


def test_describe_lists_terms():
    text = burgers_program(grid_tx(), 0.002).describe()
    assert "burgers" in text and "-0.002" in text and text.count("\n") == 3


# ---------------------------------------------------------------------------
# boundary residuals


def test_boundary_constant_along_normal_is_zero(rng):
    g = Grid([Axis("x", 0, 1, 11), Axis("y", 0, 1, 7)])
    f = FieldTensor(g, np.broadcast_to(rng.standard_normal(7), g.shape))
    for side in ("lo", "hi"):
        br = boundary_residual_program(g, ("x", side), p=2)
        out = br.evaluate(f)
        assert out.grid.kinds == ("y",)
        assert not out.values.any()


@pytest.mark.parametrize("p", [1, 2, 3])
def test_boundary_linear_field_gives_unit_gradient(p):
    g = Grid([Axis("x", 0, 1, 11)])
    x = g.axes[0].points
    br = boundary_residual_program(g, ("x", "hi"), p=p)
    r = br.evaluate(FieldTensor(g, x)).values
    assert r.shape == ()
    assert abs(float(r) - 1.0) < 1e-12


def test_boundary_zero_field_and_description():
    g = Grid([Axis("t", 0, 1, 5), Axis("x", 0, 1, 9)])
    br = boundary_residual_program(g, ("x", "lo"), p=2)
    assert not br.evaluate(FieldTensor(g, np.zeros(g.shape))).values.any()
    assert "lo wall" in br.describe()


def test_boundary_quadratic_within_truncation():
    g = Grid([Axis("x", 0, 1, 101)])
    x = g.axes[0].points
    r = float(boundary_residual_program(g, ("x", "hi"), p=2).evaluate(FieldTensor(g, np.exp(x))).values)
    h = g.axes[0].spacing
    assert abs(r - np.e) < np.e * h ** 2
