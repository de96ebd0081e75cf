import json

import numpy as np
import pytest
from scipy.special import ive

from conftest import make_table
from oracles import dirichlet_g_alpha, dirichlet_g_total, dirichlet_kernel_series, \
    power_integral_bound
from spdelab.errors import AssumptionViolation, DomainError, NumericError
from spdelab.grid import make_grid
from spdelab.kernel import (
    Boundary,
    OperatorSpec,
    build_generator,
    export_kernel,
    g_const_alpha,
    g_total,
    h_function,
    h_power_integral,
    initial_convolution,
    kernel_table,
)


def test_periodic_stencil_is_circulant():
    g = make_grid(1.0, 1.0, 4, 4)
    A = build_generator(OperatorSpec(boundary="periodic"), g)
    row = 0.5 * np.array([-2.0, 1.0, 0.0, 1.0]) / g.dx**2
    for j in range(4):
        np.testing.assert_allclose(A[j], np.roll(row, j), rtol=1e-14)


@pytest.mark.parametrize("boundary", ["neumann", "periodic"])
def test_conservative_row_sums(boundary):
    g = make_grid(1.0, 1.0, 4, 16)
    op = OperatorSpec(lambda x: 1 + 0.3 * np.sin(2 * np.pi * x), lambda x: 0.4 * x, boundary)
    A = build_generator(op, g)
    assert np.abs(A.sum(axis=1)).max() < 1e-10 * np.abs(A).max()


def test_dirichlet_principal_eigenvalue():
    g = make_grid(1.0, 1.0, 4, 64)
    lam = np.linalg.eigvalsh(build_generator(OperatorSpec(), g))
    assert abs(lam.max() / (-np.pi**2 / 2) - 1) < 1e-2


def test_nonpositive_diffusion_rejected():
    g = make_grid(1.0, 1.0, 4, 8)
    with pytest.raises(AssumptionViolation, match="a\\["):
        build_generator(OperatorSpec(a=lambda x: x - 0.5), g)


def test_zero_time_slice_is_discrete_delta(dirichlet_64):
    g = dirichlet_64.grid
    np.testing.assert_array_equal(dirichlet_64.G[0], np.eye(g.nx) / g.dx)


def test_neumann_mass_conservation():
    t = make_table(nt=20, nx=32, boundary="neumann")
    mass = t.G.sum(axis=2) * t.grid.dx
    assert np.abs(mass - 1).max() < 1e-8


def test_dirichlet_mass_at_most_one(dirichlet_64):
    assert (dirichlet_64.G.sum(axis=2) * dirichlet_64.grid.dx).max() <= 1 + 1e-12


def _series_error(nx, norm):
    t = make_table(T=0.2, nt=2, nx=nx)
    c = t.grid.centers
    ref = dirichlet_kernel_series(0.1, c, c, modes=600)
    if norm == "l2":
        return np.linalg.norm(t.G[1] - ref) / np.linalg.norm(ref)
    return np.abs(t.G[1] - ref).max() / ref.max()


def test_dirichlet_kernel_matches_sine_series():
    # relative L2 error over the cell-centre lattice at t = 0.1
    assert _series_error(128, "l2") < 1e-4


def test_dirichlet_kernel_second_order():
    ratio = _series_error(64, "max") / _series_error(128, "max")
    assert 3.8 < ratio < 4.2


def test_chapman_kolmogorov(dirichlet_64):
    G, dx = dirichlet_64.G, dirichlet_64.grid.dx
    for i, j in [(1, 1), (3, 5), (10, 20)]:
        diff = np.abs(G[i + j] - G[i] @ G[j] * dx).max()
        assert diff < 1e-6 * G[i + j].max()


def test_dirichlet_below_neumann():
    d = make_table(nt=16, nx=32, boundary="dirichlet")
    n = make_table(nt=16, nx=32, boundary="neumann")
    assert (d.G - n.G).max() <= 1e-10 * n.G.max()


def test_h_below_whole_line(dirichlet_64):
    H = h_function(dirichlet_64)[1:]
    grid = dirichlet_64.grid
    t = grid.times[1:]
    assert np.all(H >= 0)
    # discrete comparison: infinite-lattice kernel, sum_k G^2 dx = e^{-z} I_0(z) / dx
    z = 2 * t / grid.dx**2
    assert np.all(H <= ive(0, z) / grid.dx * (1 + 1e-12))
    # the lattice exceeds the continuum 1/(2 sqrt(pi t)) only by its O(dx^2/t) correction
    cont = 1 / (2 * np.sqrt(np.pi * t))
    assert np.all(H <= cont * (1 + 1 / (8 * z) + 1 / z**2))
    assert np.all(H[t > 0.1] <= cont[t > 0.1])


def test_periodic_h_flattens_to_uniform():
    t = make_table(T=5.0, D=2.0, nt=10, nx=32, boundary="periodic")
    assert h_function(t)[-1] == pytest.approx(1 / 2.0, rel=1e-9)


def test_g_total_against_series_and_bound():
    t = make_table(nt=8, nx=64)
    ref = dirichlet_g_total()
    assert g_total(t) <= (1 / np.sqrt(np.pi)) * 1.001
    assert abs(g_total(t) / ref - 1) < 1e-3


def test_g_total_grid_convergence():
    a = make_table(nt=8, nx=32).g_total
    b = make_table(nt=8, nx=64).g_total
    assert abs(b / a - 1) < 0.01


def test_g_total_monotone_in_horizon():
    vals = [make_table(T=T, nt=8, nx=32).g_total for T in (0.01, 0.1, 0.5, 1.0)]
    assert np.all(np.diff(vals) > 0)
    assert vals[0] < 0.1


def test_g_alpha_continuous_at_one(dirichlet_64):
    base = h_power_integral(dirichlet_64, 1.0)
    assert abs(g_const_alpha(dirichlet_64, 1.0 + 1e-4) / base - 1) < 1e-3


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_g_alpha_matches_series_oracle(dirichlet_64, alpha):
    val = g_const_alpha(dirichlet_64, alpha)
    assert np.isfinite(val)
    assert val <= power_integral_bound(alpha)
    assert abs(val / dirichlet_g_alpha(alpha) - 1) < 5e-3


@pytest.mark.parametrize("alpha", [1.0, 2.0, 0.5, 2.5])
def test_g_alpha_domain(dirichlet_64, alpha):
    with pytest.raises(DomainError):
        g_const_alpha(dirichlet_64, alpha)


def test_g_alpha_nondecreasing_in_horizon():
    short = make_table(T=0.25, nt=8, nx=32)
    long = make_table(T=1.0, nt=8, nx=32)
    for alpha in (1.2, 1.8):
        assert g_const_alpha(short, alpha) <= g_const_alpha(long, alpha)


@pytest.mark.parametrize("boundary", ["neumann", "periodic"])
def test_functionals_finite_other_boundaries(boundary):
    t = make_table(nt=8, nx=32, boundary=boundary)
    assert np.isfinite(t.g_total)
    for alpha in (1.2, 1.5, 1.8):
        assert np.isfinite(g_const_alpha(t, alpha))


def test_variable_coefficients_use_nonsymmetric_path():
    t = make_table(nt=8, nx=32, boundary="neumann", a=lambda x: 1 + 0.2 * np.cos(np.pi * x),
                   b=lambda x: 0.5 * np.sin(np.pi * x))
    assert t.method in ("eig", "expm")
    assert np.abs(t.G.sum(axis=2) * t.grid.dx - 1).max() < 1e-8


def test_negativity_beyond_tolerance_is_an_error():
    # strong central-differenced drift on a coarse grid makes the stencil non-monotone
    with pytest.raises(NumericError, match="negativity"):
        make_table(nt=4, nx=8, b=200.0)
    t = make_table(nt=4, nx=8, b=200.0, scheme="upwind")
    assert t.G.min() >= 0


def test_permutation_of_cells_leaves_functionals_unchanged(dirichlet_64):
    G = dirichlet_64.G[5]
    p = np.random.default_rng(1).permutation(G.shape[1])
    H = np.max(np.sum(G**2, axis=1))
    assert np.max(np.sum(G[:, p] ** 2, axis=1)) == pytest.approx(H, rel=1e-14)


def test_initial_convolution_cases(dirichlet_64):
    assert not initial_convolution(dirichlet_64, 0.0).any()
    n = make_table(nt=16, nx=32, boundary="neumann")
    np.testing.assert_allclose(initial_convolution(n, 1.0), 1.0, atol=1e-8)


def test_initial_convolution_sine_mode():
    g = make_grid(0.25, 1.0, 10, 128)
    op = OperatorSpec()
    t = kernel_table(build_generator(op, g), g, op)
    I = initial_convolution(t, lambda x: np.sin(np.pi * x))
    ref = np.exp(-np.pi**2 * g.times[:, None] / 2) * np.sin(np.pi * g.centers)[None, :]
    assert np.abs(I - ref).max() / np.abs(ref).max() < 1e-3


def test_export(tmp_path, dirichlet_64):
    small = make_table(nt=3, nx=4)
    export_kernel(small, tmp_path / "k.csv", tmp_path / "k.json", a_spec=1.0, b_spec=0.0)
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,G" and len(lines) == 1 + 4 * 4 * 4
    side = json.loads((tmp_path / "k.json").read_text())
    assert side["boundary"] == "dirichlet" and side["nx"] == 4
    assert side["g_total"] == pytest.approx(small.g_total)
    assert set(side["g_alpha"]) == {"1.2", "1.5", "1.8"}
