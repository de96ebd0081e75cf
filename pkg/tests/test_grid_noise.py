import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdelab.errors import ConfigurationError, NumericError
from spdelab.grid import (
    NoiseSheet,
    SeedSpec,
    brownian_sheet,
    cell_normals,
    dump_noise,
    load_noise,
    make_grid,
    sample_noise_batch,
    sample_rows,
    sample_white_noise,
    tilt_noise,
)


@pytest.mark.parametrize("args, dt, dx", [((1.0, 1.0, 10, 10), 0.1, 0.1),
                                          ((0.5, 2.0, 5, 8), 0.1, 0.25)])
def test_grid_steps(args, dt, dx):
    g = make_grid(*args)
    assert g.dt == pytest.approx(dt, rel=1e-15)
    assert g.dx == pytest.approx(dx, rel=1e-15)
    assert g.nt * g.dt == pytest.approx(g.T, rel=1e-15)
    assert g.times[-1] == pytest.approx(g.T)
    assert g.nodes[-1] == pytest.approx(g.D)


@pytest.mark.parametrize("args", [(1.0, 1.0, 0, 10), (1.0, 1.0, 10, 1), (0.0, 1.0, 4, 4),
                                  (1.0, -1.0, 4, 4), (1.0, 1.0, 2.5, 4), (np.inf, 1.0, 4, 4)])
def test_grid_rejects_degenerate(args):
    with pytest.raises(ConfigurationError):
        make_grid(*args)


def test_increment_variance_over_a_million_draws():
    g = make_grid(1.0, 1.0, 100, 100)
    inc = sample_noise_batch(g, 5, range(100))
    assert inc.size == 10**6
    assert abs(inc.var() / 1e-4 - 1) < 0.05
    assert abs(inc.mean()) < 4 * 1e-2 / 1e3


def test_same_seed_is_bitwise_identical():
    g = make_grid(1.0, 1.0, 16, 8)
    a = sample_white_noise(g, SeedSpec(3, 7)).increments
    b = sample_white_noise(g, SeedSpec(3, 7)).increments
    assert a.tobytes() == b.tobytes()
    c = sample_white_noise(g, SeedSpec(3, 8)).increments
    assert not np.array_equal(a, c)


def test_distinct_cells_uncorrelated():
    g = make_grid(1.0, 1.0, 4, 4)
    n = 20000
    inc = sample_noise_batch(g, 1, range(n)).reshape(n, -1)
    c = np.corrcoef(inc[:, 3], inc[:, 10])[0, 1]
    assert abs(c) < 3 / np.sqrt(n)


@settings(max_examples=25, deadline=None)
@given(start=st.integers(0, 500), count=st.integers(0, 40))
def test_counter_access_is_order_free(start, count):
    seed = SeedSpec(11, 2)
    full = cell_normals(seed, 0, 600)
    assert np.array_equal(cell_normals(seed, start, count), full[start:start + count])


def test_rows_regenerate_independently():
    g = make_grid(1.0, 1.0, 12, 6)
    seed = SeedSpec(4, 1)
    full = sample_white_noise(g, seed).increments
    assert np.array_equal(sample_rows(g, seed, 5, 9), full[5:9])


def test_sheet_is_read_only_and_shape_checked():
    g = make_grid(1.0, 1.0, 4, 4)
    s = sample_white_noise(g, SeedSpec(0))
    with pytest.raises(ValueError):
        s.increments[0, 0] = 1.0
    with pytest.raises(ConfigurationError):
        NoiseSheet(np.zeros((3, 4)), g)


def test_zero_increments_give_zero_sheet():
    g = make_grid(1.0, 1.0, 5, 3)
    W = brownian_sheet(NoiseSheet(np.zeros(g.shape), g))
    assert W.shape == (6, 4) and not W.any()


def test_sheet_vanishes_on_axes_and_sums_cells():
    g = make_grid(1.0, 1.0, 5, 3)
    s = sample_white_noise(g, SeedSpec(9))
    W = brownian_sheet(s)
    assert not W[0].any() and not W[:, 0].any()
    assert W[3, 2] == pytest.approx(s.increments[:3, :2].sum(), abs=1e-15)


def test_sheet_covariance_matches_min_product():
    g = make_grid(1.0, 1.0, 8, 4)
    n = 10000
    inc = sample_noise_batch(g, 21, range(n))
    W_end = inc.sum(axis=(1, 2))
    W_half = inc[:, :4].sum(axis=(1, 2))
    W_corner = inc[:, :4, :2].sum(axis=(1, 2))
    assert abs(W_end.var() - 1.0) < 0.05
    cov = np.mean(W_end * W_half)
    # Var of the product estimator is bounded by E[W^2 W'^2] <= 3 * 1 * 0.5
    assert abs(cov - 0.5) < 4 * np.sqrt(1.5 / n)
    assert abs(np.mean(W_half * W_corner) - 0.25) < 4 * np.sqrt(0.75 / n)


def test_refined_blocks_match_coarse_law():
    fine = make_grid(1.0, 1.0, 16, 16)
    inc = sample_noise_batch(fine, 3, range(400))
    assert abs(inc.var() / (fine.dt * fine.dx) - 1) < 0.03
    blocks = inc.reshape(400, 8, 2, 8, 2).sum(axis=(2, 4))
    coarse = make_grid(1.0, 1.0, 8, 8)
    assert abs(blocks.var() / (coarse.dt * coarse.dx) - 1) < 0.05


def test_tilt_identities():
    g = make_grid(2.0, 0.5, 10, 5)
    s = sample_white_noise(g, SeedSpec(1))
    assert np.array_equal(tilt_noise(s, 0.0).increments, s.increments)
    c = 1.7
    tilted = tilt_noise(s, c)
    assert brownian_sheet(tilted)[-1, -1] == pytest.approx(
        brownian_sheet(s)[-1, -1] - c * g.T * g.D, abs=1e-12)
    X = np.random.default_rng(0).normal(size=g.shape)
    back = tilt_noise(tilt_noise(s, X), -X)
    np.testing.assert_allclose(back.increments, s.increments, rtol=0, atol=1e-15)


def test_tilt_rejects_non_finite_drift_naming_cell():
    g = make_grid(1.0, 1.0, 4, 4)
    X = np.zeros(g.shape)
    X[2, 3] = np.nan
    with pytest.raises(NumericError, match=r"i=2, j=3"):
        tilt_noise(sample_white_noise(g, SeedSpec(0)), X)


def test_binary_dump_round_trip(tmp_path):
    g = make_grid(0.5, 2.0, 6, 4)
    s = sample_white_noise(g, SeedSpec(12345, 0))
    p = tmp_path / "noise.bin"
    dump_noise(s, p)
    raw = p.read_bytes()
    assert raw[:8] == b"SPDLNOIS"
    assert len(raw) == 8 + 8 * 5 + 8 * g.nt * g.nx
    back = load_noise(p)
    assert back.grid == g and back.seed.master == 12345
    assert back.increments.tobytes() == s.increments.astype("<f8").tobytes()


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"nope")
    with pytest.raises(ConfigurationError):
        load_noise(p)
