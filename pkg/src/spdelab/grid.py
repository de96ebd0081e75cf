"""Space-time grid and reproducible space-time white noise.

The domain [0, T] x [0, D] is split into ``nt`` time steps and ``nx`` space
cells.  White noise is represented by one Gaussian increment per space-time
cell, ``dW[i, j] ~ N(0, dt*dx)``, i.e. the Brownian-sheet mass of the cell
``[t_i, t_{i+1}] x [x_j, x_{j+1}]``.

Random numbers come from a counter-based generator (Philox 4x64).  The key is
``(master seed, replica)`` and the counter is the cell's linear index
``i*nx + j``, so any row block of any replica can be regenerated on its own,
in any order, and produces the same bits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, NumericError

_U64 = (1 << 64) - 1
_DUMP_MAGIC = b"SPDLNOIS"
_DUMP_HEADER = struct.Struct("<8sQQddQ")


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, T] x [0, D]."""

    T: float
    D: float
    nt: int
    nx: int

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def dx(self) -> float:
        return self.D / self.nx

    @property
    def times(self) -> np.ndarray:
        """Time nodes t_i = i*dt, i = 0..nt."""
        return np.arange(self.nt + 1) * self.dt

    @property
    def nodes(self) -> np.ndarray:
        """Space nodes (cell faces) x_j = j*dx, j = 0..nx."""
        return np.arange(self.nx + 1) * self.dx

    @property
    def centers(self) -> np.ndarray:
        """Cell midpoints, where the solver stores field values."""
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt, self.nx)


def make_grid(T: float, D: float, nt: int, nx: int) -> Grid:
    """Validate dimensions and build a :class:`Grid`.

    Raises:
        ConfigurationError: if T or D is not positive or a step count is < 2.
    """
    if not (np.isfinite(T) and T > 0):
        raise ConfigurationError(f"T must be a positive finite number, got {T!r}")
    if not (np.isfinite(D) and D > 0):
        raise ConfigurationError(f"D must be a positive finite number, got {D!r}")
    for name, n in (("nt", nt), ("nx", nx)):
        if isinstance(n, bool) or int(n) != n:
            raise ConfigurationError(f"{name} must be an integer, got {n!r}")
        if n < 2:
            raise ConfigurationError(f"{name} must be >= 2, got {n}")
    return Grid(float(T), float(D), int(nt), int(nx))


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one replica's noise stream: Philox key (master, replica)."""

    master: int
    replica: int = 0

    def key(self) -> np.ndarray:
        return np.array([self.master & _U64, self.replica & _U64], dtype=np.uint64)


def cell_normals(seed: SeedSpec, start: int, count: int) -> np.ndarray:
    """Standard normals for linear cell indices ``start .. start+count-1``.

    Each cell consumes exactly one 64-bit Philox output, mapped through the
    inverse normal CDF, so the value of a cell depends only on (key, index).
    """
    if start < 0 or count < 0:
        raise ConfigurationError("cell range must be nonnegative")
    block, offset = divmod(start, 4)
    gen = np.random.Philox(key=seed.key(), counter=block)
    raw = gen.random_raw(offset + count)[offset:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True, eq=False)
class NoiseSheet:
    """Cell increments of the Brownian sheet, shape (nt, nx), row-major in time."""

    increments: np.ndarray
    grid: Grid
    seed: SeedSpec | None = field(default=None)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.shape != self.grid.shape:
            raise ConfigurationError(
                f"noise shape {inc.shape} does not match grid {self.grid.shape}"
            )
        inc = inc.copy() if inc.flags.writeable else inc
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)


def sample_rows(grid: Grid, seed: SeedSpec, start_row: int, stop_row: int) -> np.ndarray:
    """Regenerate rows ``start_row:stop_row`` of a replica's increments."""
    if not 0 <= start_row <= stop_row <= grid.nt:
        raise ConfigurationError(f"row range [{start_row}, {stop_row}) outside 0..{grid.nt}")
    z = cell_normals(seed, start_row * grid.nx, (stop_row - start_row) * grid.nx)
    return z.reshape(stop_row - start_row, grid.nx) * np.sqrt(grid.dt * grid.dx)


def sample_white_noise(grid: Grid, seed: SeedSpec) -> NoiseSheet:
    """Sample one replica's sheet; bit-identical for identical ``seed``."""
    return NoiseSheet(sample_rows(grid, seed, 0, grid.nt), grid, seed)


def sample_noise_batch(grid: Grid, master: int, replicas) -> np.ndarray:
    """Stack the increments of several replicas into shape (R, nt, nx)."""
    replicas = list(replicas)
    out = np.empty((len(replicas), grid.nt, grid.nx))
    for r, rep in enumerate(replicas):
        out[r] = sample_rows(grid, SeedSpec(master, rep), 0, grid.nt)
    return out


def brownian_sheet(noise: NoiseSheet) -> np.ndarray:
    """Cumulative sheet W(t_i, x_j) on the (nt+1, nx+1) node lattice.

    W vanishes on the axes and W[i, j] sums increments of all cells below
    and to the left of (t_i, x_j).
    """
    inc = noise.increments
    W = np.zeros((inc.shape[0] + 1, inc.shape[1] + 1))
    W[1:, 1:] = np.cumsum(np.cumsum(inc, axis=0), axis=1)
    return W


def tilt_noise(noise: NoiseSheet, drift_values, grid: Grid | None = None) -> NoiseSheet:
    """Subtract the drift mass ``X*dt*dx`` from every cell increment.

    Args:
        noise: untilted sheet.
        drift_values: array of shape (nt, nx), or a scalar for a constant drift.
        grid: defaults to ``noise.grid``.

    Raises:
        NumericError: a drift value is not finite (message names the cell).
    """
    grid = grid or noise.grid
    X = np.broadcast_to(np.asarray(drift_values, dtype=np.float64), grid.shape)
    bad = ~np.isfinite(X)
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        raise NumericError(f"non-finite drift value at cell (i={i}, j={j})")
    return NoiseSheet(noise.increments - X * (grid.dt * grid.dx), grid, noise.seed)


def dump_noise(noise: NoiseSheet, path) -> None:
    """Write a little-endian binary dump: header then float64 increments."""
    g = noise.grid
    master = noise.seed.master & _U64 if noise.seed is not None else 0
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(_DUMP_MAGIC, g.nt, g.nx, g.T, g.D, master))
        fh.write(np.ascontiguousarray(noise.increments, dtype="<f8").tobytes())


def load_noise(path, replica: int = 0) -> NoiseSheet:
    """Read a dump produced by :func:`dump_noise`."""
    with open(path, "rb") as fh:
        head = fh.read(_DUMP_HEADER.size)
        if len(head) != _DUMP_HEADER.size:
            raise ConfigurationError(f"{path}: truncated header")
        magic, nt, nx, T, D, master = _DUMP_HEADER.unpack(head)
        if magic != _DUMP_MAGIC:
            raise ConfigurationError(f"{path}: not a noise dump")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != nt * nx:
        raise ConfigurationError(f"{path}: expected {nt * nx} values, found {data.size}")
    grid = Grid(T, D, nt, nx)
    return NoiseSheet(data.reshape(nt, nx).astype(np.float64), grid, SeedSpec(master, replica))
