"""Spatial/temporal discretization, ring-array geometry, and shared containers.

Everything downstream (solver, gradients, training) works on the types defined
here: a uniform 2-D grid, a speed-of-sound raster on that grid, the circular
transducer layout with its per-transmission receiver subsets, and the recorded
channel-data block.  All containers are immutable after construction and safe
to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "Grid2D",
    "SosMap",
    "AcquisitionGeometry",
    "ChannelData",
    "CflCheck",
    "build_geometry",
    "check_cfl",
]

#: Upper bound on physically plausible speed of sound values (m/s).
SOS_LIMIT = 10_000.0


class GeometryError(ValueError):
    """Raised when a transducer layout does not fit the grid."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Grid2D:
    """Uniform 2-D grid with isotropic spacing and a fixed time axis.

    Parameters
    ----------
    nx, nz : int
        Grid points along x and z (each >= 3).
    dx : float
        Spacing in meters, shared by both axes.
    dt : float
        Time step in seconds.
    nt : int
        Number of time samples (>= 3).
    """

    nx: int
    nz: int
    dx: float
    dt: float
    nt: int

    def __post_init__(self):
        if self.nx < 3 or self.nz < 3:
            raise ValueError(f"grid must be at least 3x3, got {self.nx}x{self.nz}")
        if self.nt < 3:
            raise ValueError(f"need nt >= 3 time samples, got {self.nt}")
        if not (self.dx > 0 and math.isfinite(self.dx)):
            raise ValueError(f"dx must be positive and finite, got {self.dx}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nz)

    @property
    def extent(self) -> tuple[float, float]:
        """Physical size (x, z) in meters, node-center to node-center."""
        return ((self.nx - 1) * self.dx, (self.nz - 1) * self.dx)

    def times(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt


@dataclass(frozen=True)
class SosMap:
    """Speed-of-sound raster (m/s) on a :class:`Grid2D`; the inversion unknown."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("speed map contains non-finite values")
        if v.min() <= 0.0 or v.max() >= SOS_LIMIT:
            raise ValueError(
                f"speed values must lie in (0, {SOS_LIMIT}) m/s, "
                f"got range [{v.min()}, {v.max()}]"
            )
        object.__setattr__(self, "values", _freeze(v))

    @property
    def c_max(self) -> float:
        return float(self.values.max())

    def with_values(self, values: np.ndarray) -> "SosMap":
        return SosMap(self.grid, values)


def homogeneous_map(grid: Grid2D, c: float) -> SosMap:
    """Uniform speed map, e.g. a water background."""
    return SosMap(grid, np.full(grid.shape, float(c)))


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Ring-array layout: element nodes plus per-transmission receiver subsets.

    ``element_nodes[p]`` is the (ix, iz) grid node of element ``p``;
    ``rx_pattern[p]`` lists the ``n_r`` element indices that record
    transmission ``p``.
    """

    grid: Grid2D
    element_nodes: np.ndarray  # (n_p, 2) int
    rx_pattern: np.ndarray  # (n_p, n_r) int
    diameter: float

    def __post_init__(self):
        nodes = np.asarray(self.element_nodes, dtype=np.int64)
        rx = np.asarray(self.rx_pattern, dtype=np.int64)
        n_p = nodes.shape[0]
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("element_nodes must have shape (n_p, 2)")
        if rx.ndim != 2 or rx.shape[0] != n_p:
            raise ValueError("rx_pattern must have shape (n_p, n_r)")
        if rx.min(initial=0) < 0 or rx.max(initial=0) >= n_p:
            raise ValueError("receiver indices must lie in [0, n_p)")
        inside_x = (nodes[:, 0] >= 1) & (nodes[:, 0] < self.grid.nx - 1)
        inside_z = (nodes[:, 1] >= 1) & (nodes[:, 1] < self.grid.nz - 1)
        if not np.all(inside_x & inside_z):
            raise GeometryError("element nodes must lie strictly inside the grid")
        object.__setattr__(self, "element_nodes", _freeze(nodes))
        object.__setattr__(self, "rx_pattern", _freeze(rx))

    @property
    def n_p(self) -> int:
        return int(self.element_nodes.shape[0])

    @property
    def n_r(self) -> int:
        return int(self.rx_pattern.shape[1])

    def element_positions(self) -> np.ndarray:
        """Physical (x, z) coordinates of the snapped element nodes, meters."""
        return self.element_nodes.astype(np.float64) * self.grid.dx


@dataclass(frozen=True)
class ChannelData:
    """Receiver pressure traces, shape (n_p, n_r, nt), arbitrary linear units."""

    traces: np.ndarray
    geometry: AcquisitionGeometry
    dt: float

    def __post_init__(self):
        t = np.asarray(self.traces, dtype=np.float64)
        expected = (self.geometry.n_p, self.geometry.n_r, self.geometry.grid.nt)
        if t.shape != expected:
            raise ValueError(f"traces shape {t.shape} != expected {expected}")
        if not np.all(np.isfinite(t)):
            raise ValueError("channel data contains non-finite samples")
        object.__setattr__(self, "traces", _freeze(t))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.traces.shape


def build_geometry(
    n_p: int, diameter: float, n_r: int, grid: Grid2D
) -> AcquisitionGeometry:
    """Place ``n_p`` elements evenly on a ring and derive receiver subsets.

    Element ``p`` sits at angle ``2*pi*p/n_p`` on a ring of the given diameter
    centered in the grid, snapped to the nearest node.  Each transmission is
    received by the window of ``n_r`` elements centered on the element
    opposite the transmitter; ``n_r`` must be odd (or 1) so the window is
    symmetric.

    Raises
    ------
    GeometryError
        If the ring does not fit inside the grid interior.
    ValueError
        If ``n_r`` is even and greater than one, or out of range.
    """
    if n_p < 2:
        raise ValueError(f"need at least 2 elements, got {n_p}")
    if n_r < 1 or n_r > n_p:
        raise ValueError(f"n_r must lie in [1, n_p={n_p}], got {n_r}")
    if n_r % 2 == 0 and n_r > 1:
        raise ValueError(f"even receiver windows are asymmetric; n_r={n_r} unsupported")

    cx = (grid.nx - 1) / 2.0
    cz = (grid.nz - 1) / 2.0
    r_cells = (diameter / 2.0) / grid.dx
    angles = 2.0 * np.pi * np.arange(n_p) / n_p
    ix = np.rint(cx + r_cells * np.cos(angles)).astype(np.int64)
    iz = np.rint(cz + r_cells * np.sin(angles)).astype(np.int64)
    if (
        ix.min() < 1
        or iz.min() < 1
        or ix.max() > grid.nx - 2
        or iz.max() > grid.nz - 2
    ):
        raise GeometryError(
            f"ring of diameter {diameter} m exceeds the interior of a "
            f"{grid.nx}x{grid.nz} grid with dx={grid.dx}"
        )
    nodes = np.stack([ix, iz], axis=1)

    half = (n_r - 1) // 2
    offsets = np.arange(-half, half + 1)
    base = (np.arange(n_p) + n_p // 2)[:, None]
    rx = (base + offsets[None, :]) % n_p

    return AcquisitionGeometry(grid, nodes, rx, float(diameter))


class CflCheck(NamedTuple):
    ok: bool
    ratio: float


def check_cfl(grid: Grid2D, c_max: float) -> CflCheck:
    """Stability predicate for the explicit 2-D scheme.

    Passes iff ``dt <= dx / (c_max * sqrt(2))``; the returned ratio
    ``dt * c_max * sqrt(2) / dx`` equals 1 at the stability limit.
    """
    if c_max <= 0:
        raise ValueError(f"c_max must be positive, got {c_max}")
    ratio = grid.dt * c_max * math.sqrt(2.0) / grid.dx
    return CflCheck(ok=ratio <= 1.0, ratio=ratio)
