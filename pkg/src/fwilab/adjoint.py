"""Data misfit and its gradient with respect to the speed map.

The gradient is the exact discrete adjoint of the explicit stepping scheme in
:mod:`fwilab.forward` (differentiate the discretized recursion, not the
continuous PDE), so it matches central finite differences of the misfit to
the precision the forward solve allows.  Writing the recursion as

    u[t] = A u[t-1] + B u[t-2] + E lap(u[t-1]) + s[t]

with A, B, E the elementwise step coefficients and only E depending on the
speed map, the adjoint field obeys the time-reversed recursion

    lam[t] = r[t] + A lam[t+1] + lap(E lam[t+1]) + B lam[t+2]

driven by the residual r[t] = 2 (sim - obs) injected at the receiver nodes,
and the gradient accumulates dE/dc * lap(u[t-1]) * lam[t] over time and
transmissions.  The returned gradient points in the direction of misfit
increase; descent methods step against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import (
    DampingProfile,
    NumericError,
    SourcePulse,
    _check_simulation_inputs,
    _propagate,
    laplacian,
    step_coefficients,
    zero_damping,
)
from .grid import ChannelData, Grid2D, SosMap

__all__ = [
    "GradientMap",
    "data_misfit",
    "compute_gradient",
    "misfit_and_gradient",
    "gradient_mask",
    "fd_gradient_oracle",
]


@dataclass(frozen=True)
class GradientMap:
    """Misfit derivative per cell (misfit units per m/s) on the grid."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"gradient shape {v.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise NumericError("gradient contains non-finite values")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def data_misfit(m_obs: ChannelData, m_sim: ChannelData) -> float:
    """Sum of squared trace differences over all transmissions/receivers/samples."""
    if m_obs.shape != m_sim.shape:
        raise ValueError(f"shape mismatch: {m_obs.shape} vs {m_sim.shape}")
    diff = m_obs.traces - m_sim.traces
    return float(np.sum(diff * diff))


def gradient_mask(
    geometry, damping: DampingProfile, guard_radius: int = 2
) -> np.ndarray:
    """Boolean mask of cells where the gradient is kept.

    Excludes the damping band and a disk of ``guard_radius`` cells around
    every element node, where the point-source/receiver singularities
    dominate the physical sensitivity.
    """
    grid = damping.grid
    mask = damping.values == 0.0
    ix = np.arange(grid.nx)[:, None]
    iz = np.arange(grid.nz)[None, :]
    for node in geometry.element_nodes:
        d2 = (ix - node[0]) ** 2 + (iz - node[1]) ** 2
        mask &= d2 > guard_radius**2
    return mask


def misfit_and_gradient(
    sos: SosMap,
    m_obs: ChannelData,
    pulse: SourcePulse,
    damping: DampingProfile | None = None,
    mask: bool = True,
    guard_radius: int = 2,
) -> tuple[float, GradientMap]:
    """Misfit value and its adjoint-state gradient in one forward pass."""
    geometry = m_obs.geometry
    damping = damping if damping is not None else zero_damping(sos.grid)
    _check_simulation_inputs(sos, geometry, pulse, damping)
    grid = sos.grid

    tx = geometry.element_nodes
    rx = geometry.element_nodes[geometry.rx_pattern]  # (P, R, 2)
    traces, fields = _propagate(
        sos.values, damping.values, grid, pulse.samples, tx, rx, store_fields=True
    )
    resid = 2.0 * (traces - m_obs.traces)  # (P, R, nt)
    misfit = float(np.sum((traces - m_obs.traces) ** 2))

    a, b, e = step_coefficients(sos.values, damping.values, grid.dt)
    de_dc = 2.0 * sos.values * grid.dt**2 / (1.0 + damping.values * grid.dt)

    n_p = tx.shape[0]
    pp = np.arange(n_p)[:, None]
    lam1 = np.zeros((n_p, grid.nx, grid.nz))  # lam[t+1]
    lam2 = np.zeros_like(lam1)  # lam[t+2]
    grad = np.zeros(grid.shape)

    for t in range(grid.nt - 1, -1, -1):
        lam = a * lam1 + laplacian(e * lam1, grid.dx) + b * lam2
        np.add.at(lam, (pp, rx[:, :, 0], rx[:, :, 1]), resid[:, :, t])
        if t >= 1:
            lap_u = laplacian(fields[:, t - 1], grid.dx)
            grad += de_dc * np.einsum("pij,pij->ij", lap_u, lam)
        lam2, lam1 = lam1, lam

    if not np.all(np.isfinite(grad)):
        bad = np.argwhere(~np.isfinite(grad))
        raise NumericError(f"gradient blow-up near cell {tuple(bad[0])}")
    if mask:
        grad = np.where(gradient_mask(geometry, damping, guard_radius), grad, 0.0)
    return misfit, GradientMap(grid, grad)


def compute_gradient(
    sos: SosMap,
    m_obs: ChannelData,
    pulse: SourcePulse,
    damping: DampingProfile | None = None,
    mask: bool = True,
    guard_radius: int = 2,
) -> GradientMap:
    """Adjoint-state gradient of :func:`data_misfit` with respect to ``sos``."""
    _, grad = misfit_and_gradient(sos, m_obs, pulse, damping, mask, guard_radius)
    return grad


def fd_gradient_oracle(
    sos: SosMap,
    m_obs: ChannelData,
    pulse: SourcePulse,
    cells: list[tuple[int, int]],
    eps: float,
    damping: DampingProfile | None = None,
) -> np.ndarray:
    """Central-difference misfit derivatives at selected cells.

    Costs two full forward solves per cell; intended for small grids as an
    independent check of :func:`compute_gradient`.
    """
    from .forward import simulate_all

    if eps <= 0:
        raise ValueError("eps must be positive")
    geometry = m_obs.geometry
    out = np.empty(len(cells))
    base = np.array(sos.values)
    for i, (ix, iz) in enumerate(cells):
        plus = np.array(base)
        plus[ix, iz] += eps
        minus = np.array(base)
        minus[ix, iz] -= eps
        j_plus = data_misfit(
            m_obs, simulate_all(sos.with_values(plus), geometry, pulse, damping)
        )
        j_minus = data_misfit(
            m_obs, simulate_all(sos.with_values(minus), geometry, pulse, damping)
        )
        out[i] = (j_plus - j_minus) / (2.0 * eps)
    return out
