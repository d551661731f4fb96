"""Time-domain acoustic propagation on a 2-D grid with absorbing boundaries.

The scheme advances the pressure field with the explicit second-order update

    U[t] = (2 - D^2 dt^2)/(1 + D dt) * U[t-1]
         + (D dt - 1)/(1 + D dt)    * U[t-2]
         + c^2 dt^2/(1 + D dt)      * lap(U[t-1])
         + S[t]

where ``lap`` is the 5-point Laplacian with implicit-zero boundaries and D is
the damping profile (zero in the interior, ramping up inside the absorbing
band).  The update is linear in the source, so scaling the pulse scales every
trace; sources are injected additively at a single node and receivers sample
the field at single nodes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import (
    AcquisitionGeometry,
    ChannelData,
    GeometryError,
    Grid2D,
    SosMap,
    check_cfl,
)

__all__ = [
    "DampingProfile",
    "SourcePulse",
    "Wavefield",
    "build_pml",
    "make_source_pulse",
    "laplacian",
    "step_wavefield",
    "simulate_wavefield",
    "simulate_transmission",
    "simulate_all",
]

#: Reference speed used to calibrate the damping amplitude (m/s, water).
PML_REFERENCE_SPEED = 1500.0


class NumericError(ValueError):
    """Non-finite values encountered in a solver input or state."""


@dataclass(frozen=True)
class DampingProfile:
    """Damping coefficients (1/s): zero in the interior, >= 0 in the band."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"damping shape {v.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0:
            raise ValueError("damping must be finite and non-negative")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def interior_mask(self) -> np.ndarray:
        """True where damping is exactly zero (the undamped interior)."""
        return self.values == 0.0


def zero_damping(grid: Grid2D) -> DampingProfile:
    return DampingProfile(grid, np.zeros(grid.shape))


def build_pml(
    grid: Grid2D,
    thickness: int,
    target_attenuation: float = 1e-3,
    exponent: float = 2.0,
) -> DampingProfile:
    """Polynomial absorbing band of ``thickness`` cells on every boundary.

    Within the band the coefficient follows
    ``D(d) = D_max * ((thickness - d)/thickness)**exponent`` with ``d`` the
    cell distance from the outer edge, and corner cells take the maximum of
    the two axis profiles.  ``D_max`` is set so that the round trip through
    the band attenuates amplitude to ``target_attenuation`` at the reference
    speed:

        D_max = -ln(a) * c_ref * (exponent + 1) / (2 * thickness * dx)

    which follows from integrating exp(-D(x)/c) one way through the ramp and
    squaring for the return pass.
    """
    if thickness < 0:
        raise ValueError("thickness must be non-negative")
    if thickness == 0:
        return zero_damping(grid)
    if 2 * thickness >= min(grid.nx, grid.nz):
        raise GeometryError(
            f"PML of {thickness} cells does not leave an interior on a "
            f"{grid.nx}x{grid.nz} grid"
        )
    if not (0.0 < target_attenuation < 1.0):
        raise ValueError("target_attenuation must lie in (0, 1)")

    d_max = (
        -math.log(target_attenuation)
        * PML_REFERENCE_SPEED
        * (exponent + 1.0)
        / (2.0 * thickness * grid.dx)
    )
    # Von Neumann bound for the damped update: D*dt < 2*sqrt(1 - r^2) with r
    # the CFL ratio, so D*dt >= 2 is unstable for every r.  Thin bands on
    # coarse grids get there quickly because d_max ~ 1/(thickness*dx).
    if d_max * grid.dt >= 2.0:
        warnings.warn(
            f"peak damping D*dt = {d_max * grid.dt:.2f} >= 2 destabilizes the "
            "explicit scheme; use a thicker band or a smaller time step",
            stacklevel=2,
        )

    def axis_profile(n: int) -> np.ndarray:
        idx = np.arange(n)
        dist = np.minimum(idx, n - 1 - idx).astype(np.float64)
        ramp = np.clip((thickness - dist) / thickness, 0.0, None)
        return d_max * ramp**exponent

    px = axis_profile(grid.nx)[:, None]
    pz = axis_profile(grid.nz)[None, :]
    return DampingProfile(grid, np.maximum(px, pz))


@dataclass(frozen=True)
class SourcePulse:
    """Discrete source waveform, peak-normalized to unit magnitude."""

    samples: np.ndarray
    dt: float
    f_c: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("pulse samples must be 1-D")
        if not np.all(np.isfinite(s)):
            raise ValueError("pulse contains non-finite samples")
        s = np.ascontiguousarray(s)
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def nt(self) -> int:
        return int(self.samples.shape[0])


def make_source_pulse(
    f_c: float, dt: float, nt: int, kind: str = "gaussian_derivative"
) -> SourcePulse:
    """Gaussian or derivative-of-Gaussian pulse centered late enough to start
    from (numerical) zero.

    The width is ``sigma = 1/(2*pi*f_c)``, which puts the spectral peak of the
    derivative pulse exactly at ``f_c``; the delay is ``t0 = 7*sigma`` so the
    truncated left tail is below 1e-10 of the peak.  Output is normalized to
    unit peak magnitude.
    """
    if f_c <= 0 or dt <= 0 or nt < 1:
        raise ValueError("f_c, dt must be positive and nt >= 1")
    if f_c * dt >= 0.5:
        raise ValueError(
            f"center frequency {f_c} Hz violates Nyquist at dt={dt} s"
        )
    sigma = 1.0 / (2.0 * math.pi * f_c)
    t0 = 7.0 * sigma
    t = np.arange(nt) * dt
    if nt * dt < t0 + 5.0 * sigma:
        warnings.warn(
            "time window is shorter than the pulse support; the waveform "
            "will be truncated",
            stacklevel=2,
        )
    g = np.exp(-((t - t0) ** 2) / (2.0 * sigma**2))
    if kind == "gaussian":
        samples = g
    elif kind == "gaussian_derivative":
        samples = -(t - t0) / sigma**2 * g
    else:
        raise ValueError(f"unknown pulse kind {kind!r}")
    peak = np.abs(samples).max()
    if peak > 0:
        samples = samples / peak
    return SourcePulse(samples, dt, f_c)


@dataclass
class Wavefield:
    """Rolling two-step pressure history during explicit stepping."""

    u_curr: np.ndarray
    u_prev: np.ndarray
    t: int


def laplacian(u: np.ndarray, dx: float) -> np.ndarray:
    """5-point Laplacian with implicit zeros outside the grid.

    Operates on the trailing two axes, so stacked fields (batch, nx, nz)
    step in one call.
    """
    out = -4.0 * u
    out[..., 1:, :] += u[..., :-1, :]
    out[..., :-1, :] += u[..., 1:, :]
    out[..., :, 1:] += u[..., :, :-1]
    out[..., :, :-1] += u[..., :, 1:]
    out /= dx * dx
    return out


def step_coefficients(
    c_values: np.ndarray, d_values: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Elementwise update coefficients (A, B, E) of the explicit scheme."""
    denom = 1.0 + d_values * dt
    a = (2.0 - (d_values * dt) ** 2) / denom
    b = (d_values * dt - 1.0) / denom
    e = c_values**2 * dt * dt / denom
    return a, b, e


def step_wavefield(
    u_prev: np.ndarray,
    u_prev2: np.ndarray,
    sos: SosMap,
    damping: DampingProfile,
    s_t: np.ndarray,
    dt: float,
) -> np.ndarray:
    """Single explicit time step; see the module formula."""
    if u_prev.shape != sos.grid.shape or u_prev2.shape != sos.grid.shape:
        raise ValueError("wavefield shape does not match the grid")
    for name, arr in (("u_prev", u_prev), ("u_prev2", u_prev2), ("s_t", s_t)):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in {name}")
    a, b, e = step_coefficients(sos.values, damping.values, dt)
    u_prev = np.asarray(u_prev, dtype=np.float64)
    return a * u_prev + b * u_prev2 + e * laplacian(u_prev, sos.grid.dx) + s_t


def _check_simulation_inputs(
    sos: SosMap, geometry: AcquisitionGeometry, pulse: SourcePulse, damping: DampingProfile
) -> None:
    if geometry.grid != sos.grid:
        raise ValueError("geometry and speed map use different grids")
    cfl = check_cfl(sos.grid, sos.c_max)
    if not cfl.ok:
        raise ValueError(
            f"CFL violated: ratio {cfl.ratio:.4f} > 1 for c_max={sos.c_max} m/s"
        )
    if pulse.nt != sos.grid.nt:
        raise ValueError("pulse length does not match grid.nt")
    nodes = geometry.element_nodes
    if np.any(damping.values[nodes[:, 0], nodes[:, 1]] > 0.0):
        raise GeometryError("transducer elements lie inside the damping band")


def _propagate(
    c_values: np.ndarray,
    d_values: np.ndarray,
    grid: Grid2D,
    pulse_samples: np.ndarray,
    tx_nodes: np.ndarray,
    rx_nodes: np.ndarray | None,
    store_fields: bool = False,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Step all transmissions in one stacked array.

    ``tx_nodes`` is (P, 2); ``rx_nodes`` is (P, R, 2) or None.  Returns
    (traces (P, R, nt) or None, fields (P, nt, nx, nz) or None).
    Transmissions never interact, so stacking is exact and the assembly
    order is fixed by the transmission index.
    """
    n_p = tx_nodes.shape[0]
    nt = grid.nt
    a, b, e = step_coefficients(c_values, d_values, grid.dt)
    u1 = np.zeros((n_p, grid.nx, grid.nz))
    u2 = np.zeros_like(u1)
    p_idx = np.arange(n_p)

    traces = None
    if rx_nodes is not None:
        traces = np.empty((n_p, rx_nodes.shape[1], nt))
    fields = np.empty((n_p, nt, grid.nx, grid.nz)) if store_fields else None

    for t in range(nt):
        u = a * u1 + b * u2 + e * laplacian(u1, grid.dx)
        u[p_idx, tx_nodes[:, 0], tx_nodes[:, 1]] += pulse_samples[t]
        if traces is not None:
            traces[:, :, t] = u[p_idx[:, None], rx_nodes[:, :, 0], rx_nodes[:, :, 1]]
        if fields is not None:
            fields[:, t] = u
        u2, u1 = u1, u
    if traces is not None and not np.all(np.isfinite(traces)):
        raise NumericError("simulation diverged: non-finite receiver samples")
    if fields is not None and not np.all(np.isfinite(fields[:, -1])):
        raise NumericError("simulation diverged: non-finite wavefield")
    return traces, fields


def simulate_wavefield(
    sos: SosMap,
    pulse: SourcePulse,
    source_node: tuple[int, int],
    damping: DampingProfile | None = None,
) -> np.ndarray:
    """Full field history (nt, nx, nz) for a single point source; used for
    snapshots and boundary-treatment checks."""
    damping = damping if damping is not None else zero_damping(sos.grid)
    cfl = check_cfl(sos.grid, sos.c_max)
    if not cfl.ok:
        raise ValueError(f"CFL violated: ratio {cfl.ratio:.4f} > 1")
    tx = np.asarray([source_node], dtype=np.int64)
    _, fields = _propagate(
        sos.values, damping.values, sos.grid, pulse.samples, tx, None, store_fields=True
    )
    return fields[0]


def simulate_transmission(
    sos: SosMap,
    geometry: AcquisitionGeometry,
    pulse: SourcePulse,
    p: int,
    damping: DampingProfile | None = None,
) -> np.ndarray:
    """Traces (nt, n_r) recorded by transmission ``p``'s receiver subset."""
    if not 0 <= p < geometry.n_p:
        raise ValueError(f"transmission index {p} out of range [0, {geometry.n_p})")
    damping = damping if damping is not None else zero_damping(sos.grid)
    _check_simulation_inputs(sos, geometry, pulse, damping)
    tx = geometry.element_nodes[p : p + 1]
    rx = geometry.element_nodes[geometry.rx_pattern[p]][None, :, :]
    traces, _ = _propagate(
        sos.values, damping.values, sos.grid, pulse.samples, tx, rx
    )
    return traces[0].T.copy()


def simulate_all(
    sos: SosMap,
    geometry: AcquisitionGeometry,
    pulse: SourcePulse,
    damping: DampingProfile | None = None,
) -> ChannelData:
    """Channel data for every transmission, assembled in transmission order."""
    damping = damping if damping is not None else zero_damping(sos.grid)
    _check_simulation_inputs(sos, geometry, pulse, damping)
    tx = geometry.element_nodes
    rx = geometry.element_nodes[geometry.rx_pattern]
    traces, _ = _propagate(
        sos.values, damping.values, sos.grid, pulse.samples, tx, rx
    )
    return ChannelData(traces, geometry, sos.grid.dt)
