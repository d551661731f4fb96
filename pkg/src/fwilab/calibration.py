"""Source calibration from measured receive traces.

Under an LTI transmit/receive chain, dividing the measured receive spectrum
by the simulated one cancels the path response, so multiplying the ratio by
the (differentiated) simulated source spectrum estimates the equivalent
hardware pulse:

    S_hw(f) = j 2 pi f S_sim(f) * R_hw(f) / R_sim(f)

restricted to the analysis band.  The conditioning stages applied to raw
hardware traces before the ratio (gating, smoothing, alignment, resampling,
bandpass) are all linear, so global amplitude scalings cancel and the
peak-normalized result is scale-invariant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .forward import SourcePulse

__all__ = [
    "Trace",
    "Spectrum",
    "dft",
    "idft",
    "gate_and_smooth",
    "resample",
    "bandpass",
    "calibrate_source",
]


@dataclass(frozen=True)
class Trace:
    """Uniformly sampled pressure trace."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("trace must be 1-D")
        if not np.all(np.isfinite(s)):
            raise ValueError("trace contains non-finite samples")
        if not self.fs > 0:
            raise ValueError("sampling rate must be positive")
        s = np.ascontiguousarray(s)
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return (self.n - 1) / self.fs


@dataclass(frozen=True)
class Spectrum:
    """Complex bins over ordinary frequency, spacing ``fs / n``."""

    bins: np.ndarray
    fs: float

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.complex128)
        if b.ndim != 1:
            raise ValueError("spectrum must be 1-D")
        b = np.ascontiguousarray(b)
        b.flags.writeable = False
        object.__setattr__(self, "bins", b)

    @property
    def n(self) -> int:
        return int(self.bins.shape[0])

    def frequencies(self) -> np.ndarray:
        """Signed bin frequencies in Hz."""
        return np.fft.fftfreq(self.n, d=1.0 / self.fs)


def dft(trace: Trace) -> Spectrum:
    return Spectrum(np.fft.fft(trace.samples), trace.fs)


def idft(spectrum: Spectrum) -> Trace:
    """Inverse transform; the (numerically tiny) imaginary residue of a
    conjugate-symmetric spectrum is dropped."""
    return Trace(np.fft.ifft(spectrum.bins).real, spectrum.fs)


def gate_and_smooth(
    trace: Trace, zero_prefix: int = 400, window: int = 10, shift: int = 5
) -> Trace:
    """Zero the leading interference, smooth, and advance the trace.

    The first ``zero_prefix`` samples are set to zero, a centered moving
    average of ``window`` samples (edge-truncated; even windows take one
    extra sample on the left) is applied, and the result is shifted left by
    ``shift`` samples with zero fill at the end.
    """
    if window < 1 or zero_prefix < 0 or shift < 0:
        raise ValueError("window >= 1, zero_prefix >= 0, shift >= 0 required")
    if trace.n <= zero_prefix + window:
        raise ValueError(
            f"trace of {trace.n} samples too short for prefix {zero_prefix} "
            f"and window {window}"
        )
    x = np.array(trace.samples)
    x[:zero_prefix] = 0.0

    if window > 1:
        left = window // 2
        right = window - 1 - left
        csum = np.concatenate([[0.0], np.cumsum(x)])
        n = x.shape[0]
        idx = np.arange(n)
        lo = np.maximum(idx - left, 0)
        hi = np.minimum(idx + right, n - 1)
        x = (csum[hi + 1] - csum[lo]) / (hi - lo + 1)

    if shift > 0:
        out = np.zeros_like(x)
        out[:-shift] = x[shift:]
        x = out
    return Trace(x, trace.fs)


def resample(trace: Trace, fs_out: float) -> Trace:
    """Linear interpolation onto a uniform grid spanning the same duration."""
    if fs_out <= 0:
        raise ValueError("fs_out must be positive")
    if fs_out == trace.fs:
        return trace
    t_old = np.arange(trace.n) / trace.fs
    n_out = int(np.floor(t_old[-1] * fs_out)) + 1
    t_new = np.arange(n_out) / fs_out
    return Trace(np.interp(t_new, t_old, trace.samples), fs_out)


def bandpass(trace: Trace, f_lo: float, f_hi: float) -> Trace:
    """Ideal frequency-domain bandpass: bins with |f| outside [f_lo, f_hi]
    are zeroed (the mirrored negative band is kept), then inverse transformed."""
    if not (0.0 <= f_lo < f_hi <= trace.fs / 2.0):
        raise ValueError(
            f"band ({f_lo}, {f_hi}) invalid for fs={trace.fs} (need 0 <= lo < hi <= fs/2)"
        )
    spec = np.fft.fft(trace.samples)
    freq = np.abs(np.fft.fftfreq(trace.n, d=1.0 / trace.fs))
    spec[(freq < f_lo) | (freq > f_hi)] = 0.0
    return Trace(np.fft.ifft(spec).real, trace.fs)


def calibrate_source(
    s_sim: SourcePulse,
    r_sim: Trace,
    r_hw: Trace,
    band: tuple[float, float] = (100e3, 700e3),
    eps_rel: float = 1e-3,
) -> SourcePulse:
    """Estimate the equivalent hardware source pulse by spectral ratio.

    Inputs must already be conditioned to a common length and rate.  The
    simulated source spectrum is differentiated (``j 2 pi f`` factor),
    multiplied by ``R_hw / (R_sim + eps)`` inside the band (zero outside),
    inverse transformed, and peak-normalized.  ``eps`` is ``eps_rel`` times
    the peak of ``|R_sim|``; a warning is issued if in-band simulated bins
    fall below that floor.
    """
    fs = 1.0 / s_sim.dt
    n = s_sim.nt
    if r_sim.n != n or r_hw.n != n:
        raise ValueError(
            f"length mismatch: pulse {n}, r_sim {r_sim.n}, r_hw {r_hw.n}"
        )
    for name, tr in (("r_sim", r_sim), ("r_hw", r_hw)):
        if not np.isclose(tr.fs, fs, rtol=1e-9):
            raise ValueError(f"{name} rate {tr.fs} != pulse rate {fs}")
    if not np.any(r_sim.samples):
        raise ValueError("r_sim is identically zero")

    freq = np.fft.fftfreq(n, d=s_sim.dt)
    s_spec = np.fft.fft(s_sim.samples)
    s_diff = 1j * 2.0 * np.pi * freq * s_spec
    r_sim_spec = np.fft.fft(r_sim.samples)
    r_hw_spec = np.fft.fft(r_hw.samples)

    eps = eps_rel * np.abs(r_sim_spec).max()
    in_band = (np.abs(freq) >= band[0]) & (np.abs(freq) <= band[1])
    if np.any(np.abs(r_sim_spec[in_band]) < eps):
        warnings.warn(
            "in-band simulated receive bins fall below the regularization "
            "floor; the spectral ratio is ill-conditioned there",
            stacklevel=2,
        )
    ratio = np.where(in_band, r_hw_spec / (r_sim_spec + eps), 0.0)
    s_hw = np.fft.ifft(s_diff * ratio).real
    peak = np.abs(s_hw).max()
    if peak > 0:
        s_hw = s_hw / peak
    return SourcePulse(s_hw, s_sim.dt, s_sim.f_c)
