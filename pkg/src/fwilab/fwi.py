"""Classical waveform-inversion baseline: ADMM with total-variation
regularization and a fixed-step L-BFGS inner solver for the data term.

The split is  min_C  misfit(C) + lambda * TV(Z)  s.t.  C = Z, handled with
scaled-dual ADMM: an L-BFGS descent on misfit + (rho/2)||C - Z + W||^2,
a TV proximal step for Z, and dual ascent on W.  No stopping criterion is
applied; the loop always runs the configured number of outer iterations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .adjoint import misfit_and_gradient
from .forward import DampingProfile, SourcePulse
from .grid import ChannelData, SosMap

__all__ = [
    "FwiConfig",
    "FwiDivergenceError",
    "tv_prox",
    "lbfgs_minimize",
    "admm_fwi",
    "plain_gradient_descent",
]


class FwiDivergenceError(RuntimeError):
    """Inner solve produced a non-finite misfit."""

    def __init__(self, outer_iteration: int):
        super().__init__(f"inner solve diverged at outer iteration {outer_iteration}")
        self.outer_iteration = outer_iteration


@dataclass(frozen=True)
class FwiConfig:
    """ADMM-FWI settings.

    ``rho_admm=None`` picks ``1e-2 * misfit(C0) / ||C0||^2`` at run time so
    the penalty scales with the problem; ``tv_weight=None`` then defaults to
    ``rho_admm`` (a proximal smoothing weight of one m/s).
    """

    outer_iters: int = 200
    inner_lbfgs_iters: int = 5
    inner_lr: float = 1.0
    tv_weight: float | None = None
    rho_admm: float | None = None
    bounds: tuple[float, float] = (1300.0, 3200.0)

    def __post_init__(self):
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")
        if self.inner_lbfgs_iters < 1:
            raise ValueError("inner_lbfgs_iters must be >= 1")
        if self.tv_weight is not None and self.tv_weight < 0:
            raise ValueError("tv_weight must be >= 0")
        if self.rho_admm is not None and self.rho_admm <= 0:
            raise ValueError("rho_admm must be > 0")
        if not self.bounds[0] < self.bounds[1]:
            raise ValueError("bounds must satisfy c_min < c_max")


# ---------------------------------------------------------------------------
# Anisotropic TV proximal operator (dual projected gradient)
# ---------------------------------------------------------------------------


def _grad_x(v: np.ndarray) -> np.ndarray:
    return v[1:, :] - v[:-1, :]


def _grad_z(v: np.ndarray) -> np.ndarray:
    return v[:, 1:] - v[:, :-1]


def _div(zx: np.ndarray, zz: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Negative adjoint of the forward-difference gradient."""
    out = np.zeros(shape)
    out[:-1, :] -= zx
    out[1:, :] += zx
    out[:, :-1] -= zz
    out[:, 1:] += zz
    return out


def total_variation(v: np.ndarray) -> float:
    """Anisotropic TV: l1 norm of both forward-difference components."""
    return float(np.abs(_grad_x(v)).sum() + np.abs(_grad_z(v)).sum())


def tv_prox(v: np.ndarray, weight: float, iters: int = 20) -> np.ndarray:
    """Approximate prox of ``weight * TV`` at ``v``.

    Solves min_x 0.5||x - v||^2 + weight * TV(x) by projected gradient
    ascent on the dual (step 1/8, the inverse Lipschitz bound of the
    difference operator), truncated at ``iters`` iterations.
    """
    if weight < 0:
        raise ValueError("weight must be >= 0")
    v = np.asarray(v, dtype=np.float64)
    if weight == 0.0:
        return v.copy()
    zx = np.zeros((v.shape[0] - 1, v.shape[1]))
    zz = np.zeros((v.shape[0], v.shape[1] - 1))
    for _ in range(iters):
        x = v - weight * _div(zx, zz, v.shape)
        zx = np.clip(zx + _grad_x(x) / (8.0 * weight), -1.0, 1.0)
        zz = np.clip(zz + _grad_z(x) / (8.0 * weight), -1.0, 1.0)
    return v - weight * _div(zx, zz, v.shape)


# ---------------------------------------------------------------------------
# Fixed-step L-BFGS
# ---------------------------------------------------------------------------


def lbfgs_minimize(
    value_grad_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    iters: int,
    lr: float,
    memory: int = 5,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Two-loop-recursion L-BFGS with a fixed step length (no line search).

    The first step, taken before any curvature information exists, is
    steepest descent scaled by ``min(1, 1/||g||_1)`` to avoid an arbitrary
    initial magnitude.  Curvature pairs with non-positive s.y are skipped.
    If ``project`` is given, every iterate is projected after the step.
    """
    x = np.array(x0, dtype=np.float64)
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    values: list[float] = []
    f, g = value_grad_fn(x)
    values.append(f)
    for it in range(iters):
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite objective at inner step {it}")
        if s_list:
            q = g.ravel().copy()
            alphas = []
            rhos = []
            for s, y in zip(reversed(s_list), reversed(y_list)):
                rho = 1.0 / float(y.ravel() @ s.ravel())
                alpha = rho * float(s.ravel() @ q)
                q -= alpha * y.ravel()
                alphas.append(alpha)
                rhos.append(rho)
            s_last, y_last = s_list[-1], y_list[-1]
            gamma = float(s_last.ravel() @ y_last.ravel()) / float(
                y_last.ravel() @ y_last.ravel()
            )
            r = gamma * q
            for (s, y), alpha, rho in zip(
                zip(s_list, y_list), reversed(alphas), reversed(rhos)
            ):
                beta = rho * float(y.ravel() @ r)
                r += (alpha - beta) * s.ravel()
            direction = -r.reshape(x.shape)
        else:
            g1 = float(np.abs(g).sum())
            direction = -g * (min(1.0, 1.0 / g1) if g1 > 0 else 1.0)

        x_new = x + lr * direction
        if project is not None:
            x_new = project(x_new)
        f_new, g_new = value_grad_fn(x_new)
        s = x_new - x
        y = g_new - g
        if float(y.ravel() @ s.ravel()) > 1e-12:
            s_list.append(s)
            y_list.append(y)
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
        x, f, g = x_new, f_new, g_new
        values.append(f)
    return x, values


# ---------------------------------------------------------------------------
# Solver drivers
# ---------------------------------------------------------------------------


def admm_fwi(
    m_obs: ChannelData,
    c0: SosMap,
    cfg: FwiConfig,
    pulse: SourcePulse,
    damping: DampingProfile | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> tuple[SosMap, list[float]]:
    """Run the ADMM-TV inversion for exactly ``cfg.outer_iters`` iterations.

    Returns the final speed map and the data-misfit log: the initial misfit
    followed by one entry per outer iteration.
    """
    grid = c0.grid
    c = np.array(c0.values)
    c_min, c_max = cfg.bounds

    def fidelity(values: np.ndarray) -> tuple[float, np.ndarray]:
        mis, grad = misfit_and_gradient(
            c0.with_values(values), m_obs, pulse, damping
        )
        return mis, grad.values

    misfit0, _ = fidelity(c)
    rho = cfg.rho_admm
    if rho is None:
        rho = 1e-2 * misfit0 / float(np.sum(c * c))
    lam = cfg.tv_weight if cfg.tv_weight is not None else rho

    z = c.copy()
    w = np.zeros_like(c)
    log = [misfit0]
    for outer in range(cfg.outer_iters):
        def augmented(values: np.ndarray) -> tuple[float, np.ndarray]:
            mis, grad = fidelity(values)
            diff = values - z + w
            return mis + 0.5 * rho * float(np.sum(diff * diff)), grad + rho * diff

        try:
            c, _ = lbfgs_minimize(
                augmented,
                c,
                iters=cfg.inner_lbfgs_iters,
                lr=cfg.inner_lr,
                project=lambda x: np.clip(x, c_min, c_max),
            )
        except FloatingPointError as exc:
            raise FwiDivergenceError(outer) from exc
        c = np.clip(c, c_min, c_max)
        z = tv_prox(c + w, lam / rho)
        w = w + c - z
        mis, _ = fidelity(c)
        if not np.isfinite(mis):
            raise FwiDivergenceError(outer)
        log.append(mis)
        if callback is not None:
            callback(outer, mis)
    return c0.with_values(c), log


def plain_gradient_descent(
    m_obs: ChannelData,
    c0: SosMap,
    steps: int,
    gamma: float,
    pulse: SourcePulse,
    damping: DampingProfile | None = None,
    bounds: tuple[float, float] | None = None,
) -> SosMap:
    """Fixed-step descent ``C <- C - gamma * g`` on the data misfit."""
    c = np.array(c0.values)
    for _ in range(steps):
        _, grad = misfit_and_gradient(c0.with_values(c), m_obs, pulse, damping)
        if not np.all(np.isfinite(grad.values)):
            raise FloatingPointError("non-finite gradient")
        c = c - gamma * grad.values
        if bounds is not None:
            c = np.clip(c, bounds[0], bounds[1])
    return c0.with_values(c)
