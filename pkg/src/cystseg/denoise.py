"""Total-variation (ROF) denoising with Chambolle's dual fixed-point iteration.

Minimizes ``(lam / 2) * ||u - f||^2 + TV(u)`` with isotropic TV, forward
differences and a reflecting boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput

DUAL_STEP = 0.248
_LOG_EPS = 1.0 / 255.0


@dataclass(frozen=True)
class TvParams:
    lam: float = 8.0
    max_iter: int = 200
    tol: float = 1e-4
    log_transform: bool = False  # not part of the plain ROF model; off by default

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def gradient(u: np.ndarray):
    """Forward differences, zero on the last column (dx) and last row (dy)."""
    dx = np.zeros_like(u)
    dy = np.zeros_like(u)
    dx[:, :-1] = u[:, 1:] - u[:, :-1]
    dy[:-1, :] = u[1:, :] - u[:-1, :]
    return dx, dy


def divergence(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`gradient`."""
    d = np.zeros_like(px)
    d[:, 0] = px[:, 0]
    d[:, 1:-1] = px[:, 1:-1] - px[:, :-2]
    d[:, -1] = -px[:, -2] if px.shape[1] > 1 else 0.0
    d[0, :] += py[0, :]
    d[1:-1, :] += py[1:-1, :] - py[:-2, :]
    if py.shape[0] > 1:
        d[-1, :] -= py[-2, :]
    return d


def total_variation(s: np.ndarray) -> float:
    dx, dy = gradient(np.asarray(s, dtype=np.float64))
    return float(np.sqrt(dx * dx + dy * dy).sum())


def rof_energy(u: np.ndarray, f: np.ndarray, lam: float) -> float:
    return 0.5 * lam * float(((u - f) ** 2).sum()) + total_variation(u)


def _chambolle(f, lam, max_iter, tol, checkpoint=0):
    theta = 1.0 / lam
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    energies = []
    u = f
    for k in range(1, max_iter + 1):
        gx, gy = gradient(divergence(px, py) - f / theta)
        norm = 1.0 + DUAL_STEP * np.sqrt(gx * gx + gy * gy)
        nx = (px + DUAL_STEP * gx) / norm
        ny = (py + DUAL_STEP * gy) / norm
        change = np.sqrt(((nx - px) ** 2).sum() + ((ny - py) ** 2).sum())
        size = np.sqrt((nx * nx).sum() + (ny * ny).sum())
        px, py = nx, ny
        done = change <= tol * size
        if checkpoint and (k % checkpoint == 0 or done or k == max_iter):
            u = f - theta * divergence(px, py)
            energies.append((k, rof_energy(u, f, lam)))
        if done:
            break
    u = f - theta * divergence(px, py)
    return u, energies, k


def tv_denoise(f: np.ndarray, params: TvParams = TvParams()) -> np.ndarray:
    """Denoise one float slice in [0, 1]; output clipped to [0, 1]."""
    return tv_denoise_trace(f, params)[0]


def tv_denoise_trace(f: np.ndarray, params: TvParams = TvParams(), checkpoint: int = 10):
    """Like :func:`tv_denoise` but also returns ``[(iteration, energy), ...]``
    recorded every ``checkpoint`` iterations (and at the last one)."""
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise NonFiniteInput("slice contains NaN or Inf")
    if params.log_transform:
        g = np.log(f + _LOG_EPS)
        v, energies, _ = _chambolle(g, params.lam, params.max_iter, params.tol, checkpoint)
        u = np.exp(v) - _LOG_EPS
    else:
        u, energies, _ = _chambolle(f, params.lam, params.max_iter, params.tol, checkpoint)
    return np.clip(u, 0.0, 1.0), energies
