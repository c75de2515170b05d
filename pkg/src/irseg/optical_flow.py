"""Horn-Schunck dense optical flow between consecutive frames.

The brightness-constancy residual is regularized by the squared flow
gradient; minimizing the resulting functional leads to a Jacobi-style
per-pixel update driven by the neighborhood averages of u and v. All
pixels update simultaneously each iteration, so results are deterministic
and independent of traversal order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve

from .errors import DimensionMismatchError
from .image import FlowField, ScalarField
from .io import save_matrix_csv

# Neighborhood-average kernel: 1/6 for the 4-neighbors, 1/12 for diagonals.
_AVG_KERNEL = np.array(
    [
        [1.0 / 12, 1.0 / 6, 1.0 / 12],
        [1.0 / 6, 0.0, 1.0 / 6],
        [1.0 / 12, 1.0 / 6, 1.0 / 12],
    ]
)


@dataclass(frozen=True)
class HsParams:
    """Solver settings: smoothness weight, iteration cap, convergence threshold.

    ``tol`` is compared against the mean per-pixel update magnitude
    |du| + |dv|; larger ``alpha`` yields smoother flow.
    """

    alpha: float = 1.0
    max_iters: int = 100
    tol: float = 1e-4

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


@dataclass(frozen=True)
class Gradients:
    """Spatial and temporal image derivatives on a shared grid."""

    ix: ScalarField
    iy: ScalarField
    it: ScalarField

    def __post_init__(self):
        if not (self.ix.shape == self.iy.shape == self.it.shape):
            raise DimensionMismatchError("ix, iy, it must share dimensions")


def compute_gradients(f1, f2):
    """Estimate image derivatives from a consecutive frame pair.

    Uses averaged forward differences over the 2x2x2 cube spanning both
    frames; the last row and column replicate their neighbors so the
    output matches the input dimensions.
    """
    if f1.shape != f2.shape:
        raise DimensionMismatchError(f"frames are {f1.shape} and {f2.shape}")
    a, b = f1.data, f2.data
    h, w = a.shape
    ix = np.zeros((h, w))
    iy = np.zeros((h, w))
    it = np.zeros((h, w))
    ix[:-1, :-1] = 0.25 * (
        (a[:-1, 1:] - a[:-1, :-1])
        + (a[1:, 1:] - a[1:, :-1])
        + (b[:-1, 1:] - b[:-1, :-1])
        + (b[1:, 1:] - b[1:, :-1])
    )
    iy[:-1, :-1] = 0.25 * (
        (a[1:, :-1] - a[:-1, :-1])
        + (a[1:, 1:] - a[:-1, 1:])
        + (b[1:, :-1] - b[:-1, :-1])
        + (b[1:, 1:] - b[:-1, 1:])
    )
    it[:-1, :-1] = 0.25 * (
        (b[:-1, :-1] - a[:-1, :-1])
        + (b[1:, :-1] - a[1:, :-1])
        + (b[:-1, 1:] - a[:-1, 1:])
        + (b[1:, 1:] - a[1:, 1:])
    )
    for g in (ix, iy, it):
        g[-1, :] = g[-2, :]
        g[:, -1] = g[:, -2]
    return Gradients(ScalarField(ix), ScalarField(iy), ScalarField(it))


def _forward_diffs(field):
    # Forward differences with replicated border: the last column/row
    # difference is zero.
    dx = np.zeros_like(field)
    dy = np.zeros_like(field)
    dx[:, :-1] = field[:, 1:] - field[:, :-1]
    dy[:-1, :] = field[1:, :] - field[:-1, :]
    return dx, dy


def hs_energy(flow, gradients, alpha):
    """Discrete flow energy: brightness residual squared plus alpha^2 times the flow-gradient energy."""
    ix, iy, it = gradients.ix.data, gradients.iy.data, gradients.it.data
    if flow.shape != ix.shape:
        raise DimensionMismatchError(f"flow is {flow.shape}, gradients are {ix.shape}")
    u, v = flow.u, flow.v
    residual = ix * u + iy * v + it
    ux, uy = _forward_diffs(u)
    vx, vy = _forward_diffs(v)
    smooth = np.sum(ux * ux + uy * uy + vx * vx + vy * vy)
    return float(np.sum(residual * residual) + alpha * alpha * smooth)


def horn_schunck(f1, f2, params=HsParams()):
    """Estimate dense flow from f1 to f2.

    Returns (flow, iterations, final_energy). Starts from zero flow; each
    iteration forms the neighborhood averages of u and v with the
    1/6-1/12 kernel (replicated edges) and applies the simultaneous
    update at every pixel. Stops once the mean |du| + |dv| drops below
    ``params.tol`` or after ``params.max_iters`` iterations.
    """
    grads = compute_gradients(f1, f2)
    ix, iy, it = grads.ix.data, grads.iy.data, grads.it.data
    denom = params.alpha**2 + ix * ix + iy * iy
    u = np.zeros_like(ix)
    v = np.zeros_like(ix)
    iterations = 0
    for iterations in range(1, params.max_iters + 1):
        ubar = convolve(u, _AVG_KERNEL, mode="nearest")
        vbar = convolve(v, _AVG_KERNEL, mode="nearest")
        shared = (ix * ubar + iy * vbar + it) / denom
        new_u = ubar - ix * shared
        new_v = vbar - iy * shared
        delta = float(np.mean(np.abs(new_u - u) + np.abs(new_v - v)))
        u, v = new_u, new_v
        if delta < params.tol:
            break
    flow = FlowField(u, v)
    return flow, iterations, hs_energy(flow, grads, params.alpha)


def flow_magnitude(flow):
    """Per-pixel Euclidean magnitude of the flow vectors."""
    return ScalarField(np.hypot(flow.u, flow.v))


def save_flow_csv(flow, directory, prefix=""):
    """Debug dump: write u and v as row-major CSVs with 9 significant digits."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix_csv(flow.u, directory / f"{prefix}u.csv")
    save_matrix_csv(flow.v, directory / f"{prefix}v.csv")
