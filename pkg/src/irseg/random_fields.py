"""Spatially regularized segmentation on the 4-neighborhood pixel grid.

Two refinements of the mixture MAP labeling:

* icm_segment: discrete labels with a Potts pair potential, optimized by
  iterated conditional modes in raster order (in-sweep state reads, so
  every accepted move strictly lowers the posterior energy).
* gmrf_segment: one continuous score field per class, jointly Gaussian
  with precision kappa*I + lambda*L (L the grid Laplacian) and the log
  class-posteriors as the data term. Coordinate-wise conditional modes of
  a Gaussian are conditional means, so the sweep is Gauss-Seidel on the
  normal equations; labels are the per-pixel argmax over class scores.

The per-pixel data term of both methods includes the mixture weight, i.e.
it is -log(pi_c * N_c(x)). With the coupling switched off (beta = 0 or
lambda = 0) both therefore reproduce the mixture MAP labeling exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatchError
from .image import LabelMap
from .io import atomic_write_bytes
from .clustering import _log_joint, gaussian_log_densities

_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_POSTERIOR_FLOOR = -30.0


@dataclass(frozen=True)
class MrfParams:
    """Potts coupling strength and ICM sweep settings."""

    beta: float = 1.0
    max_sweeps: int = 20
    visit_order: str = "raster"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if self.visit_order != "raster":
            raise ValueError("only raster visit order is supported")


@dataclass(frozen=True)
class GmrfParams:
    """Score-field precision settings and Gauss-Seidel stopping rule."""

    lam: float = 4.0
    kappa: float = 1.0
    max_sweeps: int = 200
    tol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive to keep the precision positive definite")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


@dataclass(frozen=True)
class EnergyBreakdown:
    """Posterior energy split into its data and prior parts."""

    likelihood_energy: float
    prior_energy: float
    total: float

    def __post_init__(self):
        if abs(self.total - (self.likelihood_energy + self.prior_energy)) > 1e-12 * max(
            1.0, abs(self.total)
        ):
            raise ValueError("total must equal likelihood_energy + prior_energy")

    @classmethod
    def of(cls, likelihood_energy, prior_energy):
        return cls(likelihood_energy, prior_energy, likelihood_energy + prior_energy)


def _check_stack_model_labels(stack, model, labels):
    if stack.dims != model.dims:
        raise DimensionMismatchError(f"stack has {stack.dims} dims, model has {model.dims}")
    if labels.shape != stack.shape:
        raise DimensionMismatchError(f"labels are {labels.shape}, stack is {stack.shape}")
    if labels.k != model.k:
        raise DimensionMismatchError(f"labels have k={labels.k}, model has k={model.k}")


def likelihood_energy(stack, model, labels):
    """Sum of per-pixel negative log class-conditional Gaussian densities.

    Uses only the Gaussian of each pixel's assigned class; mixture weights
    do not enter here.
    """
    _check_stack_model_labels(stack, model, labels)
    logd = gaussian_log_densities(stack.pixels(), model.means, model.covariances)
    picked = logd[np.arange(logd.shape[0]), labels.labels.ravel()]
    return float(-picked.sum())


def prior_energy(labels, beta):
    """Potts energy over unordered 4-neighbor pairs: -beta if equal, +beta if different."""
    lab = labels.labels
    h_diff = lab[:, 1:] != lab[:, :-1]
    v_diff = lab[1:, :] != lab[:-1, :]
    n_edges = h_diff.size + v_diff.size
    n_diff = int(h_diff.sum()) + int(v_diff.sum())
    return float(beta * (n_diff - (n_edges - n_diff)))


def disagreement_edges(labels):
    """Count of 4-neighbor pairs with differing labels (smoothness measure)."""
    lab = labels.labels
    return int((lab[:, 1:] != lab[:, :-1]).sum() + (lab[1:, :] != lab[:-1, :]).sum())


def _unary_energies(stack, model):
    # (h, w, k) array of -log(pi_c * N_c(x)) per pixel.
    return (-_log_joint(model, stack.pixels())).reshape(stack.height, stack.width, model.k)


def posterior_energy(stack, model, labels, beta):
    """Energy the ICM segmenter minimizes: weighted-density data term plus Potts prior."""
    _check_stack_model_labels(stack, model, labels)
    unary = _unary_energies(stack, model)
    h, w = labels.shape
    data = float(unary.reshape(-1, model.k)[np.arange(h * w), labels.labels.ravel()].sum())
    return EnergyBreakdown.of(data, prior_energy(labels, beta))


def icm_segment(stack, model, params, init):
    """Iterated conditional modes from an initial labeling.

    Raster-order sweeps; each pixel takes the label minimizing its data
    energy plus beta times (disagreeing - agreeing) neighbors, read from
    the current state. The current label wins ties, so accepted moves are
    strict descents. Returns (labels, sweeps, history) where history has
    the energy breakdown of the initial state and after every sweep.
    """
    _check_stack_model_labels(stack, model, init)
    h, w = stack.height, stack.width
    k = model.k
    beta = params.beta
    unary = _unary_energies(stack, model)
    # Plain-list mirrors of the arrays keep the inner loop cheap.
    u_rows = unary.tolist()
    lab_rows = init.labels.tolist()
    history = [_breakdown_from_lists(u_rows, lab_rows, beta, h, w, k)]
    sweeps_run = 0
    for _ in range(params.max_sweeps):
        sweeps_run += 1
        changed = 0
        for y in range(h):
            row = lab_rows[y]
            u_row = u_rows[y]
            up = lab_rows[y - 1] if y > 0 else None
            down = lab_rows[y + 1] if y < h - 1 else None
            for x in range(w):
                cur = row[x]
                costs = list(u_row[x])
                two_beta = 2.0 * beta
                if x > 0:
                    costs[row[x - 1]] -= two_beta
                if x < w - 1:
                    costs[row[x + 1]] -= two_beta
                if up is not None:
                    costs[up[x]] -= two_beta
                if down is not None:
                    costs[down[x]] -= two_beta
                best = 0
                best_cost = costs[0]
                for c in range(1, k):
                    if costs[c] < best_cost:
                        best = c
                        best_cost = costs[c]
                if best_cost < costs[cur]:
                    row[x] = best
                    changed += 1
        history.append(_breakdown_from_lists(u_rows, lab_rows, beta, h, w, k))
        if changed == 0:
            break
    labels = LabelMap(np.array(lab_rows, dtype=np.int64), k)
    return labels, sweeps_run, history


def _breakdown_from_lists(u_rows, lab_rows, beta, h, w, k):
    lab = np.array(lab_rows, dtype=np.int64)
    unary = np.array(u_rows, dtype=float).reshape(h * w, k)
    data = float(unary[np.arange(h * w), lab.ravel()].sum())
    return EnergyBreakdown.of(data, prior_energy(LabelMap(lab, k), beta))


def _neighbor_sum(field):
    s = np.zeros_like(field)
    s[1:, :] += field[:-1, :]
    s[:-1, :] += field[1:, :]
    s[:, 1:] += field[:, :-1]
    s[:, :-1] += field[:, 1:]
    return s


def class_log_posteriors(stack, model):
    """(h, w, k) log responsibilities of every pixel under the mixture."""
    if stack.dims != model.dims:
        raise DimensionMismatchError(f"stack has {stack.dims} dims, model has {model.dims}")
    logj = _log_joint(model, stack.pixels())
    logp = logj - logsumexp(logj, axis=1, keepdims=True)
    return logp.reshape(stack.height, stack.width, model.k)


def gmrf_scores(stack, model, params):
    """Per-class Gaussian score fields solved by checkerboard Gauss-Seidel.

    For each class c the score field minimizes the quadratic energy with
    precision kappa*I + lambda*L and data vector b_c = log posterior of c;
    sweeps run until the residual max-norm over all classes drops below
    tol or max_sweeps is hit. Returns (scores, residual_history) with
    scores shaped (k, h, w).
    """
    if stack.dims != model.dims:
        raise DimensionMismatchError(f"stack has {stack.dims} dims, model has {model.dims}")
    h, w = stack.height, stack.width
    b = np.moveaxis(class_log_posteriors(stack, model), 2, 0)  # (k, h, w)
    # Posteriors below e^-30 are indistinguishable from zero for labeling;
    # flooring them keeps far-tail magnitudes from dominating the smoothing.
    # The per-pixel best class is never floored (its log posterior is at
    # least -log k), so the lambda = 0 reduction stays exact.
    b = np.maximum(b, _LOG_POSTERIOR_FLOOR)
    deg = np.full((h, w), 4.0)
    deg[0, :] -= 1
    deg[-1, :] -= 1
    deg[:, 0] -= 1
    deg[:, -1] -= 1
    diag = params.kappa + params.lam * deg
    yy, xx = np.indices((h, w))
    red = (yy + xx) % 2 == 0
    black = ~red
    scores = np.zeros_like(b)
    residuals = []
    for _ in range(params.max_sweeps):
        worst = 0.0
        for c in range(model.k):
            hc = scores[c]
            s = _neighbor_sum(hc)
            hc[red] = (b[c][red] + params.lam * s[red]) / diag[red]
            s = _neighbor_sum(hc)
            hc[black] = (b[c][black] + params.lam * s[black]) / diag[black]
            resid = b[c] - (diag * hc - params.lam * _neighbor_sum(hc))
            worst = max(worst, float(np.abs(resid).max()))
        residuals.append(worst)
        if worst < params.tol:
            break
    return scores, residuals


def gmrf_segment(stack, model, params):
    """Smoothed class-score labeling: argmax over the Gauss-Seidel score fields.

    Ties go to the lowest class index; with lambda = 0 the scores are the
    scaled log posteriors, so the labeling equals the mixture MAP.
    Returns (labels, residual_history).
    """
    scores, residuals = gmrf_scores(stack, model, params)
    labels = np.argmax(scores, axis=0)
    return LabelMap(labels, model.k), residuals


def write_energy_csv(history, path):
    """Energy breakdown history as CSV: sweep, likelihood, prior, total."""
    lines = ["sweep,likelihood_energy,prior_energy,total"]
    for i, e in enumerate(history):
        lines.append("%d,%.9g,%.9g,%.9g" % (i, e.likelihood_energy, e.prior_energy, e.total))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


def write_residual_csv(residuals, path):
    """Gauss-Seidel residual history as CSV: sweep, residual."""
    lines = ["sweep,residual"]
    for i, r in enumerate(residuals):
        lines.append("%d,%.9g" % (i + 1, r))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))
