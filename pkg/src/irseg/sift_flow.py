"""Dense SIFT descriptors and discrete displacement matching.

Each pixel gets a 128-d descriptor (4x4 spatial cells x 8 orientation
bins, Gaussian-weighted, trilinearly binned). Two descriptor fields are
matched by minimizing a truncated-L1 cost over integer displacements with
a bounded search radius: a data term on descriptor differences, a
magnitude penalty on the displacement, and a truncated-L1 smoothness term
over the 4-neighborhood.

The minimizer is min-sum loopy belief propagation on two coupled layers,
one for the horizontal and one for the vertical displacement; the
smoothness term decouples per layer while the data table couples the two
labels of a pixel. Spatial messages use the distance transform of the
truncated-L1 penalty, which is exact and linear in the label count. A
raster coordinate-descent polish follows BP, and the zero field is
returned whenever it beats the optimized one, so the result never costs
more than zero displacement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DimensionMismatchError, FrameTooSmallError

_N_CELLS = 4
_N_ORIENTATIONS = 8
DESCRIPTOR_DIM = _N_CELLS * _N_CELLS * _N_ORIENTATIONS
_CLAMP = 0.2


@dataclass(frozen=True)
class DescriptorField:
    """Per-pixel descriptors, shape (height, width, dim)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=float, order="C", copy=True)
        if data.ndim != 3:
            raise DimensionMismatchError(f"descriptor field must be 3-D, got {data.shape}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def dim(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape[:2]


@dataclass(frozen=True)
class SiftFlowParams:
    """Matching weights; unset alpha/t/d derive from eta and the search radius.

    These defaults are tuning parameters, not validated constants: alpha
    defaults to 2*eta*search_radius, t to 0.5*dim*0.04, d to 4*alpha.
    """

    eta: float = 0.005
    alpha: float = None
    t: float = None
    d: float = None
    search_radius: int = 5
    bp_iters: int = 40

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.search_radius < 1:
            raise ValueError("search_radius must be at least 1")
        if self.bp_iters < 1:
            raise ValueError("bp_iters must be at least 1")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 2.0 * self.eta * self.search_radius)
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.t is None:
            object.__setattr__(self, "t", 0.5 * DESCRIPTOR_DIM * 0.04)
        if self.t <= 0:
            raise ValueError("t must be positive")
        if self.d is None:
            object.__setattr__(self, "d", 4.0 * self.alpha if self.alpha > 0 else 1.0)
        if self.d <= 0:
            raise ValueError("d must be positive")


@dataclass(frozen=True)
class DisplacementField:
    """Integer per-pixel displacements; u horizontal, v vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.int64, order="C", copy=True)
        v = np.array(self.v, dtype=np.int64, order="C", copy=True)
        if u.ndim != 2 or u.shape != v.shape:
            raise DimensionMismatchError("u and v must be 2-D with equal shapes")
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zero(cls, height, width):
        z = np.zeros((height, width), dtype=np.int64)
        return cls(z, z)


def _gradients(image):
    padded = np.pad(image, 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return gx, gy


def _orientation_maps(image):
    gx, gy = _gradients(image)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    pos = (ang % (2.0 * np.pi)) / (2.0 * np.pi / _N_ORIENTATIONS)
    b0 = np.floor(pos).astype(int) % _N_ORIENTATIONS
    b1 = (b0 + 1) % _N_ORIENTATIONS
    frac = pos - np.floor(pos)
    maps = np.zeros((_N_ORIENTATIONS, *image.shape))
    for b in range(_N_ORIENTATIONS):
        maps[b] = mag * ((b0 == b) * (1.0 - frac) + (b1 == b) * frac)
    return maps


def _cell_kernels(cell_size):
    # One separable kernel per cell center offset. Centers are symmetric
    # about the pixel, so the window maps onto itself under 180-degree
    # rotation (cells swap pairwise).
    s = float(cell_size)
    centers = [(-1.5 + i) * s for i in range(_N_CELLS)]
    reach = int(np.ceil(2.5 * s))
    offsets = np.arange(-reach, reach + 1, dtype=float)
    sigma = 2.0 * s
    gauss = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    kernels = []
    for c in centers:
        tent = np.clip(1.0 - np.abs(offsets - c) / s, 0.0, None)
        kernels.append(tent * gauss)
    return kernels


def raw_descriptors(frame, cell_size=2):
    """Unnormalized orientation-histogram stacks, shape (h, w, 128).

    Channel layout: index = (cell_row * 4 + cell_col) * 8 + orientation.
    """
    if cell_size < 1:
        raise ValueError("cell_size must be at least 1")
    h, w = frame.shape
    window = _N_CELLS * cell_size
    if min(h, w) < window:
        raise FrameTooSmallError(f"frame {h}x{w} is smaller than the {window}-pixel descriptor window")
    omaps = _orientation_maps(frame.data)
    kernels = _cell_kernels(cell_size)
    desc = np.empty((h, w, DESCRIPTOR_DIM))
    for b in range(_N_ORIENTATIONS):
        col_passes = [correlate1d(omaps[b], k, axis=1, mode="nearest") for k in kernels]
        for cy, ky in enumerate(kernels):
            for cx in range(_N_CELLS):
                cell = correlate1d(col_passes[cx], ky, axis=0, mode="nearest")
                desc[:, :, (cy * _N_CELLS + cx) * _N_ORIENTATIONS + b] = cell
    return desc


def _l2_normalize(desc):
    norms = np.linalg.norm(desc, axis=-1, keepdims=True)
    safe = np.where(norms > 1e-12, norms, 1.0)
    out = desc / safe
    out[(norms <= 1e-12)[..., 0]] = 0.0
    return out


def dense_sift(frame, cell_size=2):
    """Per-pixel SIFT descriptors: histograms, L2 norm, clamp at 0.2, renorm.

    Patches with no gradient energy yield all-zero descriptors.
    """
    desc = _l2_normalize(raw_descriptors(frame, cell_size))
    desc = np.minimum(desc, _CLAMP)
    return DescriptorField(_l2_normalize(desc))


def _label_offsets(radius):
    return np.arange(-radius, radius + 1)


def _data_cost(d1, d2, params):
    """(h, w, n, n) truncated-L1 descriptor costs indexed [y, x, vi, ui]."""
    h, w = d1.shape
    offs = _label_offsets(params.search_radius)
    n = offs.size
    cost = np.full((h, w, n, n), params.t)
    a = d1.data
    b = d2.data
    for vi, dv in enumerate(offs):
        ys = slice(max(0, -dv), h - max(0, dv))
        yt = slice(max(0, dv), h + min(0, dv))
        for ui, du in enumerate(offs):
            xs = slice(max(0, -du), w - max(0, du))
            xt = slice(max(0, du), w + min(0, du))
            l1 = np.abs(a[ys, xs] - b[yt, xt]).sum(axis=-1)
            cost[ys, xs, vi, ui] = np.minimum(l1, params.t)
    return cost


def siftflow_energy(d1, d2, disp, params):
    """Total matching cost of a displacement field between two descriptor fields."""
    if d1.shape != d2.shape or d1.dim != d2.dim:
        raise DimensionMismatchError("descriptor fields differ in size")
    if disp.shape != d1.shape:
        raise DimensionMismatchError("displacement field does not match the descriptors")
    r = params.search_radius
    if np.abs(disp.u).max(initial=0) > r or np.abs(disp.v).max(initial=0) > r:
        raise ValueError(f"displacements exceed the search radius {r}")
    h, w = d1.shape
    yy, xx = np.indices((h, w))
    ty = yy + disp.v
    tx = xx + disp.u
    inside = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
    data = np.full((h, w), params.t)
    diffs = np.abs(d1.data[inside] - d2.data[ty[inside], tx[inside]]).sum(axis=-1)
    data[inside] = np.minimum(diffs, params.t)
    energy = float(data.sum())
    energy += float(params.eta * (np.abs(disp.u).sum() + np.abs(disp.v).sum()))
    for field in (disp.u, disp.v):
        dh = np.abs(field[:, 1:] - field[:, :-1])
        dv = np.abs(field[1:, :] - field[:-1, :])
        energy += float(np.minimum(params.alpha * dh, params.d).sum())
        energy += float(np.minimum(params.alpha * dv, params.d).sum())
    return energy


def dt_truncated_l1(values, slope, cap):
    """Exact min-sum message through a truncated-L1 pairwise term.

    For each output label l returns min over l' of
    values[l'] + min(slope * |l - l'|, cap), computed with the two-pass
    distance transform plus a final cap against the global minimum.
    Operates on the last axis.
    """
    out = np.array(values, dtype=float, copy=True)
    n = out.shape[-1]
    for i in range(1, n):
        np.minimum(out[..., i], out[..., i - 1] + slope, out=out[..., i])
    for i in range(n - 2, -1, -1):
        np.minimum(out[..., i], out[..., i + 1] + slope, out=out[..., i])
    cap_at = np.min(values, axis=-1, keepdims=True) + cap
    return np.minimum(out, cap_at)


def bruteforce_message(values, slope, cap):
    """Reference min-sum message; quadratic in the label count."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    labels = np.arange(n)
    pairwise = np.minimum(slope * np.abs(labels[:, None] - labels[None, :]), cap)
    return np.min(values[..., None, :] + pairwise, axis=-1)


def _tie_order(offsets):
    # Preferred label order for argmin ties: small magnitude, then value.
    return sorted(range(offsets.size), key=lambda i: (abs(int(offsets[i])), int(offsets[i])))


def _argmin_ordered(beliefs, order):
    reordered = beliefs[..., order]
    idx = np.argmin(reordered, axis=-1)
    return np.asarray(order)[idx]


def _icm_polish(cost, unary_u, unary_v, ui, vi, params, offsets, max_sweeps=10):
    # Raster coordinate descent on the joint energy; candidates ordered so
    # ties prefer small displacements.
    h, w, n, _ = cost.shape
    alpha, d = params.alpha, params.d
    flat_order = sorted(
        range(n * n),
        key=lambda f: (
            abs(int(offsets[f % n])) + abs(int(offsets[f // n])),
            int(offsets[f % n]),
            int(offsets[f // n]),
        ),
    )
    flat_order = np.asarray(flat_order)
    pair_pen = np.minimum(alpha * np.abs(offsets[:, None] - offsets[None, :]), d)
    for _ in range(max_sweeps):
        changed = 0
        for y in range(h):
            for x in range(w):
                pen_u = unary_u.copy()
                pen_v = unary_v.copy()
                if x > 0:
                    pen_u += pair_pen[:, ui[y, x - 1]]
                    pen_v += pair_pen[:, vi[y, x - 1]]
                if x < w - 1:
                    pen_u += pair_pen[:, ui[y, x + 1]]
                    pen_v += pair_pen[:, vi[y, x + 1]]
                if y > 0:
                    pen_u += pair_pen[:, ui[y - 1, x]]
                    pen_v += pair_pen[:, vi[y - 1, x]]
                if y < h - 1:
                    pen_u += pair_pen[:, ui[y + 1, x]]
                    pen_v += pair_pen[:, vi[y + 1, x]]
                local = cost[y, x] + pen_v[:, None] + pen_u[None, :]
                flat = local.ravel()[flat_order]
                best_pos = int(np.argmin(flat))
                best_flat = flat_order[best_pos]
                cur_flat = vi[y, x] * n + ui[y, x]
                if flat[best_pos] < local.ravel()[cur_flat]:
                    vi[y, x] = best_flat // n
                    ui[y, x] = best_flat % n
                    changed += 1
        if changed == 0:
            break
    return ui, vi


def match_siftflow(d1, d2, params=SiftFlowParams()):
    """Displacement field aligning d1 to d2 under the truncated-L1 cost.

    Dual-layer min-sum loopy BP with synchronous message updates and
    distance-transform spatial messages, followed by a coordinate-descent
    polish; falls back to the zero field if that has lower energy.
    """
    if d1.shape != d2.shape or d1.dim != d2.dim:
        raise DimensionMismatchError("descriptor fields differ in size")
    h, w = d1.shape
    offs = _label_offsets(params.search_radius)
    n = offs.size
    cost = _data_cost(d1, d2, params)
    unary = params.eta * np.abs(offs).astype(float)
    # Incoming messages per layer, keyed by the direction they arrive from.
    dirs = ("up", "down", "left", "right")
    msgs = {layer: {d: np.zeros((h, w, n)) for d in dirs} for layer in ("u", "v")}
    inter = {layer: np.zeros((h, w, n)) for layer in ("u", "v")}

    def spatial_sum(layer):
        m = msgs[layer]
        return m["up"] + m["down"] + m["left"] + m["right"]

    for _ in range(params.bp_iters):
        s_u = spatial_sum("u")
        s_v = spatial_sum("v")
        # Inter-layer messages couple through the data table.
        new_inter_u = np.min(cost + (unary[None, None, :, None] + s_v[..., None]), axis=2)
        new_inter_v = np.min(cost + (unary[None, None, None, :] + s_u[..., None, :]), axis=3)
        new_msgs = {layer: {} for layer in ("u", "v")}
        for layer, s_all in (("u", s_u), ("v", s_v)):
            base = unary[None, None, :] + inter[layer] + s_all
            m = msgs[layer]
            out = {d: np.zeros((h, w, n)) for d in dirs}
            out["left"][:, 1:, :] = dt_truncated_l1(
                base[:, :-1, :] - m["right"][:, :-1, :], params.alpha, params.d
            )
            out["right"][:, :-1, :] = dt_truncated_l1(
                base[:, 1:, :] - m["left"][:, 1:, :], params.alpha, params.d
            )
            out["up"][1:, :, :] = dt_truncated_l1(
                base[:-1, :, :] - m["down"][:-1, :, :], params.alpha, params.d
            )
            out["down"][:-1, :, :] = dt_truncated_l1(
                base[1:, :, :] - m["up"][1:, :, :], params.alpha, params.d
            )
            for d in dirs:
                out[d] -= out[d].min(axis=-1, keepdims=True)
            new_msgs[layer] = out
        msgs = new_msgs
        inter = {"u": new_inter_u - new_inter_u.min(axis=-1, keepdims=True),
                 "v": new_inter_v - new_inter_v.min(axis=-1, keepdims=True)}

    order = _tie_order(offs)
    belief_u = unary[None, None, :] + inter["u"] + spatial_sum("u")
    belief_v = unary[None, None, :] + inter["v"] + spatial_sum("v")
    ui = _argmin_ordered(belief_u, order)
    vi = _argmin_ordered(belief_v, order)
    ui, vi = _icm_polish(cost, unary, unary, ui, vi, params, offs)
    result = DisplacementField(offs[ui], offs[vi])
    zero = DisplacementField.zero(h, w)
    if siftflow_energy(d1, d2, result, params) > siftflow_energy(d1, d2, zero, params):
        return zero
    return result


def displacement_magnitude(disp):
    """Euclidean magnitude of the displacement, as a float array."""
    return np.hypot(disp.u.astype(float), disp.v.astype(float))
