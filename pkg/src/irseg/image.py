"""Core raster types: frames, scalar fields, flow fields, feature stacks, label maps.

Every raster in the package is stored row-major with ``[row, col]`` (i.e.
``[y, x]``) indexing; a single convention avoids axis swaps between image
and flow code. All types are immutable after construction: their arrays
are defensive copies with the writeable flag cleared, so instances can be
shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError

# Semantic class indices, ordered by expected radiometric intensity.
BACKGROUND = 0
SMOKE = 1
FIRE = 2
CLASS_NAMES = ("background", "smoke", "fire")


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, order="C", copy=True)
    out.flags.writeable = False
    return out


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class Frame:
    """Single-channel intensity image with values normalized to [0, 1].

    Frames must be at least 2x2 because the gradient stencils need two
    samples along each axis.
    """

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, float)
        if data.ndim != 2:
            raise DimensionMismatchError(f"frame data must be 2-D, got shape {data.shape}")
        if data.shape[0] < 2 or data.shape[1] < 2:
            raise ValueError(f"frame must be at least 2x2, got {data.shape}")
        _check_finite(data, "frame")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class ScalarField:
    """One real value per pixel (divergence, flow magnitude, derivatives...)."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, float)
        if data.ndim != 2:
            raise DimensionMismatchError(f"scalar field must be 2-D, got shape {data.shape}")
        _check_finite(data, "scalar field")
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class FlowField:
    """Per-pixel 2-D motion field; ``u`` is horizontal (x), ``v`` vertical (y), in pixels/frame."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = _frozen(self.u, float)
        v = _frozen(self.v, float)
        if u.ndim != 2 or u.shape != v.shape:
            raise DimensionMismatchError(f"u and v must be 2-D with equal shapes, got {u.shape} and {v.shape}")
        _check_finite(u, "flow u")
        _check_finite(v, "flow v")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]

    @property
    def shape(self):
        return self.u.shape


@dataclass(frozen=True)
class FeatureStack:
    """Per-pixel feature vectors, shape (height, width, dims).

    ``channel_names`` is part of the contract: models trained on a stack
    record the names and refuse stacks whose channels differ.
    """

    data: np.ndarray
    channel_names: tuple

    def __post_init__(self):
        data = _frozen(self.data, float)
        names = tuple(str(n) for n in self.channel_names)
        if data.ndim != 3:
            raise DimensionMismatchError(f"feature stack must be 3-D, got shape {data.shape}")
        if data.shape[2] < 1:
            raise ValueError("feature stack needs at least one channel")
        if len(names) != data.shape[2]:
            raise DimensionMismatchError(
                f"{len(names)} channel names for {data.shape[2]} channels"
            )
        _check_finite(data, "feature stack")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", names)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def dims(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape[:2]

    def pixels(self):
        """All feature vectors as an (n_pixels, dims) array, row-major order."""
        return self.data.reshape(-1, self.dims)


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class indices in {0..k-1}."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = _frozen(self.labels, np.int64)
        if labels.ndim != 2:
            raise DimensionMismatchError(f"label map must be 2-D, got shape {labels.shape}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", labels)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True)
class ClassSemantics:
    """Bijective mapping from the 3 cluster indices to background/smoke/fire.

    ``cluster_to_class[c]`` is the semantic index (BACKGROUND, SMOKE or
    FIRE) of cluster ``c``.
    """

    cluster_to_class: tuple

    def __post_init__(self):
        mapping = tuple(int(c) for c in self.cluster_to_class)
        if sorted(mapping) != [BACKGROUND, SMOKE, FIRE]:
            raise ValueError(f"mapping must be a permutation of (0, 1, 2), got {mapping}")
        object.__setattr__(self, "cluster_to_class", mapping)

    @classmethod
    def identity(cls):
        return cls((BACKGROUND, SMOKE, FIRE))

    def class_of(self, cluster):
        return self.cluster_to_class[cluster]

    def cluster_of(self, semantic_class):
        return self.cluster_to_class.index(semantic_class)

    def apply(self, labelmap):
        """Relabel a cluster-space LabelMap into semantic space."""
        if labelmap.k != 3:
            raise DimensionMismatchError(f"semantics require k=3 label maps, got k={labelmap.k}")
        lut = np.asarray(self.cluster_to_class, dtype=np.int64)
        return LabelMap(lut[labelmap.labels], 3)
