"""Per-pixel feature construction and training-phase channel statistics.

The fused observation for each pixel is [intensity, flow magnitude,
divergence, sift-flow magnitude], restricted to the enabled channels and
always in that order. Channels are z-scored against statistics pooled
over the training frames before any clustering, so no single channel
dominates the Euclidean geometry by virtue of its units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelMismatchError, DimensionMismatchError, MissingChannelError
from .image import FeatureStack, ScalarField
from .io import atomic_write_bytes
from .optical_flow import flow_magnitude

_DEGENERATE_STD = 1e-12

CHANNEL_ORDER = ("intensity", "flow_mag", "divergence", "sift_mag")


@dataclass(frozen=True)
class FeatureConfig:
    """Which channels to fuse and how many leading frames form the training set."""

    use_intensity: bool = True
    use_flow_mag: bool = True
    use_divergence: bool = True
    use_sift_flow: bool = False
    training_frames: int = 10

    def __post_init__(self):
        if not (self.use_intensity or self.use_flow_mag or self.use_divergence or self.use_sift_flow):
            raise ValueError("at least one feature channel must be enabled")
        if self.training_frames < 2:
            raise ValueError("training needs at least 2 frames (flow uses consecutive pairs)")

    @property
    def channel_names(self):
        flags = (self.use_intensity, self.use_flow_mag, self.use_divergence, self.use_sift_flow)
        return tuple(name for name, on in zip(CHANNEL_ORDER, flags) if on)


@dataclass(frozen=True)
class ChannelStats:
    """Pooled per-channel mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray
    frame_count: int
    channel_names: tuple = ()

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).ravel()
        std = np.array(self.std, dtype=float).ravel()
        if mean.shape != std.shape:
            raise DimensionMismatchError("mean and std must have equal lengths")
        if np.any(std < 0):
            raise ValueError("std must be non-negative")
        if self.frame_count < 1:
            raise ValueError("frame_count must be at least 1")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))


def divergence(flow):
    """Divergence du/dx + dv/dy of a flow field.

    Central differences at interior pixels, one-sided at borders; exact
    for fields that are linear in the coordinates.
    """
    du_dx = np.gradient(flow.u, axis=1, edge_order=1)
    dv_dy = np.gradient(flow.v, axis=0, edge_order=1)
    return ScalarField(du_dx + dv_dy)


def build_feature_stack(frame, flow=None, div=None, sift_mag=None, cfg=FeatureConfig()):
    """Fuse the enabled channels for one frame into a FeatureStack.

    Channel order is fixed as [intensity, flow_mag, divergence, sift_mag],
    including only the enabled ones.
    """
    channels = []
    names = []
    if cfg.use_intensity:
        channels.append(frame.data)
        names.append("intensity")
    if cfg.use_flow_mag:
        if flow is None:
            raise MissingChannelError("flow_mag enabled but no flow field supplied")
        channels.append(flow_magnitude(flow).data)
        names.append("flow_mag")
    if cfg.use_divergence:
        if div is None:
            raise MissingChannelError("divergence enabled but no divergence field supplied")
        channels.append(div.data)
        names.append("divergence")
    if cfg.use_sift_flow:
        if sift_mag is None:
            raise MissingChannelError("sift_flow enabled but no sift magnitude supplied")
        channels.append(sift_mag.data)
        names.append("sift_mag")
    base = frame.shape
    for name, ch in zip(names, channels):
        if ch.shape != base:
            raise DimensionMismatchError(f"channel {name} is {ch.shape}, frame is {base}")
    return FeatureStack(np.stack(channels, axis=-1), tuple(names))


def fit_channel_stats(stacks):
    """Pooled per-channel mean and population std over all pixels of all stacks."""
    if not stacks:
        raise ValueError("need at least one feature stack")
    names = stacks[0].channel_names
    dims = stacks[0].dims
    for s in stacks:
        if s.dims != dims or s.channel_names != names:
            raise DimensionMismatchError("stacks disagree on channels")
    pooled = np.concatenate([s.pixels() for s in stacks], axis=0)
    return ChannelStats(
        mean=pooled.mean(axis=0),
        std=pooled.std(axis=0),
        frame_count=len(stacks),
        channel_names=names,
    )


def normalize(stack, stats):
    """Z-score each channel; channels with vanishing std map to zero."""
    if stack.dims != stats.mean.size:
        raise DimensionMismatchError(
            f"stack has {stack.dims} channels, stats describe {stats.mean.size}"
        )
    if stats.channel_names and stats.channel_names != stack.channel_names:
        raise ChannelMismatchError(
            f"stack channels {stack.channel_names} != stats channels {stats.channel_names}"
        )
    std = stats.std.copy()
    degenerate = std < _DEGENERATE_STD
    std[degenerate] = 1.0
    z = (stack.data - stats.mean) / std
    if degenerate.any():
        z[..., degenerate] = 0.0
    return FeatureStack(z, stack.channel_names)


def export_feature_csv(stack, path):
    """Debug dump: one CSV row per pixel as row, col, then the channel values."""
    lines = ["row,col," + ",".join(stack.channel_names)]
    data = stack.data
    for y in range(stack.height):
        for x in range(stack.width):
            vals = ",".join("%.9g" % v for v in data[y, x])
            lines.append(f"{y},{x},{vals}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))
