"""Deterministic synthetic IR scenes with exact per-pixel ground truth.

Scenes place a hot translating blob (fire) and an expanding, drifting
plume (smoke) over a dim background. Region textures are smooth random
fields sampled in region-local coordinates, so they advect exactly with
the region motion: the brightness-constancy assumption behind optical
flow genuinely holds, the expanding plume produces positive divergence,
and only the small per-frame sensor noise is temporally incoherent.

The smoke texture carries sparse bright clumps. On scenes without fire
this gives the forced third cluster a small, meaningful population (hot
smoke pockets) instead of letting it bisect the background, which would
make the intensity-ordering semantics rule meaningless.

The pinned five-scene benchmark suite gives the package a stable,
regenerable quantitative target in place of real IR footage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .errors import InvalidSpecError, UnknownSceneError
from .image import BACKGROUND, CLASS_NAMES, FIRE, SMOKE, FlowField, Frame, LabelMap
from .io import atomic_write_bytes, save_frame_pgm, save_labelmap

_MIN_BAND_GAP = 0.15
_LATTICE = 96  # periodic texture lattice edge, pixels
_TEXTURE_SIGMA = 1.2
_CLUMP_EDGE = 0.08  # clump brightness ramps to full gain over this field range


@dataclass(frozen=True)
class BlobSpec:
    """Translating disk of elevated intensity (the fire region)."""

    center: tuple  # (y, x) at frame 0
    velocity: tuple  # (vy, vx) pixels/frame
    radius: float
    intensity: float
    flicker: float = 0.0  # sinusoidal amplitude on the base intensity
    flicker_period: float = 6.0
    texture_amp: float = 0.0  # advected mottling amplitude
    feather: float = 0.0  # width of the soft intensity falloff inside the rim


@dataclass(frozen=True)
class PlumeSpec:
    """Drifting disk whose radius grows linearly (the smoke region).

    ``swirl`` rotates the internal texture about the plume center each
    frame; it adds strong interior motion without moving the region
    boundary, the way churning smoke looks to a flow estimator.
    """

    source: tuple  # (y, x) at frame 0
    drift: tuple  # (vy, vx) pixels/frame
    radius0: float
    growth: float  # pixels/frame; positive growth means positive divergence
    intensity: float
    texture_amp: float = 0.0  # advected mottling amplitude
    texture_scale: float = _TEXTURE_SIGMA  # mottling correlation length, lattice px
    clump_gain: float = 0.0  # extra brightness of sparse hot pockets
    clump_fraction: float = 0.08  # areal fraction of the plume that clumps cover
    swirl: float = 0.0  # radians/frame of internal rotation
    feather: float = 0.0  # width of the soft intensity falloff inside the rim


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    frames: int
    seed: int
    fire: BlobSpec
    smoke: PlumeSpec
    background: float = 0.1
    background_texture_amp: float = 0.0  # static background mottling
    background_texture_scale: float = 0.8  # fine grain pins the flow of the static background
    noise_std: float = 0.0  # per-frame sensor noise
    jitter_amp: float = 0.0  # global sinusoidal camera shake, pixels

    def __post_init__(self):
        if self.frames < 2:
            raise InvalidSpecError("a scene needs at least 2 frames")
        if self.width < 2 or self.height < 2:
            raise InvalidSpecError("scene must be at least 2x2")
        if not 0.0 <= self.smoke.clump_fraction < 1.0:
            raise InvalidSpecError("clump_fraction must lie in [0, 1)")
        lowest_fire = self.fire.intensity - abs(self.fire.flicker)
        if self.smoke.intensity - self.background < _MIN_BAND_GAP:
            raise InvalidSpecError("smoke band must sit at least 0.15 above background")
        if lowest_fire - self.smoke.intensity < _MIN_BAND_GAP:
            raise InvalidSpecError("fire band must sit at least 0.15 above smoke, flicker included")


def _jitter(spec, t):
    if spec.jitter_amp == 0.0:
        return 0.0, 0.0
    return (
        spec.jitter_amp * np.sin(2.0 * np.pi * t / 5.0),
        spec.jitter_amp * np.cos(2.0 * np.pi * t / 3.0),
    )


def _fire_center(spec, t):
    jy, jx = _jitter(spec, t)
    return (
        spec.fire.center[0] + spec.fire.velocity[0] * t + jy,
        spec.fire.center[1] + spec.fire.velocity[1] * t + jx,
    )


def _smoke_center(spec, t):
    jy, jx = _jitter(spec, t)
    return (
        spec.smoke.source[0] + spec.smoke.drift[0] * t + jy,
        spec.smoke.source[1] + spec.smoke.drift[1] * t + jx,
    )


def _smoke_radius(spec, t):
    return spec.smoke.radius0 + spec.smoke.growth * t


def _disk(yy, xx, cy, cx, r):
    if r <= 0:
        return np.zeros(yy.shape, dtype=bool)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _masks(spec, t):
    yy, xx = np.indices((spec.height, spec.width), dtype=float)
    fy, fx = _fire_center(spec, t)
    fire = _disk(yy, xx, fy, fx, spec.fire.radius)
    sy, sx = _smoke_center(spec, t)
    smoke = _disk(yy, xx, sy, sx, _smoke_radius(spec, t)) & ~fire
    return fire, smoke


def _smooth_field(rng, sigma=_TEXTURE_SIGMA):
    """Periodic smooth random field on the texture lattice, scaled to [-1, 1].

    Two correlation scales are mixed so the field keeps usable gradients
    everywhere instead of going flat between blobs.
    """
    coarse = gaussian_filter(rng.standard_normal((_LATTICE, _LATTICE)), sigma, mode="wrap")
    fine = gaussian_filter(rng.standard_normal((_LATTICE, _LATTICE)), 1.0, mode="wrap")
    smooth = 0.7 * coarse / max(np.abs(coarse).max(), 1e-12) + 0.3 * fine / max(np.abs(fine).max(), 1e-12)
    smooth -= smooth.mean()
    peak = np.abs(smooth).max()
    return smooth / peak if peak > 0 else smooth


def _sample(field, ys, xs):
    """Bilinear sample of a periodic lattice field at fractional coordinates."""
    coords = np.stack([np.asarray(ys, dtype=float).ravel(), np.asarray(xs, dtype=float).ravel()])
    vals = map_coordinates(field, coords, order=1, mode="grid-wrap")
    return vals.reshape(np.shape(ys))


class _Textures:
    """Per-scene random fields, generated once from the scene seed."""

    def __init__(self, spec, rng):
        self.background = _smooth_field(rng, sigma=spec.background_texture_scale)
        self.smoke = _smooth_field(rng, sigma=spec.smoke.texture_scale)
        self.clumps = _smooth_field(rng, sigma=2.5)
        self.fire = _smooth_field(rng)
        # Clump threshold fixed on the lattice so the covered area is stable.
        frac = spec.smoke.clump_fraction
        self.clump_cut = np.quantile(self.clumps, 1.0 - frac) if frac > 0 else np.inf


def _render(spec, tex, t, rng):
    yy, xx = np.indices((spec.height, spec.width), dtype=float)
    fire_mask, smoke_mask = _masks(spec, t)
    jy, jx = _jitter(spec, t)

    img = np.full((spec.height, spec.width), spec.background)
    if spec.background_texture_amp > 0:
        img += spec.background_texture_amp * _sample(tex.background, yy - jy, xx - jx)

    if smoke_mask.any():
        sy, sx = _smoke_center(spec, t)
        scale = spec.smoke.radius0 / _smoke_radius(spec, t)
        theta = spec.smoke.swirl * t
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        dy = yy[smoke_mask] - sy
        dx = xx[smoke_mask] - sx
        # Sample in de-rotated plume coordinates so the texture spins with
        # the swirl while staying glued to the drift and expansion.
        qx = (dx * cos_t + dy * sin_t) * scale + _LATTICE / 2.0
        qy = (-dx * sin_t + dy * cos_t) * scale + _LATTICE / 2.0
        vals = spec.smoke.intensity + spec.smoke.texture_amp * _sample(tex.smoke, qy, qx)
        if spec.smoke.clump_gain > 0:
            # Soft-edged hot pockets: a steep but smooth ramp past the
            # coverage threshold, so clump borders do not spike the
            # estimated flow derivatives.
            excess = (_sample(tex.clumps, qy, qx) - tex.clump_cut) / _CLUMP_EDGE
            vals = vals + spec.smoke.clump_gain * np.clip(excess, 0.0, 1.0)
        if spec.smoke.feather > 0:
            r = _smoke_radius(spec, t)
            dist = np.sqrt(dy * dy + dx * dx)
            w = np.clip((r - dist) / spec.smoke.feather, 0.0, 1.0)
            vals = img[smoke_mask] * (1.0 - w) + vals * w
        img[smoke_mask] = vals

    if fire_mask.any():
        fy, fx = _fire_center(spec, t)
        flick = spec.fire.flicker * np.sin(2.0 * np.pi * t / spec.fire.flicker_period)
        fdy = yy[fire_mask] - fy
        fdx = xx[fire_mask] - fx
        vals = np.full(int(fire_mask.sum()), spec.fire.intensity + flick)
        if spec.fire.texture_amp > 0:
            qy = fdy + _LATTICE / 2.0
            qx = fdx + _LATTICE / 2.0
            vals = vals + spec.fire.texture_amp * _sample(tex.fire, qy, qx)
        if spec.fire.feather > 0:
            dist = np.sqrt(fdy * fdy + fdx * fdx)
            w = np.clip((spec.fire.radius - dist) / spec.fire.feather, 0.0, 1.0)
            vals = img[fire_mask] * (1.0 - w) + vals * w
        img[fire_mask] = vals

    if spec.noise_std > 0:
        img = img + rng.normal(0.0, spec.noise_std, img.shape)

    truth = np.full((spec.height, spec.width), BACKGROUND, dtype=np.int64)
    truth[smoke_mask] = SMOKE
    truth[fire_mask] = FIRE
    return Frame(np.clip(img, 0.0, 1.0)), LabelMap(truth, 3)


def generate(spec):
    """Render a scene as (frames, truths), both lists of length spec.frames.

    Deterministic for a fixed seed. Fire takes precedence over smoke in
    the ground truth; intensities are clamped to [0, 1].
    """
    rng = np.random.default_rng(spec.seed)
    tex = _Textures(spec, rng)
    frames = []
    truths = []
    for t in range(spec.frames):
        frame, truth = _render(spec, tex, t, rng)
        frames.append(frame)
        truths.append(truth)
    return frames, truths


def analytic_flow(spec, t):
    """Exact displacement field from frame t to t+1, from the scene geometry.

    Fire pixels move with the blob, smoke pixels with the drift plus the
    radial expansion of the plume, background with the camera jitter only.
    The rendered textures advect with exactly this field; only the sensor
    noise violates brightness constancy.
    """
    if not 0 <= t < spec.frames - 1:
        raise ValueError(f"t must be in [0, {spec.frames - 2}]")
    fire_mask, smoke_mask = _masks(spec, t)
    jy0, jx0 = _jitter(spec, t)
    jy1, jx1 = _jitter(spec, t + 1)
    djy, djx = jy1 - jy0, jx1 - jx0
    u = np.full((spec.height, spec.width), djx)
    v = np.full((spec.height, spec.width), djy)
    u[fire_mask] = spec.fire.velocity[1] + djx
    v[fire_mask] = spec.fire.velocity[0] + djy
    yy, xx = np.indices((spec.height, spec.width), dtype=float)
    sy, sx = _smoke_center(spec, t)
    r_now = _smoke_radius(spec, t)
    r_next = _smoke_radius(spec, t + 1)
    grow = r_next / r_now if r_now > 0 else 1.0
    omega = spec.smoke.swirl
    cos_w, sin_w = np.cos(omega), np.sin(omega)
    dy = yy[smoke_mask] - sy
    dx = xx[smoke_mask] - sx
    # Material points map as p - c -> grow * R(omega) (p - c).
    u[smoke_mask] = spec.smoke.drift[1] + djx + grow * (cos_w * dx - sin_w * dy) - dx
    v[smoke_mask] = spec.smoke.drift[0] + djy + grow * (sin_w * dx + cos_w * dy) - dy
    return FlowField(u, v)


def _suite():
    # Pinned benchmark scenes, 64x64x20 each. Design notes, learned the
    # hard way against the clustering stack:
    # - Class masses stay balanced enough (background roughly 55-70%)
    #   that slicing the majority class never beats keeping smoke and
    #   fire apart.
    # - Background mottling is fine-grained and static, which pins the
    #   flow estimate to zero right up to the region boundaries.
    # - Regions mostly expand or churn rather than translate; growth
    #   feeds the divergence channel while keeping occlusion artifacts
    #   thin, and feathered plume rims dissolve the leftover rim motion.
    # - The smoke carries deep large-scale dark lobes plus bright soft
    #   clumps: intensity alone genuinely confuses those with background
    #   and fire, which is exactly what the motion channels disambiguate.
    common = dict(width=64, height=64, frames=20)
    return {
        "fire_small": SceneSpec(
            **common,
            seed=101,
            fire=BlobSpec(center=(15.0, 47.0), velocity=(0.04, 0.03), radius=10.0, intensity=0.72, flicker=0.015, texture_amp=0.05),
            smoke=PlumeSpec(source=(42.0, 24.0), drift=(0.04, 0.03), radius0=14.0, growth=0.3, intensity=0.28, texture_amp=0.2, texture_scale=3.0, clump_gain=0.28, clump_fraction=0.12, swirl=0.05, feather=2.5),
            background=0.1,
            background_texture_amp=0.08,
            noise_std=0.01,
            jitter_amp=0.4,
        ),
        "fire_medium": SceneSpec(
            **common,
            seed=202,
            fire=BlobSpec(center=(18.0, 43.0), velocity=(0.04, -0.03), radius=11.0, intensity=0.74, flicker=0.015, texture_amp=0.06),
            smoke=PlumeSpec(source=(42.0, 22.0), drift=(0.03, 0.04), radius0=14.0, growth=0.4, intensity=0.28, texture_amp=0.2, texture_scale=3.5, clump_gain=0.26, clump_fraction=0.11, swirl=0.05, feather=3.0),
            background=0.11,
            background_texture_amp=0.08,
            noise_std=0.018,
        ),
        "smoke_only": SceneSpec(
            **common,
            seed=311,
            fire=BlobSpec(center=(8.0, 8.0), velocity=(0.02, 0.02), radius=0.0, intensity=0.9),
            smoke=PlumeSpec(source=(32.0, 30.0), drift=(0.04, 0.03), radius0=18.0, growth=0.3, intensity=0.3, texture_amp=0.12, texture_scale=3.0, clump_gain=0.3, clump_fraction=0.12, swirl=0.04, feather=2.5),
            background=0.1,
            background_texture_amp=0.08,
            noise_std=0.01,
        ),
        "fire_smoke_basic": SceneSpec(
            **common,
            seed=404,
            fire=BlobSpec(center=(17.0, 44.0), velocity=(0.03, 0.02), radius=14.0, intensity=0.74, flicker=0.015, texture_amp=0.06),
            smoke=PlumeSpec(source=(40.0, 24.0), drift=(0.04, 0.03), radius0=16.0, growth=0.4, intensity=0.26, texture_amp=0.24, texture_scale=4.0, clump_gain=0.28, clump_fraction=0.12, swirl=0.05, feather=4.0),
            background=0.1,
            background_texture_amp=0.08,
            noise_std=0.02,
        ),
        "camera_jitter": SceneSpec(
            **common,
            seed=505,
            fire=BlobSpec(center=(16.0, 45.0), velocity=(0.03, -0.02), radius=10.0, intensity=0.73, flicker=0.015, texture_amp=0.06),
            smoke=PlumeSpec(source=(42.0, 23.0), drift=(0.03, 0.04), radius0=14.0, growth=0.35, intensity=0.28, texture_amp=0.22, texture_scale=3.0, clump_gain=0.26, clump_fraction=0.11, swirl=0.05, feather=3.0),
            background=0.1,
            background_texture_amp=0.08,
            noise_std=0.016,
            jitter_amp=0.7,
        ),
    }


BENCHMARK_SCENE_NAMES = tuple(sorted(_suite()))


def benchmark_scene(name):
    """Look up one of the pinned benchmark scenes by name."""
    suite = _suite()
    if name not in suite:
        raise UnknownSceneError(f"unknown scene {name!r}; valid names: {', '.join(sorted(suite))}")
    return suite[name]


def write_scene(spec, out_dir, name="scene"):
    """Write a scene as 16-bit PGM frames, truth PNGs, and a manifest JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, truths = generate(spec)
    entries = []
    for i, (frame, truth) in enumerate(zip(frames, truths)):
        frame_name = f"frame_{i:04d}.pgm"
        truth_name = f"truth_{i:04d}.png"
        save_frame_pgm(frame, out_dir / frame_name, bits=16)
        save_labelmap(truth, out_dir / truth_name)
        entries.append({"frame": frame_name, "truth": truth_name})
    manifest = {
        "version": 1,
        "scene": name,
        "seed": spec.seed,
        "width": spec.width,
        "height": spec.height,
        "frames": spec.frames,
        "class_names": list(CLASS_NAMES),
        "files": entries,
    }
    atomic_write_bytes(out_dir / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("ascii"))
    return out_dir / "manifest.json"
