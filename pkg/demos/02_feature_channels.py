"""Inspect the per-class statistics of the fused feature channels.

Generates a benchmark scene, computes the [intensity, flow magnitude,
divergence] stack for one frame, and prints what each channel looks like
inside the true background, smoke, and fire regions. This is the signal
the clustering stages work from.
"""

import numpy as np

from irseg import FeatureConfig, benchmark_scene, generate
from irseg.pipeline import PipelineConfig, frame_features

spec = benchmark_scene("fire_smoke_basic")
frames, truths = generate(spec)
cfg = PipelineConfig(features=FeatureConfig())

index = 12
stack, flow = frame_features(frames, index, cfg)
truth = truths[index].labels

print(f"scene fire_smoke_basic, frame {index}, channels {stack.channel_names}\n")
print(f"{'class':>10} " + " ".join(f"{n:>20}" for n in stack.channel_names))
for cls, name in enumerate(("background", "smoke", "fire")):
    mask = truth == cls
    if not mask.any():
        continue
    cells = []
    for c in range(stack.dims):
        vals = stack.data[:, :, c][mask]
        cells.append(f"{vals.mean():>9.4f} +-{vals.std():>7.4f}")
    print(f"{name:>10} " + " ".join(f"{cell:>20}" for cell in cells))

print(
    "\nIntensity separates the three bands strongly; the motion channels add"
    "\nweaker but class-correlated evidence (the expanding plume carries"
    "\npositive divergence, the background stays near zero)."
)
