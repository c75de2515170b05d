"""End-to-end run of the train / segment / eval workflow on disk.

Mirrors what the CLI does: write a synthetic scene, fit the model on the
first ten frames, segment the remaining ten, and score them against the
ground truth. Everything lands in demos/output/04/.
"""

import json
from pathlib import Path

from irseg.pipeline import PipelineConfig, cmd_eval, cmd_segment, cmd_synth, cmd_train

OUT = Path(__file__).parent / "output" / "04"
scene_dir = OUT / "scene"
run_dir = OUT / "run"

manifest = cmd_synth("fire_smoke_basic", scene_dir)
print(f"scene written: {manifest}")

cfg = PipelineConfig(
    input_dir=str(scene_dir),
    pattern="frame_*.pgm",
    output_dir=str(run_dir),
    method="mrf",
)
model_path = cmd_train(cfg)
print(f"model trained: {model_path}")

written = cmd_segment(cfg, model_path)
print(f"{len(written)} frames segmented")

report = cmd_eval(run_dir, scene_dir, out_dir=run_dir / "eval")
pooled = report["pooled"]
print(f"\npooled accuracy: {pooled['accuracy']:.4f}")
print("confusion counts (rows true bg/smoke/fire):")
for row in pooled["counts"]:
    print("   ", row)
print(f"\nfull report: {run_dir / 'eval' / 'report.json'}")
print("equivalent CLI:")
print(f"  irseg synth fire_smoke_basic --output-dir {scene_dir}")
print(f"  irseg train --input-dir {scene_dir} --pattern 'frame_*.pgm' --output-dir {run_dir} --method mrf")
print(f"  irseg segment --input-dir {scene_dir} --pattern 'frame_*.pgm' --output-dir {run_dir} --method mrf")
print(f"  irseg eval --pred-dir {run_dir} --truth-dir {scene_dir} --output-dir {run_dir}/eval")
