"""
A synthetic dehazing benchmark with exact labels
================================================

Scenes are hazed with I = J t + A (1 - t), then "dehazed" by inverting with
an under-estimated haze density. The score of each output is a closed-form
function of the haze left behind and of the artifacts added.
"""

import tempfile
from pathlib import Path

import numpy as np

from prompt_dqa.synth import (HazeParams, SceneSpec, apply_haze, assign_mos, build_dataset, simulate_dehazer,
                              split_by_content, synthesize_scene, write_ppm)

J, depth = synthesize_scene(SceneSpec(seed=7, side=96))
haze = HazeParams((0.9, 0.9, 0.92), beta=1.8)
I = apply_haze(J, depth, haze)
print("clean mean %.3f  hazy mean %.3f" % (J.mean(), I.mean()))

# sweep dehazer quality: better dehazers leave less haze and score higher
for q in (0.0, 0.25, 0.5, 0.75, 1.0):
    res = simulate_dehazer(I, depth, haze, q, artifact_seed=3)
    mos = assign_mos(res.residual_beta, res.artifact_level)
    print(f"quality {q:.2f}  residual beta {res.residual_beta:.3f}  artifacts {res.artifact_level:.3f}  mos {mos:.3f}")

out = Path(tempfile.mkdtemp()) / "corpus"
records = build_dataset(n_scenes=6, dehazers_per_scene=4, out_dir=out, seed=0, side=64)
write_ppm(out / "hazy_example.ppm", I)
print(f"{len(records)} images written under {out}")

# whole scenes go to one side of the split
split = split_by_content(records, train_fraction=0.8, repeat_index=0)
train = sorted({r.content_id for r in split if r.split == "train"})
test = sorted({r.content_id for r in split if r.split == "test"})
print("train scenes", train, "test scenes", test)
print("mos range %.3f .. %.3f" % (min(r.mos for r in records), max(r.mos for r in records)))
