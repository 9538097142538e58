"""
Where the class token looks
===========================

The vision branch sees a class token, a grid of local-patch tokens and a
grid of tokens from the resized whole image. This prints the class-token
attention of the last layer over both grids and writes them as PGM files.
"""

import tempfile
from pathlib import Path

import numpy as np

from prompt_dqa.encoder import ModelConfig, attention_maps, init_backbone
from prompt_dqa.prompting import init_prompt_bank
from prompt_dqa.scoring import crop_patches, resize_global
from prompt_dqa.synth import SceneSpec, synthesize_scene, write_pgm

cfg = ModelConfig()
backbone = init_backbone(cfg, seed=0)
bank = init_prompt_bank(cfg, seed=0, mode="both")
image, _ = synthesize_scene(SceneSpec(seed=11, side=96))

patch = crop_patches(image, 1, cfg.image_side_local, "grid")[0]
rec = attention_maps(patch, resize_global(image, cfg.image_side_global), backbone, bank)
print("layer", rec.layer, "heads", rec.per_head.shape[0], "tokens per row", rec.per_head.shape[-1])
print("max |row sum - 1|:", np.abs(rec.per_head.sum(axis=-1) - 1).max())
np.set_printoptions(precision=3, suppress=True)
print("local grid\n", rec.cls_local)
print("global grid\n", rec.cls_global)

out = Path(tempfile.mkdtemp())
for name, grid in (("local", rec.cls_local), ("global", rec.cls_global)):
    scaled = (grid - grid.min()) * (255 / (grid.max() - grid.min()))
    write_pgm(out / f"attention_{name}.pgm", scaled)
print("maps written to", out)
