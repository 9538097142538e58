"""
Zero-shot scoring, then prompt tuning
=====================================

A frozen random backbone scores images by comparing them with the text
pair "Good photo." / "Bad photo.". Without pretrained weights the zero-shot
score carries no quality signal; tuning the per-layer prompts on a few
labelled images gives it one, while the backbone stays byte-identical.
"""

import tempfile

from prompt_dqa.encoder import ModelConfig, init_backbone
from prompt_dqa.protocol import build_model, evaluate, load_samples
from prompt_dqa.synth import build_dataset, split_by_content
from prompt_dqa.training import TrainConfig, fit

cfg = ModelConfig(n_layers=2, d_model=32, n_heads=2, d_mlp=64, prompt_len=4, d_prompt=32,
                  image_side_local=16, image_side_global=32)
backbone = init_backbone(cfg, seed=0)

root = tempfile.mkdtemp()
records = split_by_content(build_dataset(12, 5, root, seed=1, side=48), 0.75, 0)
samples = load_samples(records, root)
train = [s for s in samples if s.split == "train"]
test = [s for s in samples if s.split == "test"]
print(f"{len(train)} training images, {len(test)} test images")

zero_shot = build_model(backbone, "m1")
print("zero-shot test", evaluate(zero_shot, test))

model = build_model(backbone, "full", bank_seed=0)
frozen = backbone.to_bytes()
_, history = fit([(s.image, s.mos) for s in train], model,
                 TrainConfig(learning_rate=3e-3, epochs=15, batch_size=8),
                 callback=lambda r: print(f"epoch {r.epoch:2d}  loss {r.loss:.5f}"))
print("tuned train", evaluate(model, train))
print("tuned test ", evaluate(model, test))
print("backbone unchanged:", backbone.to_bytes() == frozen)
print("trainable tensors:", [n for n, _ in model.bank.named_parameters()])
