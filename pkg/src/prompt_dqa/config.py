"""Run configuration: plain-text ``key = value`` files plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .encoder import ModelConfig
from .prompting import HandcraftedPrompts
from .training import TrainConfig


class ConfigError(ValueError):
    """Malformed config text, unknown key or unparsable value."""


@dataclass(frozen=True)
class RunConfig:
    # model
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_mlp: int = 128
    patch_pixels: int = 8
    image_side_local: int = 32
    image_side_global: int = 64
    max_text_len: int = 16
    prompt_len: int = 8
    d_prompt: int = 64
    init_std: float = 0.02
    init_scheme: str = "fan_in"
    backbone_seed: int = 0
    # training
    learning_rate: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # corpus
    data_dir: str = "data"
    n_scenes: int = 40
    dehazers_per_scene: int = 7
    image_side: int = 96
    # protocol
    method: str = "full"
    methods: str = "m1,m2,m3,full"
    repeats: int = 10
    repeat_index: int = 0
    train_fraction: float = 0.8
    n_patches: int = 4
    train_metrics: bool = False
    positive_prompt: str = "Good photo."
    negative_prompt: str = "Bad photo."
    # paths
    checkpoint: str = "model.pdqa"
    image: str = ""
    out_prefix: str = "attention"
    attention_layer: int = 0
    # diagnostics
    oracle: bool = False
    corrupt_backward: str = ""
    gradcheck_images: int = 2
    gradcheck_step: float = 1e-4
    gradcheck_tolerance: float = 1e-4

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_layers=self.n_layers, d_model=self.d_model, n_heads=self.n_heads, d_mlp=self.d_mlp,
            patch_pixels=self.patch_pixels, image_side_local=self.image_side_local,
            image_side_global=self.image_side_global, max_text_len=self.max_text_len,
            prompt_len=self.prompt_len, d_prompt=self.d_prompt, init_std=self.init_std,
            init_scheme=self.init_scheme)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, beta1=self.beta1, beta2=self.beta2,
                           eps=self.adam_eps, seed=self.seed)

    def prompts(self) -> HandcraftedPrompts:
        return HandcraftedPrompts(self.positive_prompt, self.negative_prompt)

    @property
    def manifest_path(self) -> Path:
        return Path(self.data_dir) / "manifest.jsonl"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = line.split("=", 1)
        values[key.strip()] = _convert(key.strip(), raw)
    return values


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then string ``overrides``."""
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    for key, raw in (overrides or {}).items():
        values[key.replace("-", "_")] = _convert(key.replace("-", "_"), raw)
    return dataclasses.replace(RunConfig(), **values)
