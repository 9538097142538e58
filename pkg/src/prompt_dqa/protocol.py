"""Repeated content-split train/test evaluation and the ablation variants."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .encoder import BackboneParams
from .metrics import correlations
from .prompting import HandcraftedPrompts, init_prompt_bank
from .scoring import QualityModel, crop_patches, predict_batch, resize_global
from .synth import ManifestRecord, read_ppm, split_by_content
from .tensor import ContractError
from .training import TrainConfig, fit

# method -> (prompt bank mode, global stream on)
METHODS = {
    "m1": ("none", False),
    "m2": ("textual_only", False),
    "m3": ("both", False),
    "full": ("both", True),
}


@dataclass
class Sample:
    image: np.ndarray
    mos: float
    content_id: int
    split: str = "unassigned"


def load_samples(records: list[ManifestRecord], root) -> list[Sample]:
    root = Path(root)
    return [Sample(read_ppm(root / r.image_path), r.mos, r.content_id, r.split) for r in records]


def build_model(backbone: BackboneParams, method: str, bank_seed: int = 0,
                prompts: HandcraftedPrompts | None = None) -> QualityModel:
    if method not in METHODS:
        raise ContractError(f"method must be one of {sorted(METHODS)}")
    mode, use_global = METHODS[method]
    bank = init_prompt_bank(backbone.config, bank_seed, mode)
    return QualityModel(backbone, bank, prompts or HandcraftedPrompts(), use_global)


def predict_images(model: QualityModel, images: list[np.ndarray], n_patches: int = 4) -> np.ndarray:
    """Grid-patch image scores for a list of images."""
    cfg = model.config
    patches = np.concatenate([crop_patches(img, n_patches, cfg.image_side_local, "grid") for img in images])
    globals_ = None
    if model.use_global:
        g = np.stack([resize_global(img, cfg.image_side_global) for img in images])
        globals_ = np.repeat(g, n_patches, axis=0)
    return predict_batch(model, patches, globals_).reshape(len(images), n_patches).mean(axis=1)


def evaluate(predictor: QualityModel | Callable[[Sample], float], samples: list[Sample],
             n_patches: int = 4) -> dict[str, float]:
    """SRCC/PLCC/KRCC of predictions against MOS.

    ``predictor`` is a model (scored on grid patches) or any callable
    mapping a sample to a score.
    """
    if not samples:
        raise ContractError("evaluation split is empty")
    if isinstance(predictor, QualityModel):
        pred = predict_images(predictor, [s.image for s in samples], n_patches)
    else:
        pred = np.array([predictor(s) for s in samples], dtype=np.float64)
    return correlations(pred, [s.mos for s in samples])


@dataclass
class MetricsReport:
    repeats: list[dict]
    average: dict[str, float]

    def to_dict(self) -> dict:
        return {"repeats": self.repeats, "average": self.average}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def average_triples(triples: list[dict]) -> dict[str, float]:
    return {k: float(np.mean([t[k] for t in triples])) for k in ("srcc", "plcc", "krcc")}


def run_protocol(samples: list[Sample], backbone: BackboneParams, method: str,
                 train_config: TrainConfig, repeats: int = 10, seed: int = 0,
                 n_patches: int = 4, train_fraction: float = 0.8,
                 prompts: HandcraftedPrompts | None = None,
                 with_train_metrics: bool = False) -> MetricsReport:
    """Per repeat: content split, fresh prompt bank, fit on train (unless m1), score test.

    Each repeat entry holds the test triple; with ``with_train_metrics`` it
    also carries ``train`` correlations of the fitted model.
    """
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    records = [ManifestRecord("", s.mos, s.content_id, 0) for s in samples]
    rows = []
    for r in range(repeats):
        labels = [rec.split for rec in split_by_content(records, train_fraction, r, seed)]
        train = [s for s, lab in zip(samples, labels) if lab == "train"]
        test = [s for s, lab in zip(samples, labels) if lab == "test"]
        run_seed = seed * 1_000 + r
        model = build_model(backbone, method, run_seed, prompts)
        if METHODS[method][0] != "none":
            fit([(s.image, s.mos) for s in train], model, replace(train_config, seed=run_seed))
        row = {"repeat": r, **evaluate(model, test, n_patches)}
        if with_train_metrics:
            row["train"] = evaluate(model, train, n_patches)
        rows.append(row)
    return MetricsReport(rows, average_triples(rows))
