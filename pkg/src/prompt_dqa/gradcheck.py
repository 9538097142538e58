"""Analytic versus finite-difference gradients of the training loss w.r.t. the prompt bank."""

from __future__ import annotations

import numpy as np

from .encoder import init_backbone
from .protocol import build_model
from .scoring import crop_patches, resize_global
from .synth import SceneSpec, synthesize_scene
from .tensor import Tape, finite_diff_gradient
from .training import mse_loss


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Normwise ``max|a - n| / max(max|a|, max|n|)`` over one tensor.

    Elementwise ratios are dominated by the finite-difference truncation
    error on near-zero entries, so the error is measured against the
    tensor's gradient scale.
    """
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def elementwise_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                               floor: float = 1e-8) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_model_gradients(model, images: list[np.ndarray], targets, step: float = 1e-4) -> dict:
    """Compare d(MSE)/d(prompt scalar) from the tape with central differences.

    Each image contributes its centered crop and global resize; the loss is
    a fixed function of the bank so the finite differences are exact up to
    truncation and round-off.
    """
    cfg = model.config
    patches = np.concatenate([crop_patches(img, 1, cfg.image_side_local, "grid") for img in images])
    globals_ = np.stack([resize_global(img, cfg.image_side_global) for img in images])
    targets = np.asarray(targets, dtype=np.float64)
    named = model.bank.named_parameters()
    params = [t for _, t in named]

    def loss_value() -> float:
        return mse_loss(model.score_batch(patches, globals_), targets).item()

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = mse_loss(model.score_batch(patches, globals_), targets)
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    numeric = finite_diff_gradient(loss_value, params, step)
    rows = []
    for (name, _), a, n in zip(named, analytic, numeric):
        rows.append({"name": name, "size": int(a.size),
                     "max_rel_error": relative_error(a, n),
                     "max_elementwise_rel_error": float(elementwise_relative_error(a, n).max()),
                     "max_abs_error": float(np.abs(a - n).max()),
                     "max_abs_grad": float(np.abs(a).max())})
    return {"loss": loss.item(), "tensors": rows,
            "max_rel_error": max(r["max_rel_error"] for r in rows)}


def gradcheck_report(run_config) -> dict:
    cfg = run_config.model_config()
    backbone = init_backbone(cfg, run_config.backbone_seed)
    model = build_model(backbone, "full", run_config.seed, run_config.prompts())
    side = max(cfg.image_side_local, cfg.image_side_global)
    images = [synthesize_scene(SceneSpec(seed=run_config.seed + i, side=side))[0]
              for i in range(run_config.gradcheck_images)]
    targets = np.linspace(0.2, 0.8, len(images))
    report = check_model_gradients(model, images, targets, run_config.gradcheck_step)
    report["tolerance"] = run_config.gradcheck_tolerance
    report["passed"] = report["max_rel_error"] < run_config.gradcheck_tolerance
    return report
