"""Patch cropping, global resizing and the antonym-prompt quality score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import BackboneParams, ModelConfig, encode_image, encode_tokens, tokenize
from .prompting import HandcraftedPrompts, PromptBank, init_prompt_bank
from .tensor import ContractError, Tensor, make_rng, softmax

CROP_MODES = ("grid", "random")


# ---------------------------------------------------------------- geometry
def patch_offsets(height: int, width: int, side: int, n: int, mode: str = "grid",
                  rng: np.random.Generator | None = None) -> list[tuple[int, int]]:
    """Top-left corners of ``n`` square crops.

    ``grid`` lays a ``ceil(sqrt(n))``-wide lattice evenly over the image and
    takes the first ``n`` cells row by row; ``random`` draws uniform offsets.
    """
    if n < 1:
        raise ContractError("need at least one patch")
    if height < side or width < side:
        raise ContractError(f"image {height}x{width} is smaller than the {side}-pixel patch")
    if mode == "random":
        if rng is None:
            raise ContractError("random crops need a generator")
        rows = rng.integers(0, height - side + 1, size=n)
        cols = rng.integers(0, width - side + 1, size=n)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]
    if mode != "grid":
        raise ContractError(f"crop mode must be one of {CROP_MODES}")
    nx = math.ceil(math.sqrt(n))
    ny = math.ceil(n / nx)

    def axis(span: int, k: int) -> list[int]:
        if k == 1:
            return [span // 2]
        return [int(round(i * span / (k - 1))) for i in range(k)]

    cells = [(r, c) for r in axis(height - side, ny) for c in axis(width - side, nx)]
    return cells[:n]


def crop_patches(image: np.ndarray, n: int, side: int, mode: str = "grid",
                 seed: int | tuple[int, ...] = 0) -> np.ndarray:
    """``n`` crops of ``side`` pixels, shape (n, side, side, 3)."""
    h, w = image.shape[:2]
    rng = make_rng(*(seed if isinstance(seed, tuple) else (seed,))) if mode == "random" else None
    offsets = patch_offsets(h, w, side, n, mode, rng)
    return np.stack([image[r:r + side, c:c + side] for r, c in offsets])


def resize_global(image: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resample to side x side using half-pixel centers, clamped to [0, 1]."""
    if side < 1:
        raise ContractError("side must be positive")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]

    def weights(n_in: int, n_out: int):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, fr = weights(h, side)
    c0, c1, fc = weights(w, side)
    rows = image[r0] * (1 - fr)[:, None, None] + image[r1] * fr[:, None, None]
    out = rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]
    return np.clip(out, 0.0, 1.0)


# ------------------------------------------------------------------ scoring
def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ContractError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


def patch_score(c, t_p, t_n) -> float:
    """``e^{sim(t_p,c)} / (e^{sim(t_p,c)} + e^{sim(t_n,c)})`` with no temperature."""
    sp = cosine_similarity(t_p, c)
    sn = cosine_similarity(t_n, c)
    return 1.0 / (1.0 + math.exp(sn - sp))


@dataclass
class QualityModel:
    """Frozen backbone plus prompt bank, antonym prompts and input layout.

    ``use_global=False`` drops the resized-image stream (local patch only).
    """

    backbone: BackboneParams
    bank: PromptBank
    prompts: HandcraftedPrompts = field(default_factory=HandcraftedPrompts)
    use_global: bool = True

    @property
    def config(self) -> ModelConfig:
        return self.backbone.config

    def prompt_tokens(self) -> list[tuple[int, ...]]:
        cfg = self.config
        return [tokenize(self.prompts.positive, cfg), tokenize(self.prompts.negative, cfg)]

    def text_features(self) -> Tensor:
        """Rows ``[t_p, t_n]``, shape (2, d_model)."""
        return encode_tokens(self.prompt_tokens(), self.backbone, self.bank)

    def image_features(self, patches: np.ndarray, globals_: np.ndarray | None) -> Tensor:
        return encode_image(patches, globals_ if self.use_global else None, self.backbone, self.bank)

    def score_batch(self, patches: np.ndarray, globals_: np.ndarray | None,
                    text: Tensor | None = None) -> Tensor:
        """Differentiable per-pair scores, shape (B,)."""
        text = self.text_features() if text is None else text
        c = self.image_features(patches, globals_)
        sims = c @ text.transpose()  # unit vectors: dot product is the cosine
        return softmax(sims, axis=-1)[:, 0]


def predict_batch(model: QualityModel, patches: np.ndarray, globals_: np.ndarray | None,
                  chunk: int = 128) -> np.ndarray:
    """Scores for many (patch, global) pairs without recording gradients."""
    text = model.text_features()
    out = []
    for lo in range(0, len(patches), chunk):
        g = None if globals_ is None else globals_[lo:lo + chunk]
        out.append(model.score_batch(patches[lo:lo + chunk], g, text).data)
    return np.concatenate(out)


def predict_image_quality(image: np.ndarray, model: QualityModel, n: int = 4, mode: str = "grid",
                          seed: int | tuple[int, ...] = 0) -> tuple[float, np.ndarray]:
    """Mean of per-patch scores, each computed with the image's global resize. Returns (Q, per-patch)."""
    cfg = model.config
    patches = crop_patches(image, n, cfg.image_side_local, mode, seed)
    glob = resize_global(image, cfg.image_side_global)
    globals_ = np.broadcast_to(glob, (n,) + glob.shape) if model.use_global else None
    scores = predict_batch(model, patches, globals_)
    return float(scores.mean()), scores


def zero_shot_model(backbone: BackboneParams, prompts: HandcraftedPrompts | None = None,
                    use_global: bool = True) -> QualityModel:
    bank = init_prompt_bank(backbone.config, 0, mode="none")
    return QualityModel(backbone, bank, prompts or HandcraftedPrompts(), use_global)


def zero_shot_score(image: np.ndarray, backbone: BackboneParams,
                    prompts: HandcraftedPrompts | None = None, n: int = 4,
                    use_global: bool = True) -> tuple[float, np.ndarray]:
    """Handcrafted antonym prompts, no tuning."""
    return predict_image_quality(image, zero_shot_model(backbone, prompts, use_global), n)
