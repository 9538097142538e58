"""Trainable prompt banks and the handcrafted antonym prompts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import ModelConfig
from .tensor import ContractError, Tensor, make_rng

MODES = ("none", "textual_only", "visual_only", "both")
BRANCHES = ("text", "vision")


@dataclass(frozen=True)
class HandcraftedPrompts:
    positive: str = "Good photo."
    negative: str = "Bad photo."

    def __post_init__(self) -> None:
        if not self.positive.strip() or not self.negative.strip():
            raise ContractError("antonym prompts must be non-empty")


class PromptBank:
    """Per-layer prompt rows and their fully connected projections, for both branches.

    Each projection is stored as one ``(d_prompt + 1, d_model)`` matrix
    whose last row is the bias, so a branch contributes ``2 * n_layers``
    tensors.
    """

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor],
                 textual_enabled: bool, visual_enabled: bool) -> None:
        self.config = config
        self.tensors = tensors
        self.textual_enabled = textual_enabled
        self.visual_enabled = visual_enabled

    @property
    def mode(self) -> str:
        return {(False, False): "none", (True, False): "textual_only",
                (False, True): "visual_only", (True, True): "both"}[
            (self.textual_enabled, self.visual_enabled)]

    def enabled(self, branch: str) -> bool:
        if branch not in BRANCHES:
            raise ContractError(f"unknown branch {branch!r}")
        return self.textual_enabled if branch == "text" else self.visual_enabled

    def project(self, layer: int, branch: str) -> Tensor:
        return project_prompts(self, layer, branch)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Trainable tensors in optimizer order, filtered by the branch flags."""
        out = []
        K = self.config.n_layers
        for branch, on in (("text", self.textual_enabled), ("vision", self.visual_enabled)):
            if not on:
                continue
            out += [(f"{branch}.prompts.{i}", self.tensors[f"{branch}.prompts.{i}"]) for i in range(K)]
            out += [(f"{branch}.proj.{i}", self.tensors[f"{branch}.proj.{i}"]) for i in range(K)]
        return out

    def copy(self) -> "PromptBank":
        tensors = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()}
        return PromptBank(self.config, tensors, self.textual_enabled, self.visual_enabled)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}


def init_prompt_bank(config: ModelConfig, seed: int = 0, mode: str = "both") -> PromptBank:
    """Prompt rows ~ N(0, init_std); projections start at identity plus N(0, init_std) noise.

    Arrays for both branches are always drawn so a bank's values do not
    depend on ``mode``; the flags decide what is used and trained.
    """
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}")
    rng = make_rng(seed, 0x9A9)
    M, dp, d = config.prompt_len, config.d_prompt, config.d_model
    eye = np.eye(dp, d)
    tensors = {}
    for branch in BRANCHES:
        for i in range(config.n_layers):
            name = f"{branch}.prompts.{i}"
            tensors[name] = Tensor(rng.normal(0.0, config.init_std, (M, dp)), True, name)
        for i in range(config.n_layers):
            name = f"{branch}.proj.{i}"
            w = eye + rng.normal(0.0, config.init_std, (dp, d))
            tensors[name] = Tensor(np.vstack([w, np.zeros((1, d))]), True, name)
    return PromptBank(config, tensors,
                      textual_enabled=mode in ("textual_only", "both"),
                      visual_enabled=mode in ("visual_only", "both"))


def project_prompts(bank: PromptBank, layer: int, branch: str) -> Tensor:
    """Apply the layer's fully connected map row-wise: ``P @ W + b``, shape (M, d_model)."""
    if not bank.enabled(branch):
        raise ContractError(f"{branch} prompts are disabled in this bank")
    if not 0 <= layer < bank.config.n_layers:
        raise ContractError(f"prompt layer must be in 0..{bank.config.n_layers - 1}")
    raw = bank.tensors[f"{branch}.prompts.{layer}"]
    affine = bank.tensors[f"{branch}.proj.{layer}"]
    return raw @ affine[:-1] + affine[-1]


def trainable_parameters(bank: PromptBank) -> list[Tensor]:
    return [t for _, t in bank.named_parameters()]
