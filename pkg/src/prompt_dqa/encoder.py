"""Frozen dual-branch transformer backbone.

The text branch is a causal pre-norm transformer pooled at the end-of-text
token; the vision branch is a pre-norm ViT whose token sequence is
``[class, local patch tokens, global tokens]``. Both branches optionally
take a per-layer block of projected prompt rows which joins the attention
at that layer and is dropped from the output.

Backbone weights are seeded random draws standing in for pretrained weights.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    broadcast_to,
    concat,
    gelu,
    layer_norm,
    make_rng,
    softmax,
)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
_SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
_PUNCT = (".", ",", "!", "?", "'", "-", ":", ";")
_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


@lru_cache(maxsize=None)
def vocabulary() -> tuple[str, ...]:
    """Id -> token table: specials, punctuation, then the bundled word list."""
    words = resources.files("prompt_dqa").joinpath("data/vocab.txt").read_text("utf-8").split()
    return _SPECIALS + _PUNCT + tuple(words)


@lru_cache(maxsize=None)
def _token_ids() -> dict[str, int]:
    return {tok: i for i, tok in enumerate(vocabulary())}


@dataclass(frozen=True)
class ModelConfig:
    """Shapes of both branches and of the prompt banks.

    ``n_layers`` is the depth K shared by the two branches and
    ``prompt_len`` is M, the number of prompt rows inserted per layer.
    """

    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_mlp: int = 128
    patch_pixels: int = 8
    image_side_local: int = 32
    image_side_global: int = 64
    vocab_size: int = field(default_factory=lambda: len(vocabulary()))
    max_text_len: int = 16
    prompt_len: int = 8
    d_prompt: int = 64
    init_std: float = 0.02
    init_scheme: str = "fan_in"
    ln_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads:
            raise ContractError("d_model must be divisible by n_heads")
        for side in (self.image_side_local, self.image_side_global):
            if side % self.patch_pixels:
                raise ContractError("image sides must be divisible by patch_pixels")
        if self.n_layers < 1 or self.prompt_len < 0 or self.max_text_len < 3:
            raise ContractError("invalid layer count, prompt length or text budget")
        if self.init_scheme not in ("fan_in", "fixed"):
            raise ContractError("init_scheme must be 'fan_in' or 'fixed'")
        if self.vocab_size < len(vocabulary()):
            raise ContractError(f"vocab_size must be at least {len(vocabulary())}")

    @property
    def n_local(self) -> int:
        return (self.image_side_local // self.patch_pixels) ** 2

    @property
    def n_global(self) -> int:
        return (self.image_side_global // self.patch_pixels) ** 2

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_pixels**2

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------- tokens
def tokenize(text: str, config: ModelConfig) -> tuple[int, ...]:
    """Lowercase word/punctuation ids framed by BOS/EOS and padded to ``max_text_len``.

    Out-of-vocabulary tokens map to UNK. Long inputs are truncated so the
    EOS sentinel always fits.
    """
    if not text or not text.strip():
        raise ContractError("tokenize: text must be non-empty")
    table = _token_ids()
    body = [table.get(tok, UNK) for tok in _TOKEN_RE.findall(text.lower())]
    body = body[: config.max_text_len - 2]
    ids = [BOS, *body, EOS]
    return tuple(ids + [PAD] * (config.max_text_len - len(ids)))


# ------------------------------------------------------------------ parameters
class BackboneParams:
    """Named, read-only weight arrays for both branches.

    Arrays are flagged non-writeable and never receive gradients.
    """

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]) -> None:
        self.config = config
        self.arrays = {}
        for name, arr in arrays.items():
            arr = np.array(arr, dtype=np.float64)
            arr.flags.writeable = False
            self.arrays[name] = arr
        self._tensors = {name: Tensor(arr) for name, arr in self.arrays.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def names(self) -> list[str]:
        return sorted(self.arrays)

    def to_bytes(self) -> bytes:
        """Canonical serialization, used to verify the backbone stays frozen."""
        chunks = []
        for name in self.names():
            arr = self.arrays[name]
            chunks.append(name.encode() + repr(arr.shape).encode())
            chunks.append(arr.astype("<f8").tobytes())
        return b"".join(chunks)


def _block_shapes(prefix: str, cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h = cfg.d_model, cfg.d_mlp
    return {
        f"{prefix}ln1.g": (d,), f"{prefix}ln1.b": (d,),
        f"{prefix}attn.wq": (d, d), f"{prefix}attn.bq": (d,),
        f"{prefix}attn.wk": (d, d), f"{prefix}attn.bk": (d,),
        f"{prefix}attn.wv": (d, d), f"{prefix}attn.bv": (d,),
        f"{prefix}attn.wo": (d, d), f"{prefix}attn.bo": (d,),
        f"{prefix}ln2.g": (d,), f"{prefix}ln2.b": (d,),
        f"{prefix}mlp.w1": (d, h), f"{prefix}mlp.b1": (h,),
        f"{prefix}mlp.w2": (h, d), f"{prefix}mlp.b2": (d,),
    }


def backbone_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.d_model
    shapes = {
        "text.tok_emb": (cfg.vocab_size, d),
        "text.pos": (cfg.max_text_len, d),
        "text.ln_final.g": (d,), "text.ln_final.b": (d,),
        "text.proj": (d, d),
        "vision.patch_w": (cfg.patch_dim, d),
        "vision.cls": (d,),
        "vision.pos_local": (cfg.n_local, d),
        "vision.pos_global": (cfg.n_global, d),
        "vision.ln_post.g": (d,), "vision.ln_post.b": (d,),
        "vision.proj": (d, d),
    }
    for i in range(1, cfg.n_layers + 1):
        shapes.update(_block_shapes(f"text.{i}.", cfg))
        shapes.update(_block_shapes(f"vision.{i}.", cfg))
    return shapes


_BIAS_LEAVES = {"b", "bq", "bk", "bv", "bo", "b1", "b2"}
_EMBEDDINGS = {"text.tok_emb", "text.pos", "vision.cls", "vision.pos_local", "vision.pos_global"}


def init_backbone(config: ModelConfig, seed: int = 0) -> BackboneParams:
    """Seeded stand-in for pretrained weights.

    Embedding tables and the class token are N(0, init_std). Weight
    matrices are N(0, 1/fan_in) under the ``fan_in`` scheme, or
    N(0, init_std) under ``fixed``. LN gains are one and biases zero.
    """
    rng = make_rng(seed, 0xB0B)
    shapes = backbone_shapes(config)
    arrays = {}
    for name in sorted(shapes):
        shape = shapes[name]
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arrays[name] = np.ones(shape)
        elif leaf in _BIAS_LEAVES:
            arrays[name] = np.zeros(shape)
        elif config.init_scheme == "fan_in" and name not in _EMBEDDINGS:
            arrays[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
        else:
            arrays[name] = rng.normal(0.0, config.init_std, size=shape)
    return BackboneParams(config, arrays)


# --------------------------------------------------------------------- blocks
def _attention(x: Tensor, P: BackboneParams, pre: str, n_heads: int, mask):
    *lead, T, d = x.shape
    dh = d // n_heads
    nd = x.ndim

    def heads(t: Tensor) -> Tensor:
        t = t.reshape(*lead, T, n_heads, dh)
        axes = list(range(nd + 1))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        return t.transpose(axes)  # [..., h, T, dh]

    q = heads(x @ P[pre + "attn.wq"] + P[pre + "attn.bq"])
    k = heads(x @ P[pre + "attn.wk"] + P[pre + "attn.bk"])
    v = heads(x @ P[pre + "attn.wv"] + P[pre + "attn.bv"])
    kt_axes = list(range(nd + 1))
    kt_axes[-1], kt_axes[-2] = kt_axes[-2], kt_axes[-1]
    scores = (q @ k.transpose(kt_axes)) * (1.0 / math.sqrt(dh))
    probs = softmax(scores, axis=-1, mask=mask)
    ctx = probs @ v
    back = list(range(nd + 1))
    back[-3], back[-2] = back[-2], back[-3]
    ctx = ctx.transpose(back).reshape(*lead, T, d)
    return ctx @ P[pre + "attn.wo"] + P[pre + "attn.bo"], probs


def transformer_block(x: Tensor, P: BackboneParams, pre: str, cfg: ModelConfig, mask=None):
    """Pre-norm block: ``x + attn(ln1(x))`` then ``+ mlp(ln2(x))``. Returns (output, attention)."""
    h = layer_norm(x, P[pre + "ln1.g"], P[pre + "ln1.b"], cfg.ln_eps)
    attn, probs = _attention(h, P, pre, cfg.n_heads, mask)
    x = x + attn
    h = layer_norm(x, P[pre + "ln2.g"], P[pre + "ln2.b"], cfg.ln_eps)
    h = gelu(h @ P[pre + "mlp.w1"] + P[pre + "mlp.b1"]) @ P[pre + "mlp.w2"] + P[pre + "mlp.b2"]
    return x + h, probs


def _with_prompts(x: Tensor, prompts: Tensor | None, cfg: ModelConfig, front: bool) -> tuple[Tensor, int]:
    if prompts is None or prompts.shape[0] == 0:
        return x, 0
    if prompts.ndim != 2 or prompts.shape[1] != cfg.d_model:
        raise ShapeError(f"prompt rows must be (M, {cfg.d_model}), got {prompts.shape}")
    m = prompts.shape[0]
    p = broadcast_to(prompts, x.shape[:-2] + (m, cfg.d_model)) if x.ndim > 2 else prompts
    return (concat([p, x], axis=-2) if front else concat([x, p], axis=-2)), m


@lru_cache(maxsize=64)
def _causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


# ----------------------------------------------------------------- text branch
def embed_text(tokens, params: BackboneParams) -> Tensor:
    """Token rows plus positional rows. ``tokens`` is one id sequence or a batch of them."""
    cfg = params.config
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.shape[-1] != cfg.max_text_len:
        raise ContractError(f"token sequences must have length {cfg.max_text_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ContractError("token id outside the vocabulary range")
    return params["text.tok_emb"][ids] + params["text.pos"]


def text_layer_forward(W: Tensor, params: BackboneParams, layer: int,
                       prompts: Tensor | None = None) -> Tensor:
    """One text layer. Prompt rows, if any, are prepended and their outputs dropped."""
    cfg = params.config
    if not 1 <= layer <= cfg.n_layers:
        raise ContractError(f"layer must be in 1..{cfg.n_layers}")
    x, m = _with_prompts(W, prompts, cfg, front=True)
    out, _ = transformer_block(x, params, f"text.{layer}.", cfg, _causal_mask(x.shape[-2]))
    return out[..., m:, :] if m else out


def text_layer_forward_prompted(W: Tensor, prompts: Tensor, params: BackboneParams,
                                layer: int) -> Tensor:
    return text_layer_forward(W, params, layer, prompts)


def _l2_normalize(x: Tensor) -> Tensor:
    return x / (x * x).sum(axis=-1, keepdims=True).sqrt()


def encode_tokens(tokens, params: BackboneParams, prompt_bank=None) -> Tensor:
    """Unit-norm text embeddings for a batch of token sequences, shape (B, d_model)."""
    cfg = params.config
    ids = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    use_prompts = prompt_bank is not None and prompt_bank.textual_enabled
    W = embed_text(ids, params)
    for layer in range(1, cfg.n_layers + 1):
        prompts = prompt_bank.project(layer - 1, "text") if use_prompts else None
        W = text_layer_forward(W, params, layer, prompts)
    eos = np.argmax(ids == EOS, axis=-1)
    pooled = W[np.arange(len(ids)), eos]
    pooled = layer_norm(pooled, params["text.ln_final.g"], params["text.ln_final.b"], cfg.ln_eps)
    return _l2_normalize(pooled @ params["text.proj"])


def encode_text(text: str, params: BackboneParams, prompt_bank=None) -> Tensor:
    """Unit-norm embedding of one string, shape (d_model,)."""
    return encode_tokens([tokenize(text, params.config)], params, prompt_bank)[0]


# --------------------------------------------------------------- vision branch
@dataclass
class VisionState:
    """Token matrix ``[class, local..., global...]`` with the stream sizes."""

    tokens: Tensor
    n_local: int
    n_global: int

    @property
    def c(self) -> Tensor:
        return self.tokens[..., 0, :]

    @property
    def E_l(self) -> Tensor:
        return self.tokens[..., 1:1 + self.n_local, :]

    @property
    def E_g(self) -> Tensor:
        return self.tokens[..., 1 + self.n_local:1 + self.n_local + self.n_global, :]


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(..., H, W, 3) -> (..., H/p * W/p, p*p*3), blocks in row-major order."""
    images = np.asarray(images, dtype=np.float64)
    *lead, H, W, C = images.shape
    if H % patch or W % patch:
        raise ShapeError(f"image {H}x{W} is not divisible into {patch}-pixel blocks")
    x = images.reshape(*lead, H // patch, patch, W // patch, patch, C)
    n = len(lead)
    x = x.transpose(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, (H // patch) * (W // patch), patch * patch * C)


def _check_side(img: np.ndarray, side: int, what: str) -> None:
    if img.shape[-3:] != (side, side, 3):
        raise ShapeError(f"{what} must be {side}x{side}x3, got {img.shape[-3:]}")


def embed_image_pair(patch: np.ndarray, global_image: np.ndarray | None,
                     params: BackboneParams) -> VisionState:
    """Class token, projected local blocks and projected global blocks.

    Each stream has its own positional table. ``global_image=None`` gives a
    local-only sequence. Inputs may carry a leading batch axis.
    """
    cfg = params.config
    _check_side(patch, cfg.image_side_local, "patch")
    w = params["vision.patch_w"]
    E_l = Tensor(patchify(patch, cfg.patch_pixels)) @ w + params["vision.pos_local"]
    lead = patch.shape[:-3]
    cls = params["vision.cls"].reshape(1, cfg.d_model)
    if lead:
        cls = broadcast_to(cls, lead + (1, cfg.d_model))
    parts = [cls, E_l]
    n_global = 0
    if global_image is not None:
        _check_side(global_image, cfg.image_side_global, "global image")
        if global_image.shape[:-3] != lead:
            raise ShapeError("patch and global batches differ")
        parts.append(Tensor(patchify(global_image, cfg.patch_pixels)) @ w
                     + params["vision.pos_global"])
        n_global = cfg.n_global
    return VisionState(concat(parts, axis=-2), cfg.n_local, n_global)


def vision_layer_forward(state: VisionState, params: BackboneParams, layer: int,
                         prompts: Tensor | None = None, return_attention: bool = False):
    """One vision layer. Prompt rows, if any, are appended and their outputs dropped."""
    cfg = params.config
    if not 1 <= layer <= cfg.n_layers:
        raise ContractError(f"layer must be in 1..{cfg.n_layers}")
    x, m = _with_prompts(state.tokens, prompts, cfg, front=False)
    out, probs = transformer_block(x, params, f"vision.{layer}.", cfg)
    if m:
        out = out[..., :-m, :]
    new = VisionState(out, state.n_local, state.n_global)
    return (new, probs) if return_attention else new


def vision_layer_forward_prompted(state: VisionState, prompts: Tensor, params: BackboneParams,
                                  layer: int) -> VisionState:
    return vision_layer_forward(state, params, layer, prompts)


def _run_vision(patch, global_image, params, prompt_bank, record_layer=None):
    cfg = params.config
    state = embed_image_pair(patch, global_image, params)
    use_prompts = prompt_bank is not None and prompt_bank.visual_enabled
    record = None
    for layer in range(1, cfg.n_layers + 1):
        prompts = prompt_bank.project(layer - 1, "vision") if use_prompts else None
        state, probs = vision_layer_forward(state, params, layer, prompts, return_attention=True)
        if layer == record_layer:
            record = probs
    return state, record


def encode_image(patch: np.ndarray, global_image: np.ndarray | None, params: BackboneParams,
                 prompt_bank=None) -> Tensor:
    """Unit-norm visual embedding from the final class token.

    With a leading batch axis on the inputs the result is (B, d_model).
    """
    cfg = params.config
    state, _ = _run_vision(patch, global_image, params, prompt_bank)
    c = state.c
    single = c.ndim == 1
    if single:
        c = c.reshape(1, cfg.d_model)
    c = layer_norm(c, params["vision.ln_post.g"], params["vision.ln_post.b"], cfg.ln_eps)
    out = _l2_normalize(c @ params["vision.proj"])
    return out[0] if single else out


@dataclass
class AttentionRecord:
    """Attention of one vision layer for a single image pair.

    ``cls_local`` and ``cls_global`` are the class-token row of the
    head-averaged map restricted to each stream and laid out on its grid.
    """

    layer: int
    per_head: np.ndarray
    mean: np.ndarray
    cls_local: np.ndarray
    cls_global: np.ndarray | None


def attention_maps(patch: np.ndarray, global_image: np.ndarray | None, params: BackboneParams,
                   prompt_bank=None, layer: int | None = None) -> AttentionRecord:
    cfg = params.config
    layer = cfg.n_layers if layer is None else layer
    if not 1 <= layer <= cfg.n_layers:
        raise ContractError(f"layer must be in 1..{cfg.n_layers}")
    _, probs = _run_vision(patch, global_image, params, prompt_bank, record_layer=layer)
    per_head = probs.data
    mean = per_head.mean(axis=0)
    row = mean[0]
    gl = cfg.image_side_local // cfg.patch_pixels
    cls_local = row[1:1 + cfg.n_local].reshape(gl, gl)
    cls_global = None
    if global_image is not None:
        gg = cfg.image_side_global // cfg.patch_pixels
        start = 1 + cfg.n_local
        cls_global = row[start:start + cfg.n_global].reshape(gg, gg)
    return AttentionRecord(layer, per_head, mean, cls_local, cls_global)
