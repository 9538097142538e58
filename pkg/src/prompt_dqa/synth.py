"""Synthetic dehazed-image corpus with an analytic quality oracle.

Clean procedural scenes are hazed with the atmospheric scattering model
``I = J t + A (1 - t)``, ``t = exp(-beta * depth)``, then passed through
simulated dehazers of varying quality. Each output gets a MOS in [0, 1]
from a closed-form oracle, so labels are exact and reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .tensor import ContractError, make_rng

# MOS oracle weights: mos = exp(-(W_HAZE * residual_beta + W_ARTIFACT * artifact_level))
W_HAZE = 1.0
W_ARTIFACT = 2.0

SPLITS = ("train", "test", "unassigned")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    side: int = 96


@dataclass(frozen=True)
class HazeParams:
    atmospheric_light: tuple[float, float, float]
    beta: float

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ContractError("beta must be non-negative")
        if any(not 0.0 <= a <= 1.0 for a in self.atmospheric_light):
            raise ContractError("atmospheric light components must lie in [0, 1]")


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    mos: float
    content_id: int
    dehazer_id: int
    split: str = "unassigned"

    def __post_init__(self) -> None:
        if not 0.0 <= self.mos <= 1.0:
            raise ContractError(f"mos {self.mos} outside [0, 1]")
        if self.split not in SPLITS:
            raise ContractError(f"unknown split {self.split!r}")


# ------------------------------------------------------------------ image I/O
def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, 8 bits per channel."""
    img = np.asarray(image, dtype=np.float64)
    h, w, _ = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 from a 2-D array already scaled to 0..255."""
    data = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _read_netpbm(path) -> tuple[str, int, int, int, bytes]:
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    magic = fields[0].decode("ascii")
    w, h, maxval = (int(x) for x in fields[1:])
    return magic, w, h, maxval, raw[pos + 1:]


def read_ppm(path) -> np.ndarray:
    """P6 image as float64 (H, W, 3) in [0, 1]."""
    magic, w, h, maxval, body = _read_netpbm(path)
    if magic != "P6" or maxval != 255:
        raise ValueError(f"{path}: expected 8-bit binary PPM (P6)")
    data = np.frombuffer(body[: w * h * 3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    magic, w, h, maxval, body = _read_netpbm(path)
    if magic != "P5" or maxval != 255:
        raise ValueError(f"{path}: expected 8-bit binary PGM (P5)")
    return np.frombuffer(body[: w * h], dtype=np.uint8).reshape(h, w).astype(np.float64)


# ---------------------------------------------------------------------- scenes
def _smooth_noise(rng: np.random.Generator, side: int, cells: int) -> np.ndarray:
    """Bilinearly upsampled uniform noise on a ``cells x cells`` lattice, values in [0, 1]."""
    grid = rng.random((cells + 1, cells + 1))
    u = np.linspace(0.0, cells, side)
    i0 = np.minimum(u.astype(int), cells - 1)
    f = u - i0
    rows = grid[i0] * (1 - f)[:, None] + grid[i0 + 1] * f[:, None]
    return rows[:, i0] * (1 - f)[None, :] + rows[:, i0 + 1] * f[None, :]


def synthesize_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Clean image J (side, side, 3) and depth map (side, side) in (0, 1].

    The scene is a sky-to-ground color gradient with a few colored boxes and
    two octaves of texture. Depth grows toward the top of the frame with a
    smooth random undulation; boxes sit at their own nearer depth.
    """
    rng = make_rng(spec.seed, 0x5CE)
    side = spec.side
    y = np.linspace(0.0, 1.0, side)[:, None, None]
    top, bottom = rng.uniform(0.1, 0.9, 3), rng.uniform(0.0, 0.7, 3)
    img = top * (1 - y) + bottom * y
    img = np.broadcast_to(img, (side, side, 3)).copy()

    rows = np.linspace(1.0, 0.0, side)[:, None]
    depth = 0.45 + 0.45 * rows + 0.1 * _smooth_noise(rng, side, 3)
    for _ in range(int(rng.integers(3, 7))):
        h, w = rng.integers(side // 8, side // 2, size=2)
        r0, c0 = rng.integers(0, side - h), rng.integers(0, side - w)
        img[r0:r0 + h, c0:c0 + w] = rng.uniform(0.0, 1.0, 3)
        depth[r0:r0 + h, c0:c0 + w] = np.minimum(depth[r0:r0 + h, c0:c0 + w], rng.uniform(0.35, 0.6))

    texture = 0.6 * (_smooth_noise(rng, side, 12) - 0.5) + 0.4 * (rng.random((side, side)) - 0.5)
    img = img + 0.25 * texture[..., None]
    # common brightness and contrast across scenes so haze, not content, sets the statistics
    img = 0.4 + (img - img.mean()) * (0.2 / img.std())
    return np.clip(img, 0.0, 1.0), np.clip(depth, 0.05, 1.0)


def apply_haze(J: np.ndarray, depth: np.ndarray, params: HazeParams) -> np.ndarray:
    t = np.exp(-params.beta * np.asarray(depth))[..., None]
    A = np.asarray(params.atmospheric_light, dtype=np.float64)
    return J * t + A * (1.0 - t)


@dataclass(frozen=True)
class DehazeResult:
    image: np.ndarray
    residual_beta: float
    artifact_level: float


def simulate_dehazer(I: np.ndarray, depth: np.ndarray, true_params: HazeParams, quality: float,
                     artifact_seed: int, artifact_level: float | None = None,
                     clamp: bool = True) -> DehazeResult:
    """Imperfect haze removal.

    The haze model is inverted with the under-estimate ``quality * beta``,
    which leaves exactly ``(1 - quality) * beta`` of haze in place. A seeded
    per-channel color cast and a contrast over/under-shoot of size
    ``artifact_level`` follow; by default that level is drawn in
    ``[0, 0.25 * (1 - quality)]``.
    """
    if not 0.0 <= quality <= 1.0:
        raise ContractError("quality must lie in [0, 1]")
    rng = make_rng(artifact_seed, 0xDE4)
    draw = rng.uniform(0.0, 0.25)
    if artifact_level is None:
        artifact_level = draw * (1.0 - quality)
    if artifact_level < 0:
        raise ContractError("artifact_level must be non-negative")
    A = np.asarray(true_params.atmospheric_light, dtype=np.float64)
    beta_hat = quality * true_params.beta
    t_hat = np.exp(-beta_hat * np.asarray(depth))[..., None]
    out = (I - A) / t_hat + A

    if artifact_level > 0:
        cast = rng.uniform(-1.0, 1.0, 3)
        cast -= cast.mean()
        gain = 1.0 + artifact_level * rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
        mean = out.mean(axis=(0, 1), keepdims=True)
        out = (out - mean) * gain + mean + artifact_level * cast
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return DehazeResult(out, (1.0 - quality) * true_params.beta, float(artifact_level))


def assign_mos(residual_beta: float, artifact_level: float,
               w_haze: float = W_HAZE, w_artifact: float = W_ARTIFACT) -> float:
    if residual_beta < 0 or artifact_level < 0:
        raise ContractError("oracle inputs must be non-negative")
    return math.exp(-(w_haze * residual_beta + w_artifact * artifact_level))


# ------------------------------------------------------------------- manifests
def write_manifest(path, records: list[ManifestRecord]) -> None:
    lines = [json.dumps(asdict(r)) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[ManifestRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(ManifestRecord(**json.loads(line)))
    return out


def build_dataset(n_scenes: int, dehazers_per_scene: int, out_dir, seed: int = 0,
                  side: int = 96) -> list[ManifestRecord]:
    """Render ``n_scenes * dehazers_per_scene`` dehazed images and write ``manifest.jsonl``.

    Each scene gets one haze draw; its dehazers get stratified qualities
    spread over [0, 1].
    """
    if n_scenes < 2:
        raise ContractError("need at least two scenes")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for scene in range(n_scenes):
        rng = make_rng(seed, scene, 0x4A2)
        J, depth = synthesize_scene(SceneSpec(seed=int(rng.integers(2**31)), side=side))
        grey = rng.uniform(0.75, 1.0)
        haze = HazeParams(tuple(float(a) for a in np.clip(grey + rng.uniform(-0.05, 0.05, 3), 0, 1)),
                          float(rng.uniform(0.8, 2.5)))
        I = apply_haze(J, depth, haze)
        qualities = (np.arange(dehazers_per_scene) + rng.random(dehazers_per_scene)) / dehazers_per_scene
        for k, q in enumerate(qualities):
            res = simulate_dehazer(I, depth, haze, float(q), artifact_seed=int(rng.integers(2**31)))
            rel = f"images/c{scene:03d}_d{k:02d}.ppm"
            write_ppm(out / rel, res.image)
            mos = assign_mos(res.residual_beta, res.artifact_level)
            records.append(ManifestRecord(rel, mos, scene, k))
    write_manifest(out / "manifest.jsonl", records)
    return records


def split_by_content(records: list[ManifestRecord], train_fraction: float = 0.8,
                     repeat_index: int = 0, seed: int = 0) -> list[ManifestRecord]:
    """Assign whole contents to train or test so no scene straddles the split."""
    contents = sorted({r.content_id for r in records})
    if len(contents) < 2:
        raise ContractError("need at least two distinct content ids")
    order = make_rng(seed, repeat_index, 0x5B1).permutation(len(contents))
    n_train = min(max(int(round(train_fraction * len(contents))), 1), len(contents) - 1)
    train = {contents[i] for i in order[:n_train]}
    return [replace(r, split="train" if r.content_id in train else "test") for r in records]


def normalize_mos(values, scale: float = 100.0) -> np.ndarray:
    """Map 0..scale opinion scores into [0, 1]."""
    return np.asarray(values, dtype=np.float64) / scale
