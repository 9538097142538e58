"""``prompt-dqa <command> --config <path> [--key value ...]``

JSON goes to stdout and diagnostics to stderr. Exit codes: 0 success,
1 usage error, 2 runtime error (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .encoder import attention_maps, init_backbone
from .gradcheck import gradcheck_report
from .protocol import METHODS, build_model, evaluate, load_samples, run_protocol
from .scoring import crop_patches, predict_image_quality, resize_global
from .synth import build_dataset, read_manifest, read_ppm, split_by_content, write_pgm
from .tensor import inject_backward_fault
from .training import fit

COMMANDS = ("synth", "train", "eval", "ablate", "score", "attention", "gradcheck")


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _split_samples(cfg: RunConfig):
    records = split_by_content(read_manifest(cfg.manifest_path), cfg.train_fraction,
                               cfg.repeat_index, cfg.seed)
    samples = load_samples(records, cfg.data_dir)
    return ([s for s in samples if s.split == "train"], [s for s in samples if s.split == "test"])


def _check_method(method: str) -> None:
    if method not in METHODS:
        raise UsageError(f"method must be one of {sorted(METHODS)}, got {method!r}")


def cmd_synth(cfg: RunConfig) -> int:
    records = build_dataset(cfg.n_scenes, cfg.dehazers_per_scene, cfg.data_dir, cfg.seed, cfg.image_side)
    digest = hashlib.sha256(cfg.manifest_path.read_bytes()).hexdigest()
    _emit({"manifest": str(cfg.manifest_path), "records": len(records), "sha256": digest})
    return 0


def cmd_train(cfg: RunConfig) -> int:
    _check_method(cfg.method)
    train, _ = _split_samples(cfg)
    backbone = init_backbone(cfg.model_config(), cfg.backbone_seed)
    model = build_model(backbone, cfg.method, cfg.seed, cfg.prompts())
    log_path = Path(str(cfg.checkpoint) + ".log.jsonl")
    lines = []

    def on_epoch(rec):
        line = json.dumps({"epoch": rec.epoch, "loss": rec.loss, "val_srcc": rec.val_srcc}, sort_keys=True)
        lines.append(line)
        sys.stdout.write(line + "\n")

    fit([(s.image, s.mos) for s in train], model, cfg.train_config(), callback=on_epoch)
    save_checkpoint(cfg.checkpoint, model)
    log_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    _, test = _split_samples(cfg)
    if cfg.oracle:
        triple = evaluate(lambda s: s.mos, test)
    else:
        triple = evaluate(load_checkpoint(cfg.checkpoint), test, cfg.n_patches)
    _emit({"repeats": [{"repeat": cfg.repeat_index, **triple}], "average": triple})
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    methods = [m.strip() for m in cfg.methods.split(",") if m.strip()]
    for m in methods:
        _check_method(m)
    samples = load_samples(read_manifest(cfg.manifest_path), cfg.data_dir)
    backbone = init_backbone(cfg.model_config(), cfg.backbone_seed)
    rows = []
    for m in methods:
        report = run_protocol(samples, backbone, m, cfg.train_config(), cfg.repeats, cfg.seed,
                              cfg.n_patches, cfg.train_fraction, cfg.prompts(), cfg.train_metrics)
        print(f"ablate: {m} srcc={report.average['srcc']:.4f}", file=sys.stderr)
        rows.append({"method": m.upper() if m != "full" else "full", **report.average,
                     "report": report.to_dict()})
    _emit({"rows": rows})
    return 0


def _load_image(path: str) -> np.ndarray:
    if not path:
        raise UsageError("set --image to a PPM file")
    return read_ppm(path)


def cmd_score(cfg: RunConfig) -> int:
    image = _load_image(cfg.image)
    model = load_checkpoint(cfg.checkpoint)
    score, per_patch = predict_image_quality(image, model, cfg.n_patches, "grid")
    _emit({"image": cfg.image, "patch_scores": [float(x) for x in per_patch], "score": score})
    return 0


def _rescale(grid: np.ndarray) -> np.ndarray:
    lo, hi = grid.min(), grid.max()
    if hi <= lo:
        return np.zeros_like(grid)
    return (grid - lo) * (255.0 / (hi - lo))


def cmd_attention(cfg: RunConfig) -> int:
    image = _load_image(cfg.image)
    model = load_checkpoint(cfg.checkpoint)
    mc = model.config
    patch = crop_patches(image, 1, mc.image_side_local, "grid")[0]
    glob = resize_global(image, mc.image_side_global) if model.use_global else None
    layer = cfg.attention_layer or mc.n_layers
    rec = attention_maps(patch, glob, model.backbone, model.bank, layer)
    prefix = cfg.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    out = {"layer": layer, "local": rec.cls_local.tolist(),
           "cls_row_sum": float(rec.mean[0].sum()),
           "max_row_error": float(np.abs(rec.per_head.sum(axis=-1) - 1.0).max()),
           "files": {"local": f"{prefix}_local.pgm"}}
    write_pgm(f"{prefix}_local.pgm", _rescale(rec.cls_local))
    if rec.cls_global is not None:
        write_pgm(f"{prefix}_global.pgm", _rescale(rec.cls_global))
        out["global"] = rec.cls_global.tolist()
        out["files"]["global"] = f"{prefix}_global.pgm"
    Path(f"{prefix}.json").write_text(json.dumps(out, sort_keys=True), encoding="utf-8")
    _emit(out)
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    fault = (inject_backward_fault(cfg.corrupt_backward) if cfg.corrupt_backward
             else contextlib.nullcontext())
    with fault:
        report = gradcheck_report(cfg)
    _emit(report)
    status = "passed" if report["passed"] else "FAILED"
    print(f"gradcheck {status}: max relative error {report['max_rel_error']:.3e} "
          f"(tolerance {report['tolerance']:.1e})", file=sys.stderr)
    return 0 if report["passed"] else 2


HANDLERS = {
    "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
    "score": cmd_score, "attention": cmd_attention, "gradcheck": cmd_gradcheck,
}


def _parse_overrides(extra: list[str]) -> dict[str, str]:
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise UsageError(f"missing value for --{key}") from None
        out[key] = value
    return out


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="prompt-dqa", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="key = value config file")
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = load_config(args.config, _parse_overrides(extra))
        return HANDLERS[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        print(f"prompt-dqa: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"prompt-dqa {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
