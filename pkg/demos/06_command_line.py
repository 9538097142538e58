"""
The command-line tool end to end
================================

Each step calls the same entry point as ``prompt-dqa`` on the shell, with a
small model and corpus so the whole script runs in under a minute.
"""

import tempfile
from pathlib import Path

from prompt_dqa.cli import main

work = Path(tempfile.mkdtemp())
cfg = str(Path(__file__).resolve().parents[1] / "configs" / "gradcheck.cfg")
common = ["--config", cfg, "--data_dir", str(work / "data"), "--checkpoint", str(work / "model.pdqa")]

steps = [
    ["synth", *common, "--n_scenes", "6", "--dehazers_per_scene", "4", "--image_side", "48"],
    ["train", *common, "--epochs", "5", "--batch_size", "8", "--learning_rate", "1e-2"],
    ["eval", *common],
    ["score", *common, "--image", str(work / "data" / "images" / "c000_d03.ppm")],
    ["attention", *common, "--image", str(work / "data" / "images" / "c000_d03.ppm"),
     "--out_prefix", str(work / "maps")],
    ["gradcheck", *common, "--gradcheck_images", "1"],
]
for argv in steps:
    print("$ prompt-dqa", " ".join(a if len(a) < 40 else "..." for a in argv), flush=True)
    code = main(argv)
    print(f"exit {code}\n", flush=True)

# a corrupted backward rule must fail the gradient check
print("exit", main(["gradcheck", *common, "--gradcheck_images", "1", "--corrupt_backward", "matmul"]))
