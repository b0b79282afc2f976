#!/usr/bin/env python3
"""Sweep the mask-loss margin and report sync correlation per setting.

Reuses one dataset and one coarse checkpoint; each margin gets its own fine
stage. Mirrors the saliency-margin trend study at desk scale.
"""

import argparse
import os
import subprocess
import sys

CONFIG = """\
seed=0
frames=250
resolution=64
init_points=500
coarse_iters=3000
fine_iters=8000
plane_res=16
feat_dim=16
scales=1,2
lambda_mask=0.1
log_every=200
"""


def run(cmd):
    print("+", " ".join(cmd), flush=True)
    proc = subprocess.run(cmd)
    if proc.returncode != 0:
        sys.exit(proc.returncode)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/margin_sweep")
    ap.add_argument("--margins", default="0.05,0.1,0.2,0.3")
    args = ap.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    cfg_path = os.path.join(args.workdir, "run.cfg")
    with open(cfg_path, "w") as f:
        f.write(CONFIG)
    data = os.path.join(args.workdir, "data")
    base = [sys.executable, "-m", "audiosplat.cli"]

    run(base + ["gen", "--config", cfg_path, "--out", data])
    coarse_dir = os.path.join(args.workdir, "coarse")
    run(base + ["train", "--data", data, "--config", cfg_path, "--stage", "coarse", "--out", coarse_dir])

    for margin in args.margins.split(","):
        out = os.path.join(args.workdir, f"margin_{margin}")
        run(base + [
            "train", "--data", data, "--config", cfg_path, "--stage", "fine",
            "--resume", os.path.join(coarse_dir, "coarse.ckpt"), "--out", out,
            "--set", f"margin={margin}",
        ])
        run(base + [
            "eval", "--checkpoint", os.path.join(out, "fine.ckpt"), "--data", data,
            "--split", "holdout", "--out", os.path.join(out, "holdout.csv"),
        ])


if __name__ == "__main__":
    main()
