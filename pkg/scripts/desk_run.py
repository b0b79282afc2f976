#!/usr/bin/env python3
"""End-to-end desk-scale experiment: generate, train both stages, evaluate.

Writes everything under --workdir and prints the holdout metrics at the end.
"""

import argparse
import os
import subprocess
import sys

DEFAULT_CONFIG = """\
# desk-scale talking-scene run
seed=0
frames=250
resolution=64
init_points=500
coarse_iters=3000
fine_iters=8000
plane_res=16
feat_dim=16
scales=1,2
fusion=concat
lambda_lpips=0.05
lambda_mask=0.1
margin=0.2
densify=1
log_every=50
"""


def run(cmd):
    print("+", " ".join(cmd), flush=True)
    proc = subprocess.run(cmd)
    if proc.returncode != 0:
        sys.exit(proc.returncode)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/desk")
    ap.add_argument("--config", default=None, help="override the built-in config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    cfg_path = args.config
    if cfg_path is None:
        cfg_path = os.path.join(args.workdir, "run.cfg")
        with open(cfg_path, "w") as f:
            f.write(DEFAULT_CONFIG)

    data = os.path.join(args.workdir, "data")
    ckpt = os.path.join(args.workdir, "model")
    overrides = [x for kv in args.set for x in ("--set", kv)]
    base = [sys.executable, "-m", "audiosplat.cli"]

    run(base + ["gen", "--config", cfg_path, "--out", data] + overrides)
    run(base + ["train", "--data", data, "--config", cfg_path, "--stage", "both", "--out", ckpt] + overrides)
    run(base + ["eval", "--checkpoint", os.path.join(ckpt, "fine.ckpt"), "--data", data,
                "--split", "holdout", "--out", os.path.join(args.workdir, "holdout.csv")])
    run(base + ["eval", "--checkpoint", os.path.join(ckpt, "fine.ckpt"), "--data", data,
                "--split", "train", "--out", os.path.join(args.workdir, "train.csv")])


if __name__ == "__main__":
    main()
