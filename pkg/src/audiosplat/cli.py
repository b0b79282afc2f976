"""Command-line entry point: gen, train, eval, render, bench, gradcheck.

Exit codes: 0 success, 2 usage/input error, 3 numeric failure. Every
command is deterministic given its config (seeds live in the config).
Heavy modules are imported lazily so ``--threads`` can pin BLAS pools
before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _pin_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got '{item}'")
        key, _, val = item.partition("=")
        out[key] = val
    return out


def _load_run_config(path, overrides):
    from .config import RunConfig

    if path:
        return RunConfig.from_file(path, overrides)
    cfg = RunConfig()
    cfg.update(overrides)
    return cfg


def cmd_gen(args):
    from .synthetic import generate_dataset

    cfg = _load_run_config(args.config, _parse_overrides(args.set))
    spec = cfg.scene_spec()
    summary = generate_dataset(spec, args.out)
    print(
        f"generated {summary['frames']} frames at {summary['resolution']}x"
        f"{summary['resolution']}, mask coverage {100*summary['mask_coverage']:.1f}%"
        + (
            f", generation sync r={summary['generation_sync_r']:.4f}"
            if summary["generation_sync_r"] is not None
            else ""
        )
    )
    return EXIT_OK


def cmd_train(args):
    from .synthetic import SyntheticDataset
    from .trainer import ModelBundle, train_coarse, train_fine

    cfg = _load_run_config(args.config, _parse_overrides(args.set))
    tc = cfg.train_config()
    if not os.path.isdir(args.data):
        print(f"dataset directory not found: {args.data}", file=sys.stderr)
        return EXIT_USAGE
    os.makedirs(args.out, exist_ok=True)
    dataset = SyntheticDataset(args.data)

    coarse_path = os.path.join(args.out, "coarse.ckpt")
    fine_path = os.path.join(args.out, "fine.ckpt")

    if args.stage in ("coarse", "both"):
        if args.resume and os.path.exists(coarse_path):
            bundle = ModelBundle.load(coarse_path)
            if bundle.iteration >= tc.coarse_iters:
                print(f"coarse stage already finished at iteration {bundle.iteration}; no-op")
                if args.stage == "coarse":
                    return EXIT_OK
        else:
            bundle, _ = train_coarse(dataset, tc, os.path.join(args.out, "coarse_log.csv"))
            bundle.save(coarse_path)
            print(f"coarse checkpoint -> {coarse_path}")

    if args.stage in ("fine", "both"):
        if args.resume and os.path.exists(fine_path):
            bundle = ModelBundle.load(fine_path)
            if bundle.iteration >= tc.coarse_iters + tc.fine_iters:
                print(f"fine stage already finished at iteration {bundle.iteration}; no-op")
                return EXIT_OK
        start = args.resume or coarse_path
        if not os.path.exists(start):
            print(f"fine stage needs a coarse checkpoint (missing {start})", file=sys.stderr)
            return EXIT_USAGE
        bundle = ModelBundle.load(start)
        bundle, _ = train_fine(dataset, bundle, tc, os.path.join(args.out, "fine_log.csv"))
        bundle.save(fine_path)
        print(f"fine checkpoint -> {fine_path}")
    return EXIT_OK


def cmd_eval(args):
    import numpy as np

    from .losses import pearson, psnr, roi_intensity, ssim
    from .synthetic import SyntheticDataset
    from .trainer import ModelBundle, dynamism_localization, infer_frame

    if not os.path.exists(args.checkpoint):
        print(f"checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return EXIT_USAGE
    bundle = ModelBundle.load(args.checkpoint)
    dataset = SyntheticDataset(args.data, load_truth=True)
    train_idx, hold_idx = dataset.split_indices(bundle.config.holdout_fraction)
    indices = train_idx if args.split == "train" else hold_idx

    rows = ["frame,psnr,ssim"]
    psnrs, ssims = [], []
    frames = []
    for t in indices:
        img = infer_frame(bundle, t, dataset.track, dataset.camera(t))
        target = dataset.frame(t)
        p = psnr(img, target)
        s = ssim(img, target)
        rows.append(f"{t},{p!r},{s!r}")
        psnrs.append(p)
        ssims.append(s)
        frames.append(img)

    dyn_in, dyn_out, ratio = dynamism_localization(bundle, dataset, indices)

    sync = None
    truth = dataset.truth
    if truth and len(indices) >= 3:
        u = np.asarray(truth["u"])[indices]
        if np.std(u) > 0:
            series = roi_intensity(frames, truth["roi"])
            sync = pearson(series, u)

    finite_psnrs = [p for p in psnrs if np.isfinite(p)]
    mean_psnr = float(np.mean(finite_psnrs)) if finite_psnrs else float("inf")
    mean_ssim = float(np.mean(ssims))
    summary = (
        f"# split={args.split} frames={len(indices)} psnr={mean_psnr:.4f} "
        f"ssim={mean_ssim:.6f} sync_correlation={'n/a' if sync is None else f'{sync:.6f}'} "
        f"dynamism_in={dyn_in:.6f} dynamism_out={dyn_out:.6f} ratio={ratio:.4f}"
    )
    rows.append(summary)
    if args.out:
        with open(args.out, "w") as f:
            f.write("\n".join(rows) + "\n")
    print(summary.lstrip("# "))
    return EXIT_OK


def cmd_render(args):
    from .audio import AudioFrameTrack
    from .imgio import write_pfm, write_png
    from .synthetic import camera_from_record
    from .trainer import ModelBundle, infer

    for path in (args.checkpoint, args.audio, args.poses):
        if not os.path.exists(path):
            print(f"input not found: {path}", file=sys.stderr)
            return EXIT_USAGE
    bundle = ModelBundle.load(args.checkpoint)
    track = AudioFrameTrack.load(args.audio)
    with open(args.poses) as f:
        cams = [camera_from_record(r) for r in json.load(f)]
    if track.n_frames != len(cams):
        print(
            f"track length {track.n_frames} != pose count {len(cams)}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    os.makedirs(args.out, exist_ok=True)
    frames = infer(bundle, track, cams)
    for t, frame in enumerate(frames):
        write_pfm(os.path.join(args.out, f"{t:05d}.pfm"), frame)
        write_png(os.path.join(args.out, f"{t:05d}.png"), frame)
    print(f"rendered {len(frames)} frames -> {args.out}")
    return EXIT_OK


def cmd_bench(args):
    from .bench import run_bench

    scales = tuple(int(s) for s in args.scales.split(",") if s != "")
    report = run_bench(
        base_res=args.H, channels=args.D, t_res=args.T, scales=scales, n_queries=args.queries
    )
    print(report.to_table())
    ap = next(r for r in report.results if r.variant == "audioplane")
    print(f"audioplane/dense4d element ratio: {ap.ratio_vs_dense:.4f}")
    if args.out:
        with open(args.out, "w") as f:
            f.write(report.to_csv())
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import check_modules, check_pipeline, check_primitives

    failures = []
    worst = (0.0, "none")
    if args.scope == "primitive":
        results = check_primitives(seed=args.seed)
    elif args.scope == "module":
        results = check_modules(seed=args.seed)
    else:
        results = [("pipeline", check_pipeline(seed=args.seed))]
    for name, rep in results:
        status = "pass" if rep.passed else "FAIL"
        print(f"{status}  {name:22s} max_rel_error={rep.max_rel_error:.3e} ({rep.n_coords} coords)")
        if rep.max_rel_error > worst[0]:
            worst = (rep.max_rel_error, f"{name}:{rep.worst_param}{list(rep.worst_index)}")
        if not rep.passed:
            failures.append(name)
    print(f"worst offender: {worst[1]} at {worst[0]:.3e}")
    if failures:
        print(f"FAILED scopes: {', '.join(failures)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="audiosplat", description=__doc__)
    ap.add_argument("--threads", type=int, default=1, help="cap internal parallelism")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="run coarse/fine training")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--stage", choices=("coarse", "fine", "both"), default="both")
    p.add_argument("--resume", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "holdout"), default="holdout")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("render", help="render frames for an audio+pose track")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("bench", help="representation memory/throughput comparison")
    p.add_argument("--H", type=int, default=64)
    p.add_argument("--D", type=int, default=16)
    p.add_argument("--T", type=int, default=64)
    p.add_argument("--scales", default="1,2,3,4")
    p.add_argument("--queries", type=int, default=100_000)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--scope", choices=("primitive", "module", "pipeline"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _pin_threads(max(1, args.threads))
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
