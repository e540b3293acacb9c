"""``rlpath`` command line: dataset generation, training, evaluation, error analysis, budgets.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.

Heavy modules are imported inside the command functions so ``--threads`` can
set the BLAS/OpenMP thread variables before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

SAMPLING_MS_PER_SPP = 69.0
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class CliConfigError(ValueError):
    pass


def budget_spp(time_budget_ms: float, inference_ms: float, sampling_ms_per_spp: float = SAMPLING_MS_PER_SPP) -> float:
    """Samples per pixel affordable after inference within a frame-time budget."""
    if not sampling_ms_per_spp > 0:
        raise CliConfigError(f"sampling time per spp must be positive, got {sampling_ms_per_spp}")
    return max(0.0, (time_budget_ms - inference_ms) / sampling_ms_per_spp)


def affordable(spp: float, decimals: int = 2) -> float:
    """Round down: a frame cannot spend more samples than its time allows."""
    scale = 10**decimals
    return math.floor(spp * scale + 1e-9) / scale


# ---- argument helpers


def parse_resolution(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise CliConfigError(f"resolution must look like 64x64, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise CliConfigError(f"resolution must be positive, got {text!r}")
    return h, w


def parse_budgets(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise CliConfigError(f"budgets must be a comma-separated list of numbers, got {text!r}") from None
    if not vals:
        raise CliConfigError("empty budget list")
    return vals


def read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliConfigError(f"config {path} must hold a JSON object")
    return doc


def _variant_overrides(args) -> dict:
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "variant", None):
        over["mode"] = args.variant
    if getattr(args, "resolution", None):
        over["resolution"] = list(parse_resolution(args.resolution))
    return over


def build_variant(doc: dict, args):
    from .pipeline import VariantConfig

    base = dict(doc.get("variant", {}))
    base.update(_variant_overrides(args))
    if getattr(args, "spp", None) is not None:
        base["spp_budget_avg"] = args.spp
    if getattr(args, "epochs", None) is not None:
        base["epochs"] = args.epochs
    if getattr(args, "budgets", None):
        base["eval_budgets"] = parse_budgets(args.budgets)
    return VariantConfig.from_dict(base)


def _data_dir(args, doc: dict) -> Path:
    path = args.data or doc.get("dataset", {}).get("path")
    if not path:
        raise CliConfigError("no dataset given: pass --data or set dataset.path in the config")
    return Path(path)


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


# ---- commands


def cmd_gen_data(args) -> int:
    from . import dataset
    from .scenegen.scene import get_scene

    doc = read_config(args.config)
    spec = doc.get("dataset", {})
    names = args.scenes.split(",") if args.scenes else spec.get("scenes", ["sphere_box", "mirror", "flicker", "checker"])
    res = parse_resolution(args.resolution) if args.resolution else tuple(spec.get("resolution", (64, 64)))
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    frames = args.frames if args.frames is not None else spec.get("frames")
    ref_spp = args.ref_spp if args.ref_spp is not None else int(spec.get("reference_spp", dataset.REFERENCE_SPP))
    out = args.out or spec.get("path")
    if not out:
        raise CliConfigError("no output directory: pass --out")
    scenes = [get_scene(n) for n in names]

    def progress(scene, f):
        if args.verbose:
            print(f"{scene} frame {f}", file=sys.stderr, flush=True)

    manifest = dataset.generate(scenes, out, seed, res, frames=frames, ref_spp=ref_spp, progress=progress)
    print(f"{out}: {manifest['frame_count']} frames, content hash {manifest['content_hash']}")
    return EXIT_OK


def cmd_train(args) -> int:
    from . import dataset
    from .pipeline import train

    doc = read_config(args.config)
    cfg = build_variant(doc, args)  # budget/variant contradictions fail here, before any data is read
    if not args.out:
        raise CliConfigError("no run directory: pass --out")
    data = dataset.load(_data_dir(args, doc))
    if tuple(data.resolution) != tuple(cfg.resolution):
        raise dataset.DataError(f"dataset resolution {data.resolution} differs from the run's {cfg.resolution}")
    log = (lambda s: print(s, flush=True)) if not args.quiet else None
    res = train(cfg, data, args.out, resume=not args.fresh, log=log)
    print(f"{args.out}: {res.epochs_run} epochs trained")
    return EXIT_OK


def _load_run(run: Path, doc: dict, args):
    from .pipeline import VariantConfig, build_models, load_checkpoint
    from .tensorgrad.checkpoint import CheckpointError

    cfg_path = run / "config.json"
    if not cfg_path.exists():
        raise CliConfigError(f"{run} has no config.json")
    stored = VariantConfig.from_dict(json.loads(cfg_path.read_text())["variant"])
    base = stored.to_dict()
    base.update(doc.get("variant", {}))
    base.update(_variant_overrides(args))
    cfg = VariantConfig.from_dict(base)
    models = build_models(cfg)
    try:
        extra = load_checkpoint(run / "checkpoint.bin", models)
    except FileNotFoundError:
        raise CliConfigError(f"{run} has no checkpoint.bin") from None
    except CheckpointError as exc:
        raise CliConfigError(f"config does not match the checkpoint: {exc}") from exc
    return cfg, models, extra


def cmd_eval(args) -> int:
    from . import dataset, imageio
    from .pipeline import check_budget, evaluate

    doc = read_config(args.config)
    run = Path(args.checkpoint)
    # the checkpoint's config governs; --seed here seeds evaluation, not the model
    eval_seed = args.seed if args.seed is not None else 0
    args.seed = None
    cfg, models, extra = _load_run(run, doc, args)
    if args.budgets:
        budgets = parse_budgets(args.budgets)
    else:
        # stored budgets, minus those the variant cannot run (sub-1 spp for A1/A2)
        budgets = [b for b in cfg.eval_budgets if _accepts(cfg.mode, b)]
    for b in budgets:
        check_budget(cfg.mode, b)
        if b > cfg.cap:
            raise CliConfigError(f"budget {b} exceeds the per-pixel cap {cfg.cap}")
    data = dataset.load(_data_dir(args, doc))
    if tuple(data.resolution) != tuple(cfg.resolution):
        raise dataset.DataError(f"dataset resolution {data.resolution} differs from the run's {cfg.resolution}")
    scenes = args.scenes.split(",") if args.scenes else None
    out = Path(args.out or run / "eval")
    out.mkdir(parents=True, exist_ok=True)
    rows = evaluate(cfg, models, data, budgets, seed=eval_seed, scenes=scenes, keep_frames=args.dump_frames)
    table = []
    for r in rows:
        table.append({"budget": r["budget"], "psnr": r["psnr"], "loss": r["loss"], "reward": r["reward"],
                      "frames": r["frames"]})
        if args.dump_frames:
            fdir = out / "frames" / f"spp_{r['budget']:g}"
            fdir.mkdir(parents=True, exist_ok=True)
            refdir = out / "frames" / "ref"
            refdir.mkdir(parents=True, exist_ok=True)
            for scene, f, img, counts in r["frame_data"]:
                stem = f"{scene}_{f:04d}"
                hwc = img.transpose(1, 2, 0)
                imageio.write_pfm(fdir / f"{stem}.pfm", hwc)
                imageio.write_png(fdir / f"{stem}.png", hwc)
                imageio.write_png16(fdir / f"{stem}.counts.png", counts)
                ref = data.scenes[scene].ref[f].transpose(1, 2, 0)
                imageio.write_pfm(refdir / f"{stem}.pfm", ref)
                imageio.write_png(refdir / f"{stem}.png", ref)
    _write_rows(out / "psnr.csv", table)
    for r in table:
        print(f"spp {r['budget']:g}: psnr {r['psnr']:.3f} dB over {r['frames']} frames")
    print(f"checkpoint epoch {extra['epoch']}, table written to {out / 'psnr.csv'}")
    return EXIT_OK


def _accepts(mode: str, spp: float) -> bool:
    from .pipeline import SubSampleBudgetError, check_budget

    try:
        check_budget(mode, spp)
    except SubSampleBudgetError:
        return False
    return True


def _frame_stems(d: Path) -> set[str]:
    return {p.stem for p in d.glob("*.pfm")}


def cmd_analyze(args) -> int:
    import numpy as np

    from . import imageio, quality

    dirs = {"A": Path(args.a), "B": Path(args.b), "ref": Path(args.ref)}
    for k, d in dirs.items():
        if not d.is_dir():
            raise FileNotFoundError(f"{k} directory {d} does not exist")
    stems = {k: _frame_stems(d) for k, d in dirs.items()}
    common = stems["A"] & stems["B"] & stems["ref"]
    everything = stems["A"] | stems["B"] | stems["ref"]
    if common != everything or not common:
        missing = {k: sorted(everything - s) for k, s in stems.items() if everything - s}
        detail = "; ".join(f"{k} lacks {', '.join(v)}" for k, v in missing.items()) or "no frames found"
        from .dataset import DataError

        raise DataError(f"frame sets are not aligned: {detail}")
    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    total = None
    edges = None
    diff_sum = 0.0
    pixels = 0
    rows = []
    heat = {"A": None, "B": None}
    for stem in sorted(common):
        a, b, r = (imageio.read_pfm(dirs[k] / f"{stem}.pfm") for k in ("A", "B", "ref"))
        res = quality.error_analysis(a.transpose(2, 0, 1), b.transpose(2, 0, 1), r.transpose(2, 0, 1), args.threshold)
        total = res.hist.copy() if total is None else total + res.hist
        edges = res.edges
        imageio.write_pfm(out / "maps" / f"{stem}.diff.pfm", res.diff.astype(np.float32))
        _save_rgb(out / "maps" / f"{stem}.binary.png", quality.sign_map_rgb(res.binary))
        _save_rgb(out / "maps" / f"{stem}.extreme.png", quality.sign_map_rgb(res.extreme))
        diff_sum += float(res.diff.sum())
        pixels += res.diff.size
        rows.append({"frame": stem, "mean_diff": float(res.diff.mean()),
                     "a_better": int((res.binary < 0).sum()), "b_better": int((res.binary > 0).sum()),
                     "extreme": int(np.count_nonzero(res.extreme))})
        for k in ("A", "B"):
            cpath = dirs[k] / f"{stem}.counts.png"
            if cpath.exists():
                c = imageio.read_png16(cpath).astype(np.float64)
                heat[k] = c if heat[k] is None else heat[k] + c
    quality.write_histogram_csv(out / "histogram.csv", total, edges)
    _write_rows(out / "frames.csv", rows)
    for k, h in heat.items():
        if h is not None:
            mean = h / len(common)
            imageio.write_pfm(out / f"heatmap_{k}.pfm", mean.astype(np.float32))
            peak = mean.max() if mean.max() > 0 else 1.0
            _save_rgb(out / f"heatmap_{k}.png", _viridis_like(mean / peak))
    summary = {"frames": len(common), "pixels": pixels, "mean_diff": diff_sum / max(pixels, 1),
               "histogram_mass": int(total.sum()), "threshold": args.threshold}
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    print(f"{len(common)} frames, mean MSE difference {summary['mean_diff']:.6g} (negative: A closer to ref)")
    return EXIT_OK


def _save_rgb(path: Path, rgb) -> None:
    from PIL import Image

    Image.fromarray(rgb).save(path)


def _viridis_like(x):
    """Dark blue to yellow ramp for count heatmaps."""
    import numpy as np

    x = np.clip(x, 0.0, 1.0)[..., None]
    lo = np.array([68, 1, 84], dtype=np.float64)
    mid = np.array([33, 145, 140], dtype=np.float64)
    hi = np.array([253, 231, 37], dtype=np.float64)
    rgb = np.where(x < 0.5, lo + (mid - lo) * (2 * x), mid + (hi - mid) * (2 * x - 1))
    return np.round(rgb).astype(np.uint8)


def cmd_budget(args) -> int:
    spp = budget_spp(args.time_budget, args.inference, args.per_spp)
    print(f"{spp:.4f} spp ({affordable(spp):.2f} affordable)")
    return EXIT_OK


# ---- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlpath", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads (set before numpy loads)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_help="run seed"):
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("--seed", type=int, default=None, help=seed_help)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        sp.add_argument("--resolution", help="HxW, e.g. 64x64")

    g = sub.add_parser("gen-data", help="render a clip dataset")
    common(g, "dataset seed")
    g.add_argument("--scenes", help="comma-separated builtin names or scene JSON paths")
    g.add_argument("--frames", type=int, default=None, help="frames per scene (multiple of 20)")
    g.add_argument("--ref-spp", type=int, default=None)
    g.add_argument("-v", "--verbose", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one variant")
    common(t)
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--variant", help="ours, A1_grad_approx, A2_uniform, B1_no_encoder, B2_no_temporal, C_averaged, small")
    t.add_argument("--spp", type=float, default=None, help="average training budget")
    t.add_argument("--budgets", help="evaluation budgets stored with the run")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint")
    t.add_argument("-q", "--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PSNR table for a trained run")
    common(e, "evaluation seed")
    e.add_argument("--checkpoint", required=True, help="run directory written by train")
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--variant", help="must match the checkpoint")
    e.add_argument("--budgets", help="comma-separated spp budgets")
    e.add_argument("--scenes", help="override the held-out scenes")
    e.add_argument("--dump-frames", action="store_true", help="write PFM/PNG frames and count maps")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="per-pixel error comparison of two frame sets")
    a.add_argument("--a", required=True, help="frames of method A (PFM)")
    a.add_argument("--b", required=True, help="frames of method B (PFM)")
    a.add_argument("--ref", required=True, help="reference frames (PFM)")
    a.add_argument("--threshold", type=float, default=0.01)
    a.add_argument("--out", required=True)
    a.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("budget", help="spp affordable within a frame-time budget")
    b.add_argument("time_budget", type=float, help="frame-time budget in ms")
    b.add_argument("inference", type=float, help="network inference time in ms")
    b.add_argument("per_spp", type=float, nargs="?", default=SAMPLING_MS_PER_SPP, help="sampling ms per spp")
    b.set_defaults(func=cmd_budget)
    return p


def _exit_code(exc: BaseException) -> int | None:
    from .dataset import DataError
    from .pipeline import ConfigError
    from .scenegen.scene import SceneError

    if isinstance(exc, (CliConfigError, ConfigError, SceneError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, FileNotFoundError, OSError)):
        return EXIT_DATA
    if isinstance(exc, FloatingPointError):
        return EXIT_DIVERGED
    return None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be >= 1")
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"rlpath {args.command}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
