"""Scaled ablation: ours vs A2_uniform, B2_no_temporal, A1_grad_approx, plus the sub-1-spp run.

    python3 experiments/ablation.py --data DESK --work RUNS --report results/ablation.json

Runs are resumable (each keeps its own checkpoint) and the report is
rewritten after every finished run, so an interrupted sweep picks up where
it stopped.
"""

from __future__ import annotations

import argparse
import json
import platform
import time
from pathlib import Path

import numpy as np

from rlpath import dataset
from rlpath.pipeline import VariantConfig, build_models, evaluate, load_checkpoint, train

VARIANTS = ("ours", "A2_uniform", "B2_no_temporal", "A1_grad_approx")
EVAL_SEED = 20240


def final_psnr(cfg: VariantConfig, run: Path, data, budgets) -> dict:
    models = build_models(cfg)
    load_checkpoint(run / "checkpoint.bin", models)
    rows = evaluate(cfg, models, data, budgets, seed=EVAL_SEED)
    return {f"{r['budget']:g}": r["psnr"] for r in rows}


def run_one(cfg: VariantConfig, run: Path, data, budgets, log) -> dict:
    t0 = time.time()
    res = train(cfg, data, run, log=lambda s: log(f"  {cfg.mode} seed {cfg.seed}: {s}"))
    psnr = final_psnr(cfg, run, data, budgets)
    return {"mode": cfg.mode, "seed": cfg.seed, "spp": cfg.spp_budget_avg, "epochs": cfg.epochs,
            "test_psnr": psnr, "train_seconds": time.time() - t0, "epochs_run_now": res.epochs_run}


def summarize(runs: list[dict]) -> dict:
    out = {}
    for mode in VARIANTS:
        vals = [r["test_psnr"]["2"] for r in runs if r["mode"] == mode and r["spp"] == 2.0]
        if vals:
            out[mode] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
    return out


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--data", required=True)
    p.add_argument("--work", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--skip-sub1", action="store_true")
    args = p.parse_args()
    data = dataset.load(args.data)
    work = Path(args.work)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report = json.loads(report_path.read_text()) if report_path.exists() else {}
    report.update({
        "dataset_hash": data.manifest["content_hash"],
        "resolution": list(data.resolution),
        "epochs": args.epochs,
        "seeds": [int(s) for s in args.seeds.split(",")],
        "machine": platform.platform(),
    })
    done = {(r["mode"], r["seed"], r["spp"]) for r in report.get("runs", [])}
    runs = report.setdefault("runs", [])

    def log(s):
        print(s, flush=True)

    def save():
        report["summary"] = summarize(runs)
        report_path.write_text(json.dumps(report, indent=1))

    jobs = [(m, int(s), 2.0) for s in args.seeds.split(",") for m in args.variants.split(",")]
    if not args.skip_sub1:
        jobs.append(("ours", 0, 0.5))
    for mode, seed, spp in jobs:
        if (mode, seed, spp) in done:
            continue
        cfg = VariantConfig(mode=mode, seed=seed, spp_budget_avg=spp, epochs=args.epochs,
                            resolution=tuple(data.resolution))
        budgets = [2.0] if spp == 2.0 else [0.01, 0.5]
        log(f"{mode} seed {seed} at {spp} spp")
        runs.append(run_one(cfg, work / f"{mode}_s{seed}_spp{spp:g}", data, budgets, log))
        log(f"  -> {runs[-1]['test_psnr']}  ({runs[-1]['train_seconds']:.0f}s)")
        save()
    save()
    for mode, s in report["summary"].items():
        log(f"{mode:<16} {s['mean']:.3f} +- {s['std']:.3f} dB (n={s['n']})")


if __name__ == "__main__":
    main()
