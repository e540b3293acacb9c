"""Compiled vs numpy tracer throughput.

    python3 benchmarks/bench_tracer.py [--resolution 64x64] [--spp 8] [--repeat 3]
"""

import argparse
import time

import numpy as np

from rlpath.scenegen import tracer
from rlpath.scenegen.scene import get_scene


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--resolution", default="64x64")
    p.add_argument("--spp", type=int, default=8)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--scenes", default="sphere_box,mirror,flicker,checker")
    args = p.parse_args()
    h, w = (int(v) for v in args.resolution.split("x"))
    backends = ["python"] + (["compiled"] if tracer._ctracer is not None else [])
    print(f"{'scene':<12}{'backend':<10}{'Mpaths/s':>10}{'ms/spp':>10}  identical")
    for name in args.scenes.split(","):
        fs = get_scene(name).at(3, w, h)
        results = {}
        for b in backends:
            tracer.set_backend(b)
            sec, img = timed(lambda: tracer.render_reference(fs, 3, spp=args.spp, seed=1), args.repeat)
            results[b] = img
            paths = h * w * args.spp
            same = "" if b == "python" else str(np.array_equal(img, results["python"]))
            print(f"{name:<12}{b:<10}{paths / sec / 1e6:>10.3f}{1e3 * sec / args.spp:>10.2f}  {same}")
    if len(backends) == 1:
        print("compiled tracer not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
