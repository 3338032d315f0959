"""Compare the compiled and pure-Python kernel backends.

Times forward render, backward pass, and the fused SSIM gradient on the
default benchmark scene and checks the backends agree.

    python3 benchmarks/bench_render.py [--repeat N] [--json out.json]
"""
import argparse
import json
import sys
import time

import numpy as np

from recgs.optim import SSIM_C1, SSIM_C2, gaussian_window
from recgs.splat import raster
from recgs.synth import BenchmarkSpec, make_benchmark


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_backend(backend, cloud, cam, target, repeat):
    a = cloud.arrays()
    h, w = target.shape[:2]
    args = (a["positions"], a["scales"], a["rotations"], a["opacities"], a["colors"], cam, w, h)
    img, ctx = raster.rasterize(*args, backend=backend)
    grad = np.sign(img - target) / img.size
    win = gaussian_window()
    mu = raster.blur(target, win, backend)
    sq = raster.blur(target * target, win, backend)
    out = dict(
        forward=best_of(lambda: raster.rasterize(*args, backend=backend), repeat),
        backward=best_of(lambda: raster.rasterize_backward(ctx, grad), repeat),
        ssim=best_of(lambda: raster.ssim_kernel(target, img, mu, sq, win, SSIM_C1, SSIM_C2, False, backend), repeat),
    )
    return out, img, raster.rasterize_backward(ctx, grad)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write timings here")
    args = ap.parse_args(argv)

    bench = make_benchmark(BenchmarkSpec())
    cam, target = bench.cameras[0], bench.observations[0]
    backends = raster.available_backends()
    results, imgs, grads = {}, {}, {}
    for be in backends:
        results[be], imgs[be], grads[be] = bench_backend(be, bench.cloud, cam, target, args.repeat)

    print(f"scene: {len(bench.cloud)} gaussians, {target.shape[1]}x{target.shape[0]}")
    print(f"{'backend':<10} {'forward ms':>11} {'backward ms':>12} {'ssim ms':>9}")
    for be, r in results.items():
        print(f"{be:<10} {1e3 * r['forward']:11.2f} {1e3 * r['backward']:12.2f} {1e3 * r['ssim']:9.2f}")
    if len(backends) == 2:
        a, b = backends
        img_err = float(np.max(np.abs(imgs[a] - imgs[b])))
        grad_err = max(float(np.max(np.abs(grads[a][k] - grads[b][k]))) for k in grads[a])
        speedup = {k: results["python"][k] / results["compiled"][k] for k in results["compiled"]}
        print(f"max |image diff| {img_err:.2e}, max |grad diff| {grad_err:.2e}")
        print("speedup " + ", ".join(f"{k} {v:.1f}x" for k, v in speedup.items()))
        results["agreement"] = dict(image=img_err, gradient=grad_err)
    else:
        print("compiled backend unavailable; only the fallback was timed", file=sys.stderr)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
