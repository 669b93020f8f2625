"""Benchmark the compiled splat kernels against the pure-Python fallback.

Two granularities:

* kernel: calls composite_forward / composite_backward from both backend
  modules directly on identical depth-sorted inputs, verifying that the
  outputs agree before timing anything.
* end-to-end: re-runs this script in a subprocess with
  HEADLIFT_SPLAT_BACKEND forced, timing rasterize() forward + backward
  through autograd (backend binding happens at import, hence the subprocess).

Run from the repository root:

    python3 benchmarks/bench_splat.py
    python3 benchmarks/bench_splat.py --skip-e2e --sizes 64 --counts 256 1024
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

ALPHA_LIMIT = 0.999
ALPHA_MIN = 1e-5


def synth_kernel_inputs(n, size, seed):
    """Depth-sorted pixel-space gaussians matching the rasterizer's layout."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(-2.0, size + 2.0, size=(n, 2))
    theta = rng.uniform(0.0, np.pi, n)
    lam1 = rng.uniform(1.0, 30.0, n)
    lam2 = rng.uniform(1.0, lam1)
    c, s = np.cos(theta), np.sin(theta)
    cov_a = c * c * lam1 + s * s * lam2
    cov_b = c * s * (lam1 - lam2)
    cov_c = s * s * lam1 + c * c * lam2
    det = cov_a * cov_c - cov_b * cov_b
    inv_cov = np.stack([cov_c / det, -cov_b / det, cov_a / det], axis=1)
    opacity = rng.uniform(0.2, 0.95, n)
    color = rng.uniform(0.0, 1.0, (n, 3))
    depth = np.sort(rng.uniform(1.0, 5.0, n))
    qmax = 2.0 * np.log(opacity / ALPHA_MIN)
    radius = np.sqrt(np.maximum(qmax, 0.0) * np.maximum(lam1, lam2))
    background = np.array([0.0, 0.0, 0.0])
    grads = (rng.standard_normal((size, size, 3)),
             rng.standard_normal((size, size)),
             rng.standard_normal((size, size)))
    fwd = (means, inv_cov, opacity, color, depth, radius,
           size, size, background, ALPHA_LIMIT, ALPHA_MIN)
    return fwd, grads


def time_call(fn, args, reps):
    best = float("inf")
    out = None
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b):
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y))))
               for x, y in zip(a, b))


def bench_kernels(counts, sizes, reps):
    from headlift.splat import _reference

    try:
        from headlift.splat import _kernels
    except ImportError:
        _kernels = None
        print("compiled backend unavailable; timing the reference kernels only")

    header = f"{'gaussians':>9} {'image':>7} {'pass':>8} {'reference':>11} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    worst = 0.0
    for n in counts:
        for size in sizes:
            fwd_args, grads = synth_kernel_inputs(n, size, seed=n * 1000 + size)
            t_ref_f, out_ref = time_call(_reference.composite_forward, fwd_args, reps)
            bwd_args = fwd_args + (out_ref[0], out_ref[2], out_ref[3]) + grads
            t_ref_b, g_ref = time_call(_reference.composite_backward, bwd_args, reps)
            rows = {"forward": (t_ref_f, None), "backward": (t_ref_b, None)}
            if _kernels is not None:
                t_cmp_f, out_cmp = time_call(_kernels.composite_forward, fwd_args, reps)
                t_cmp_b, g_cmp = time_call(_kernels.composite_backward, bwd_args, reps)
                worst = max(worst, max_diff(out_ref, out_cmp),
                            max_diff(g_ref, g_cmp))
                rows = {"forward": (t_ref_f, t_cmp_f), "backward": (t_ref_b, t_cmp_b)}
            for name, (t_ref, t_cmp) in rows.items():
                cmp_txt = "-" if t_cmp is None else f"{t_cmp * 1e3:8.2f}ms"
                ratio = "-" if t_cmp is None else f"{t_ref / t_cmp:7.1f}x"
                print(f"{n:>9} {size:>4}px {name:>8} {t_ref * 1e3:9.2f}ms "
                      f"{cmp_txt:>10} {ratio:>8}")
    if _kernels is not None:
        print(f"\nmax abs output difference across all passes: {worst:.3e}")
        if worst > 1e-9:
            raise SystemExit("backends disagree; benchmark numbers are meaningless")


def e2e_probe(n, size, reps):
    """Child-process body: time rasterize() under the already-forced backend."""
    import torch

    from headlift.geometry import GaussianCloud, orbit_camera
    from headlift.splat import active_backend, rasterize

    torch.manual_seed(0)
    g = torch.Generator().manual_seed(n * 7 + size)
    positions = (torch.rand(n, 3, generator=g, dtype=torch.float64) - 0.5) * 0.9
    scales = 0.01 + 0.03 * torch.rand(n, 3, generator=g, dtype=torch.float64)
    rotations = torch.randn(n, 4, generator=g, dtype=torch.float64)
    rotations = rotations / rotations.norm(dim=1, keepdim=True)
    opacities = 0.2 + 0.7 * torch.rand(n, generator=g, dtype=torch.float64)
    colors = torch.rand(n, 3, generator=g, dtype=torch.float64)
    for t in (positions, scales, rotations, opacities, colors):
        t.requires_grad_(True)
    cloud = GaussianCloud(positions, scales, rotations, opacities, colors)
    camera = orbit_camera(30.0, 10.0, distance=1.8, width=size, height=size)

    best_f = best_b = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        out = rasterize(cloud, camera, background=(0.0, 0.0, 0.0))
        t1 = time.perf_counter()
        loss = out.image.sum() + out.alpha.sum()
        loss.backward()
        t2 = time.perf_counter()
        best_f = min(best_f, t1 - t0)
        best_b = min(best_b, t2 - t1)
        for t in (positions, scales, rotations, opacities, colors):
            t.grad = None
    print(json.dumps({"backend": active_backend(), "forward": best_f,
                      "backward": best_b}))


def bench_e2e(counts, sizes, reps):
    print(f"\nrasterize() end to end (n gaussians, forward / backward, best of {reps})")
    header = f"{'gaussians':>9} {'image':>7} {'pass':>8} {'reference':>11} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n in counts:
        for size in sizes:
            results = {}
            for backend in ("reference", "compiled"):
                env = dict(os.environ, HEADLIFT_SPLAT_BACKEND=backend)
                proc = subprocess.run(
                    [sys.executable, os.path.abspath(__file__), "--probe",
                     str(n), str(size), str(reps)],
                    env=env, capture_output=True, text=True)
                if proc.returncode != 0:
                    print(f"{n:>9} {size:>4}px  {backend} backend failed:")
                    print(proc.stderr.strip().splitlines()[-1])
                    continue
                results[backend] = json.loads(proc.stdout.strip().splitlines()[-1])
            if "reference" not in results:
                continue
            for name in ("forward", "backward"):
                t_ref = results["reference"][name]
                if "compiled" in results:
                    t_cmp = results["compiled"][name]
                    cmp_txt = f"{t_cmp * 1e3:8.2f}ms"
                    ratio = f"{t_ref / t_cmp:7.1f}x"
                else:
                    cmp_txt, ratio = "-", "-"
                print(f"{n:>9} {size:>4}px {name:>8} {t_ref * 1e3:9.2f}ms "
                      f"{cmp_txt:>10} {ratio:>8}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--counts", type=int, nargs="+", default=[256, 1024, 4096])
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 128])
    parser.add_argument("--reps", type=int, default=3)
    parser.add_argument("--skip-e2e", action="store_true",
                        help="only run the direct kernel comparison")
    parser.add_argument("--probe", type=int, nargs=3, metavar=("N", "SIZE", "REPS"),
                        help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.probe:
        e2e_probe(*args.probe)
        return

    print(f"direct kernel calls (best of {args.reps})")
    bench_kernels(args.counts, args.sizes, args.reps)
    if not args.skip_e2e:
        bench_e2e(args.counts, args.sizes, args.reps)


if __name__ == "__main__":
    main()
