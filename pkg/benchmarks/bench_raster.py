"""Compiled vs pure-Python rasterizer: forward and forward+backward wall time (speedup on the latter).

    python3 benchmarks/bench_raster.py [--splats 500 2000] [--size 64 128] [--repeats 3]
"""
import argparse
import statistics
import time

import torch

from hybridsplat import raster
from hybridsplat.model import SceneTensors
from hybridsplat.scene import Camera, init_synthetic


def _time(fn, repeats: int) -> float:
    fn()  # warm-up
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def bench(count: int, size: int, backend: str, repeats: int) -> tuple[float, float]:
    raster.set_backend(backend)
    model = SceneTensors.from_scene(init_synthetic(dict(count=count, flatten=0.2, face_res=4, seed=0)), requires_grad=True)
    cam = Camera.look_at((0.0, -3.0, 1.0), (0, 0, 0), fov_deg=40, width=size, height=size)
    t = model.tensors()

    def forward():
        with torch.no_grad():
            raster.rasterize_tensors(t, cam, {"c": t["albedo"], "normal": "normal", "depth": "depth"})

    def backward():
        for v in t.values():
            v.grad = None
        gb = raster.rasterize_tensors(t, cam, {"c": t["albedo"], "normal": "normal", "depth": "depth"})
        (gb["c"].sum() + gb.normal().sum() + gb.depth().sum()).backward()

    return _time(forward, repeats), _time(backward, repeats)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--splats", type=int, nargs="+", default=[500, 2000])
    p.add_argument("--size", type=int, nargs="+", default=[64, 128])
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args()
    torch.set_num_threads(1)
    backends = ["python"] + (["compiled"] if raster._raster_ext is not None else [])
    print(f"{'splats':>7} {'size':>5} {'backend':>9} {'fwd ms':>9} {'fwd+bwd ms':>11} {'speedup':>8}")
    for n in args.splats:
        for s in args.size:
            base = None
            for b in backends:
                f, fb = bench(n, s, b, args.repeats)
                base = base or fb
                print(f"{n:>7} {s:>5} {b:>9} {f * 1e3:>9.1f} {fb * 1e3:>11.1f} {base / fb:>7.2f}x")
    raster.set_backend("auto")


if __name__ == "__main__":
    main()
