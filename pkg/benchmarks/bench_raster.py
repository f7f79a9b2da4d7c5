"""Compare the compiled triangle loop with the numpy fallback.

    python benchmarks/bench_raster.py [--size 64] [--repeat 20]

Renders posed bodies with both kernels, checks the buffers agree exactly and
prints per-frame timings.
"""

import argparse
import time

import numpy as np

from mocogen.body import PoseVector, forward_kinematics, load_skeleton, rest_part_meshes, skin_mesh
from mocogen.raster import NEAR, _fallback, frontal_camera, project

try:
    from mocogen.raster._core import rasterize as compiled
except ImportError:
    compiled = None


def kernel_inputs(mesh, camera):
    pix, depth, _ = project(camera, mesh.vertices)
    screen = np.ascontiguousarray(np.concatenate([pix, depth[:, None]], axis=1))
    cam_normals = mesh.vertex_normals @ camera.rotation.T
    faces = np.ascontiguousarray(mesh.faces, dtype=np.int64)
    draw = np.ascontiguousarray(~np.all(cam_normals[faces][..., 2] > 0, axis=1), dtype=np.uint8)
    return screen, faces, draw, camera.height, camera.width, NEAR


def time_kernel(fn, inputs, repeat):
    best = float("inf")
    for args in inputs:
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn(*args)
            best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--poses", type=int, default=4)
    args = ap.parse_args()

    skel = load_skeleton()
    parts = rest_part_meshes(skel)
    camera = frontal_camera(args.size, args.size)
    rng = np.random.default_rng(0)
    inputs = []
    for _ in range(args.poses):
        pose = PoseVector(rng.normal(0, 0.3, (skel.num_joints, 3)), np.zeros(3))
        mesh = skin_mesh(skel, forward_kinematics(skel, pose), parts)
        inputs.append(kernel_inputs(mesh, camera))
    print(f"{args.size}x{args.size}, {len(inputs[0][1])} triangles, best of {args.repeat} x {args.poses} poses")

    slow = time_kernel(_fallback.rasterize, inputs, max(1, args.repeat // 4))
    print(f"  fallback  {1e3 * slow:8.2f} ms/frame")
    if compiled is None:
        print("  compiled  (extension not built)")
        return
    for a in inputs:
        ref, got = _fallback.rasterize(*a), compiled(*a)
        assert all(np.array_equal(x, y) for x, y in zip(ref, got)), "kernels disagree"
    fast = time_kernel(compiled, inputs, args.repeat)
    print(f"  compiled  {1e3 * fast:8.2f} ms/frame  ({slow / fast:.1f}x, buffers identical)")


if __name__ == "__main__":
    main()
