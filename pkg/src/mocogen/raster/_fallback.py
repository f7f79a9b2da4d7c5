"""Numpy implementation of the z-buffer triangle loop (used when the extension is absent)."""

import numpy as np


def rasterize(screen, faces, draw, height, width, near=1e-4):
    screen = np.ascontiguousarray(screen, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    face_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    depth = np.full((height, width), np.inf, dtype=np.float64)
    for f in range(len(faces)):
        if not draw[f]:
            continue
        (x0, y0, z0), (x1, y1, z1), (x2, y2, z2) = screen[faces[f]]
        if z0 <= near or z1 <= near or z2 <= near:
            continue
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        xmin = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2) - 0.5)), width - 1)
        ymin = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2) - 0.5)), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        py, px = np.mgrid[ymin:ymax + 1, xmin:xmax + 1].astype(np.float64)
        py += 0.5
        px += 0.5
        l0 = ((x2 - x1) * (py - y1) - (px - x1) * (y2 - y1)) / area
        l1 = ((x0 - x2) * (py - y2) - (px - x2) * (y0 - y2)) / area
        l2 = ((x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)) / area
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = 1.0 / (l0 / z0 + l1 / z1 + l2 / z2)
        win = inside & (z < depth[ymin:ymax + 1, xmin:xmax + 1])
        if not win.any():
            continue
        ys, xs = np.nonzero(win)
        ys = ys + ymin
        xs = xs + xmin
        zw = z[win]
        depth[ys, xs] = zw
        face_id[ys, xs] = f
        bary[ys, xs, 0] = (l0[win] / z0) * zw
        bary[ys, xs, 1] = (l1[win] / z1) * zw
        bary[ys, xs, 2] = (l2[win] / z2) * zw
    return face_id, bary, depth
