# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled z-buffer triangle loop. Arithmetic mirrors ``_fallback.rasterize``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, fabs, INFINITY

cnp.import_array()


def rasterize(double[:, ::1] screen, long long[:, ::1] faces, unsigned char[::1] draw,
              int height, int width, double near=1e-4):
    cdef Py_ssize_t nf = faces.shape[0]
    face_id_arr = np.full((height, width), -1, dtype=np.int64)
    bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    depth_arr = np.full((height, width), np.inf, dtype=np.float64)
    cdef long long[:, ::1] face_id = face_id_arr
    cdef double[:, :, ::1] bary = bary_arr
    cdef double[:, ::1] depth = depth_arr
    cdef Py_ssize_t f, i0, i1, i2
    cdef int x, y, xmin, xmax, ymin, ymax
    cdef double x0, y0, z0, x1, y1, z1, x2, y2, z2, area, px, py
    cdef double w0, w1, w2, l0, l1, l2, iz, z
    for f in range(nf):
        if not draw[f]:
            continue
        i0 = faces[f, 0]
        i1 = faces[f, 1]
        i2 = faces[f, 2]
        x0 = screen[i0, 0]; y0 = screen[i0, 1]; z0 = screen[i0, 2]
        x1 = screen[i1, 0]; y1 = screen[i1, 1]; z1 = screen[i1, 2]
        x2 = screen[i2, 0]; y2 = screen[i2, 1]; z2 = screen[i2, 2]
        if z0 <= near or z1 <= near or z2 <= near:
            continue
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if fabs(area) < 1e-12:
            continue
        xmin = <int>floor(min(x0, min(x1, x2)) - 0.5)
        xmax = <int>ceil(max(x0, max(x1, x2)) - 0.5)
        ymin = <int>floor(min(y0, min(y1, y2)) - 0.5)
        ymax = <int>ceil(max(y0, max(y1, y2)) - 0.5)
        if xmin < 0: xmin = 0
        if ymin < 0: ymin = 0
        if xmax > width - 1: xmax = width - 1
        if ymax > height - 1: ymax = height - 1
        for y in range(ymin, ymax + 1):
            py = y + 0.5
            for x in range(xmin, xmax + 1):
                px = x + 0.5
                w0 = (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1)
                w1 = (x0 - x2) * (py - y2) - (px - x2) * (y0 - y2)
                w2 = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)
                l0 = w0 / area
                l1 = w1 / area
                l2 = w2 / area
                if l0 < 0 or l1 < 0 or l2 < 0:
                    continue
                iz = l0 / z0 + l1 / z1 + l2 / z2
                z = 1.0 / iz
                if z < depth[y, x]:
                    depth[y, x] = z
                    face_id[y, x] = f
                    bary[y, x, 0] = (l0 / z0) * z
                    bary[y, x, 1] = (l1 / z1) * z
                    bary[y, x, 2] = (l2 / z2) * z
    return face_id_arr, bary_arr, depth_arr
