import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mocogen import raster
from mocogen.body import BodyMesh, PoseVector, pose_mesh, vertex_normals
from mocogen.codec import build_palette, decode_colors
from mocogen.raster import (
    AMBIENT,
    BACKGROUND,
    Camera,
    RasterError,
    _fallback,
    frontal_camera,
    load_png,
    project,
    rasterize,
    rasterize_motion_frame,
    render_shaded_frame,
    save_png,
)
from geometry import icosphere

try:
    from mocogen.raster import _core
except ImportError:  # pragma: no cover
    _core = None


def axis_camera(size=64, focal=60.0):
    return Camera(focal=focal, principal=(size / 2, size / 2), height=size, width=size)


def mesh_from(verts, faces, face_parts=None, normals=None):
    verts = np.asarray(verts, float)
    faces = np.asarray(faces)
    if normals is None:
        normals, _ = vertex_normals(verts, faces)
    fp = np.zeros(len(faces), int) if face_parts is None else np.asarray(face_parts)
    vp = np.zeros(len(verts), int)
    for f, p in zip(faces, fp):
        vp[f] = p
    return BodyMesh(verts, faces, normals, vp, fp)


def brute_force_fragments(mesh, camera):
    """Per-pixel oracle: solve for barycentrics of every pixel ray against every drawn face."""
    pix, depth, _ = project(camera, mesh.vertices)
    cam_n = mesh.vertex_normals @ camera.rotation.T
    H, W = camera.height, camera.width
    ys, xs = np.mgrid[0:H, 0:W]
    P = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], 1)
    best = np.full(len(P), np.inf)
    fid = np.full(len(P), -1)
    margin = np.full(len(P), np.inf)
    for f, tri in enumerate(mesh.faces):
        if np.all(cam_n[tri][:, 2] > 0):
            continue
        a, b, c = pix[tri]
        M = np.array([b - a, c - a]).T
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        uv = np.linalg.solve(M, (P - a).T).T
        lam = np.column_stack([1 - uv.sum(1), uv])
        inside = np.all(lam >= -1e-12, axis=1)
        z = 1.0 / (lam @ (1.0 / depth[tri]))
        edge = np.min(np.abs(lam), axis=1) < 1e-9
        closer = inside & (z < best)
        margin = np.where(inside & ~closer, np.minimum(margin, z - best), margin)
        margin = np.where(closer, best - z, margin)
        margin = np.where(edge & inside, 0.0, margin)
        best = np.where(closer, z, best)
        fid = np.where(closer, f, fid)
    return fid.reshape(H, W), best.reshape(H, W), margin.reshape(H, W)


def test_project_optical_axis():
    cam = axis_camera()
    px, d, ok = project(cam, np.array([0, 0, 2.5]))
    np.testing.assert_allclose(px, cam.principal)
    assert d == 2.5 and ok


def test_project_pinhole_offset():
    cam = axis_camera()
    px, _, _ = project(cam, np.array([0.4, 0, 2.0]))
    assert px[0] - cam.principal[0] == pytest.approx(cam.focal * 0.4 / 2.0)


def test_project_matches_homogeneous_oracle(rng):
    cam = frontal_camera()
    pts = rng.normal(size=(200, 3)) + np.array([0, 1, 0])
    K = np.array([[cam.focal, 0, cam.principal[0], 0], [0, cam.focal, cam.principal[1], 0], [0, 0, 1, 0]])
    E = np.eye(4)
    E[:3, :3], E[:3, 3] = cam.rotation, cam.translation
    h = (K @ E @ np.c_[pts, np.ones(len(pts))].T).T
    px, d, ok = project(cam, pts)
    np.testing.assert_allclose(px[ok], h[ok, :2] / h[ok, 2:], atol=1e-9)
    np.testing.assert_allclose(d, h[:, 2], atol=1e-12)


def test_behind_camera_marked_unprojectable():
    _, _, ok = project(axis_camera(), np.array([[0, 0, -1.0], [0, 0, 5e-5]]))
    assert not ok.any()


def test_camera_validation():
    with pytest.raises(RasterError):
        Camera(focal=0, principal=(0, 0))
    with pytest.raises(RasterError):
        Camera(focal=10, principal=(0, 0), height=40, width=64)


def test_nearer_triangle_wins():
    cam = axis_camera(32, focal=30)
    n = np.tile([0, 0, -1.0], (6, 1))
    far = [[-1, -1, 4], [1, -1, 4], [0, 1, 4]]
    near = [[-0.5, -1, 2], [0.5, -1, 2], [0, 0.6, 2]]
    mesh = mesh_from(far + near, [[0, 1, 2], [3, 4, 5]], face_parts=[0, 1], normals=n)
    frame = rasterize_motion_frame(mesh, cam, build_palette(2))
    # reversed draw order must give the same image
    mesh_rev = mesh_from(near + far, [[0, 1, 2], [3, 4, 5]], face_parts=[1, 0], normals=n)
    frame_rev = rasterize_motion_frame(mesh_rev, cam, build_palette(2))
    _, parts, _, _ = decode_colors(frame.pixels, build_palette(2))
    assert (parts[16, 16], frame.coverage[16, 16]) == (1, True)
    np.testing.assert_array_equal(frame.pixels, frame_rev.pixels)


def test_sphere_normals_match_analytic():
    cam = axis_camera(64, focal=70)
    v, f = icosphere(4)
    radius, center = 1.0, np.array([0.0, 0.0, 3.0])
    mesh = mesh_from(v * radius + center, f)
    palette = build_palette(1)
    frame = rasterize_motion_frame(mesh, cam, palette)
    dn, _, _, inf = decode_colors(frame.pixels, palette)
    from scipy.ndimage import binary_erosion

    inner = binary_erosion(frame.coverage, iterations=2)
    ys, xs = np.nonzero(inner)
    rays = np.stack([(xs + 0.5 - 32) / 70, (ys + 0.5 - 32) / 70, np.ones(len(xs))], 1)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    b = rays @ center
    t = b - np.sqrt(b * b - (center @ center - radius**2))
    exact = rays * t[:, None] - center
    ang = np.degrees(np.arccos(np.clip(np.sum(dn[ys, xs] * exact, 1), -1, 1)))
    assert inner.sum() > 500
    assert ang.max() < 3.0
    assert not inf[frame.coverage].any()


@pytest.mark.parametrize("seed", [0, 1])
def test_codec_closure_against_oracle(skeleton, seed):
    rng = np.random.default_rng(seed)
    cam = frontal_camera(32, 32)
    mesh = pose_mesh(skeleton, PoseVector(rng.normal(scale=0.6, size=(8, 3))))
    palette = build_palette(skeleton.num_parts)
    frame = rasterize_motion_frame(mesh, cam, palette)
    _, parts, _, inf = decode_colors(frame.pixels, palette)
    assert not inf[frame.coverage].any()
    assert np.all(inf[~frame.coverage])  # background sentinel
    fid, _, margin = brute_force_fragments(mesh, cam)
    sure = margin > 1e-9
    assert np.array_equal(frame.coverage[sure], fid[sure] >= 0)
    cov = sure & (fid >= 0)
    assert np.array_equal(parts[cov], mesh.face_parts[fid[cov]])
    assert cov.sum() > 0.9 * frame.coverage.sum()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_depth_property_random_pairs(seed):
    rng = np.random.default_rng(seed)
    cam = axis_camera(16, focal=16)
    verts = np.c_[rng.uniform(-1, 1, size=(6, 2)), rng.uniform(1.5, 4, size=6)]
    mesh = mesh_from(verts, [[0, 1, 2], [3, 4, 5]], face_parts=[0, 1], normals=np.tile([0, 0, -1.0], (6, 1)))
    frag = rasterize(mesh, cam)
    fid, best, margin = brute_force_fragments(mesh, cam)
    sure = margin > 1e-9
    assert np.array_equal(frag.face_id[sure], fid[sure])
    np.testing.assert_allclose(frag.depth[sure & (fid >= 0)], best[sure & (fid >= 0)], rtol=1e-12)


def test_shading_facing_and_perpendicular():
    cam = axis_camera(16, focal=16)
    verts = [[-0.5, -0.5, 2], [0.5, -0.5, 2], [0, 0.5, 2]]
    albedo = np.array([[0.9, 0.5, 0.2]])
    facing = mesh_from(verts, [[0, 1, 2]], normals=np.tile([0, 0, -1.0], (3, 1)))
    img = render_shaded_frame(facing, cam, light_dir=np.array([0, 0, 1.0]), albedo_per_part=albedo)
    np.testing.assert_allclose(img[8, 8], np.clip(albedo[0] + AMBIENT, 0, 1))
    assert np.all(img[0, 0] == BACKGROUND)
    side = mesh_from(verts, [[0, 1, 2]], normals=np.tile([0, 0, -1.0], (3, 1)))
    img = render_shaded_frame(side, cam, light_dir=np.array([1.0, 0, 0]), albedo_per_part=albedo)
    np.testing.assert_allclose(img[8, 8], AMBIENT)


def test_shaded_deterministic(skeleton):
    mesh = pose_mesh(skeleton, PoseVector(np.random.default_rng(5).normal(size=(8, 3))))
    albedo = np.random.default_rng(0).uniform(size=(8, 3))
    a = render_shaded_frame(mesh, frontal_camera(), np.array([0.3, 0.5, 1]), albedo)
    b = render_shaded_frame(mesh, frontal_camera(), np.array([0.3, 0.5, 1]), albedo)
    assert a.tobytes() == b.tobytes()


@pytest.mark.skipif(_core is None, reason="compiled kernel not built")
@pytest.mark.parametrize("seed", range(3))
def test_compiled_matches_fallback(skeleton, seed):
    rng = np.random.default_rng(seed)
    mesh = pose_mesh(skeleton, PoseVector(rng.normal(size=(8, 3))))
    cam = frontal_camera()
    pix, depth, _ = project(cam, mesh.vertices)
    screen = np.ascontiguousarray(np.c_[pix, depth])
    draw = np.ones(len(mesh.faces), np.uint8)
    faces = np.ascontiguousarray(mesh.faces, dtype=np.int64)
    a = _core.rasterize(screen, faces, draw, 64, 64)
    b = _fallback.rasterize(screen, faces, draw, 64, 64)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_temporal_coherence(skeleton):
    rng = np.random.default_rng(11)
    rot = rng.normal(scale=0.3, size=(8, 3))
    rot2 = rot.copy()
    rot2[4] += np.array([0, 0, 0.01])
    palette = build_palette(8)
    cam = frontal_camera()
    a = rasterize_motion_frame(pose_mesh(skeleton, PoseVector(rot)), cam, palette)
    b = rasterize_motion_frame(pose_mesh(skeleton, PoseVector(rot2)), cam, palette)
    both = a.coverage & b.coverage
    assert np.abs(a.pixels[both] - b.pixels[both]).mean() <= 0.05


def test_offscreen_body_empty_coverage(skeleton):
    mesh = pose_mesh(skeleton, PoseVector(np.zeros((8, 3)), np.array([50.0, 0, 0])))
    frame = rasterize_motion_frame(mesh, frontal_camera(), build_palette(8))
    assert frame.coverage_ratio == 0.0 and not frame.pixels.any()


def test_png_round_trip_8bit(skeleton, tmp_path):
    mesh = pose_mesh(skeleton, PoseVector.rest(8))
    frame = rasterize_motion_frame(mesh, frontal_camera(), build_palette(8))
    save_png(frame.pixels, tmp_path / "k.png")
    back = load_png(tmp_path / "k.png")
    assert np.abs(back - frame.pixels).max() <= 0.5 / 255 + 1e-12
