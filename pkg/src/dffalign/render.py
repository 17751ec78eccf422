"""Software rendering of model instances: z-buffer rasterization, vertex
visibility, Lambertian shading, patch-label projection, dataset generation.

Depth is -(R q)_z (smaller = nearer).  Pixel centers sit on integer
coordinates; a pixel belongs to a triangle if its center is strictly inside,
or on an edge that the top-left fill rule assigns to that triangle.  Ties in
depth keep the lowest triangle id.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .facemodel import (
    AlbedoParams,
    CameraParams,
    FaceMesh,
    ShapeParams,
    camera_depths,
    project_points,
    synthesize_albedo,
    synthesize_shape,
    vec_to_mat,
)

log = logging.getLogger(__name__)

NO_TRIANGLE = -1
NO_PATCH = -1
AMBIENT = 0.25
VISIBILITY_EPS_SCALE = 1e-4


@dataclass
class DepthBuffer:
    """Per-pixel nearest depth and owning triangle id (NO_TRIANGLE where empty)."""

    depth: np.ndarray        # (H, W) float64, +inf where uncovered
    triangle_id: np.ndarray  # (H, W) int32

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]


@dataclass
class RenderedSample:
    """One synthetic training image with its generating parameters and labels."""

    image: np.ndarray          # (H, W, 3) float64 in [0, 1]
    shape: ShapeParams
    albedo: AlbedoParams
    camera: CameraParams
    light: np.ndarray          # unit 3-vector, camera frame
    landmarks68: np.ndarray    # (2, 68) pixel coordinates
    landmarks160: np.ndarray   # (2, 160)
    visibility160: np.ndarray  # (160,) bool, tested in this image's buffer


@dataclass
class LabeledImage:
    """Pixel labels from a projected segmentation; image may be attached or None."""

    labels: np.ndarray  # (H, W) int32, NO_PATCH for background
    image: np.ndarray = None


@dataclass
class RenderConfig:
    width: int = 64
    height: int = 64
    count: int = 200
    yaw_limit: float = np.pi / 2
    pitch_limit: float = np.deg2rad(20.0)
    roll_limit: float = np.deg2rad(20.0)
    height_fraction: tuple = (0.6, 0.9)


# ---------------------------------------------------------------------------
# rasterization


def _edge(ax, ay, bx, by, px, py):
    """Signed doubled area of (a, b, p): (b - a) x (p - a).

    Positive when p lies to the left of a->b in x-right/y-down coordinates.
    Both the scan here and any reference reimplementation must use this
    exact expression so results agree bit for bit.
    """
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _accepts_zero(ax, ay, bx, by):
    """Top-left fill rule for the directed edge a->b of a positively
    oriented triangle: an on-edge pixel belongs to the triangle iff the
    edge goes up (dy < 0) or is horizontal going right (dy == 0, dx > 0)."""
    dy = by - ay
    dx = bx - ax
    return dy < 0 or (dy == 0 and dx > 0)


def _raster_core(xy, depths, triangles, width, height, want_bary):
    """Scanline-free z-buffer fill.

    xy: (2, n) screen coordinates; depths: (n,); triangles: (t, 3).
    Returns (depth (H,W), tid (H,W) int32, bary (H,W,3) or None); bary is
    stored with respect to the triangle's original vertex order.
    """
    zbuf = np.full((height, width), np.inf, dtype=np.float64)
    tid = np.full((height, width), NO_TRIANGLE, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64) if want_bary else None

    xs = xy[0]
    ys = xy[1]
    for t in range(triangles.shape[0]):
        i0, i1, i2 = triangles[t]
        x0, y0, d0 = xs[i0], ys[i0], depths[i0]
        x1, y1, d1 = xs[i1], ys[i1], depths[i1]
        x2, y2, d2 = xs[i2], ys[i2], depths[i2]

        area = _edge(x0, y0, x1, y1, x2, y2)
        if area == 0.0:
            continue
        flipped = area < 0.0
        if flipped:
            x1, y1, d1, x2, y2, d2 = x2, y2, d2, x1, y1, d1
            area = -area

        lox = max(0, int(np.ceil(min(x0, x1, x2))))
        hix = min(width - 1, int(np.floor(max(x0, x1, x2))))
        loy = max(0, int(np.ceil(min(y0, y1, y2))))
        hiy = min(height - 1, int(np.floor(max(y0, y1, y2))))
        if lox > hix or loy > hiy:
            continue

        px = np.arange(lox, hix + 1, dtype=np.float64)
        py = np.arange(loy, hiy + 1, dtype=np.float64)
        pxg, pyg = np.meshgrid(px, py)

        w0 = _edge(x1, y1, x2, y2, pxg, pyg)
        w1 = _edge(x2, y2, x0, y0, pxg, pyg)
        w2 = _edge(x0, y0, x1, y1, pxg, pyg)

        inside = (
            ((w0 > 0) | ((w0 == 0) & _accepts_zero(x1, y1, x2, y2)))
            & ((w1 > 0) | ((w1 == 0) & _accepts_zero(x2, y2, x0, y0)))
            & ((w2 > 0) | ((w2 == 0) & _accepts_zero(x0, y0, x1, y1)))
        )
        if not inside.any():
            continue

        d = (w0 * d0 + w1 * d1 + w2 * d2) / area
        win = inside & (d < zbuf[loy : hiy + 1, lox : hix + 1])
        if not win.any():
            continue

        sub = (slice(loy, hiy + 1), slice(lox, hix + 1))
        zbuf[sub][win] = d[win]
        tid[sub][win] = t
        if want_bary:
            l0 = w0[win] / area
            l1 = w1[win] / area
            l2 = w2[win] / area
            if flipped:
                l1, l2 = l2, l1
            bary[sub][win] = np.stack([l0, l1, l2], axis=-1)

    return zbuf, tid, bary


def rasterize(mesh, camera, width, height):
    """Render the mesh's depth into a width x height DepthBuffer."""
    if width < 1 or height < 1:
        raise ValueError("image size must be positive")
    xy = project_points(mesh.vertices, camera)
    d = camera_depths(mesh.vertices, camera)
    zbuf, tid, _ = _raster_core(xy, d, mesh.triangles, width, height, want_bary=False)
    return DepthBuffer(depth=zbuf, triangle_id=tid)


# ---------------------------------------------------------------------------
# visibility


def visibility_epsilon(depths):
    """Depth tolerance: 1e-4 of the camera-space depth range (floored)."""
    rng = float(np.max(depths) - np.min(depths))
    return max(VISIBILITY_EPS_SCALE * rng, 1e-12)


def vertex_visibility(mesh, camera, vertex_ids, buffer):
    """True for vertices whose projection lands in the image and whose depth
    is within eps of the z-buffer value at the nearest pixel."""
    vertex_ids = np.asarray(vertex_ids, dtype=np.int64).reshape(-1)
    if vertex_ids.size and (
        vertex_ids.min() < 0 or vertex_ids.max() >= mesh.n_vertices
    ):
        raise ValueError("vertex id out of range")

    all_d = camera_depths(mesh.vertices, camera)
    eps = visibility_epsilon(all_d)

    xy = project_points(mesh.vertices[:, vertex_ids], camera)
    d = all_d[vertex_ids]
    px = np.rint(xy[0]).astype(np.int64)
    py = np.rint(xy[1]).astype(np.int64)

    h, w = buffer.depth.shape
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    vis = np.zeros(vertex_ids.shape[0], dtype=bool)
    if inside.any():
        zb = buffer.depth[py[inside], px[inside]]
        vis[inside] = d[inside] <= zb + eps
    return vis


def landmark_visibility(mesh, camera, vertex_ids, resolution=128):
    """Visibility in a canonical square buffer sharing the camera's rotation.

    Under weak perspective, occlusion depends only on the rotation, so the
    mesh is refit (5% margin) into a resolution x resolution frame and
    tested there.  Used for landmark visibility during alignment.
    """
    r = camera.rotation()
    cam = r @ mesh.vertices
    lo = cam[:2].min(axis=1)
    hi = cam[:2].max(axis=1)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-12))
    s = 0.9 * (resolution - 1) / span
    center = 0.5 * (lo + hi)
    tx = (resolution - 1) / 2 - s * center[0]
    ty = (resolution - 1) / 2 - s * center[1]
    canon = CameraParams(
        scale=s, pitch=camera.pitch, yaw=camera.yaw, roll=camera.roll, tx=tx, ty=ty
    )
    buf = rasterize(mesh, canon, resolution, resolution)
    return vertex_visibility(mesh, canon, vertex_ids, buf)


# ---------------------------------------------------------------------------
# shading


def _vertex_normals(cam_verts, triangles):
    """Area-weighted per-vertex normals from camera-space positions."""
    p0 = cam_verts[:, triangles[:, 0]].T
    p1 = cam_verts[:, triangles[:, 1]].T
    p2 = cam_verts[:, triangles[:, 2]].T
    fn = np.cross(p1 - p0, p2 - p0)  # length ~ 2 * area, so area weighting is free
    normals = np.zeros((cam_verts.shape[1], 3), dtype=np.float64)
    for c in range(3):
        np.add.at(normals, triangles[:, c], fn)
    norms = np.linalg.norm(normals, axis=1)
    good = norms > 1e-12
    normals[good] /= norms[good, None]
    normals[~good] = (0.0, 0.0, 1.0)
    return normals.T  # (3, n)


def render_image(model, shape, albedo, camera, light, width, height):
    """Lambertian render with flat ambient: albedo * (max(0, n.l) + 0.25),
    clamped to [0, 1], black background.  Returns a RenderedSample."""
    light = np.asarray(light, dtype=np.float64).reshape(3)
    ln = np.linalg.norm(light)
    if abs(ln - 1.0) > 1e-6:
        raise ValueError("light must be a unit vector")

    mesh = synthesize_shape(model, shape)
    alb = synthesize_albedo(model, albedo).reshape(-1, 3)  # (n, 3) rgb
    r = camera.rotation()
    cam = r @ mesh.vertices
    xy = camera.scale * cam[:2] + np.array([[camera.tx], [camera.ty]])
    d = -cam[2]

    zbuf, tid, bary = _raster_core(xy, d, mesh.triangles, width, height, want_bary=True)
    normals = _vertex_normals(cam, mesh.triangles)  # (3, n)

    img = np.zeros((height, width, 3), dtype=np.float64)
    cov = tid != NO_TRIANGLE
    if cov.any():
        tri = mesh.triangles[tid[cov]]        # (m, 3) vertex ids
        lam = bary[cov]                       # (m, 3)
        n_px = np.einsum("mk,mkc->mc", lam, normals.T[tri])
        nn = np.linalg.norm(n_px, axis=1)
        ok = nn > 1e-12
        n_px[ok] /= nn[ok, None]
        n_px[~ok] = (0.0, 0.0, 1.0)
        a_px = np.einsum("mk,mkc->mc", lam, alb[tri])
        shade = np.maximum(0.0, n_px @ light) + AMBIENT
        img[cov] = np.clip(a_px * shade[:, None], 0.0, 1.0)

    buf = DepthBuffer(depth=zbuf, triangle_id=tid)
    lm160_xy = xy[:, model.lm160]
    vis160 = vertex_visibility(mesh, camera, model.lm160, buf)
    return RenderedSample(
        image=img,
        shape=shape,
        albedo=albedo,
        camera=camera,
        light=light,
        landmarks68=lm160_xy[:, :68].copy(),
        landmarks160=lm160_xy,
        visibility160=vis160,
    )


# ---------------------------------------------------------------------------
# patch labels


def project_patch_labels(model, shape, camera, segmentation, width, height, image=None):
    """Rasterize and replace each covered pixel's triangle id with its patch id."""
    if segmentation.patch_of.shape[0] != model.triangles.shape[0]:
        raise ValueError("segmentation does not match the model's triangle count")
    mesh = synthesize_shape(model, shape)
    buf = rasterize(mesh, camera, width, height)
    labels = np.full(buf.triangle_id.shape, NO_PATCH, dtype=np.int32)
    cov = buf.triangle_id != NO_TRIANGLE
    labels[cov] = segmentation.patch_of[buf.triangle_id[cov]]
    return LabeledImage(labels=labels, image=image)


# ---------------------------------------------------------------------------
# dataset generation


def _fit_camera(mesh, pitch, yaw, roll, frac, ox, oy, width, height):
    """Scale/translate the rotated mesh into the frame: projected height is
    `frac` of the image height (width-capped), center jittered within the
    free margin by ox, oy in [-1, 1]."""
    r = CameraParams(1.0, pitch, yaw, roll, 0.0, 0.0).rotation()
    cam = r @ mesh.vertices
    lo = cam[:2].min(axis=1)
    hi = cam[:2].max(axis=1)
    w0 = float(hi[0] - lo[0])
    h0 = float(hi[1] - lo[1])
    s = frac * height / max(h0, 1e-12)
    if s * w0 > 0.96 * width:
        s = 0.96 * width / w0
    cx, cy = 0.5 * (lo + hi)
    mx = max(0.0, (width - 1) - s * w0 - 2.0)
    my = max(0.0, (height - 1) - s * h0 - 2.0)
    tx = (width - 1) / 2 + 0.5 * ox * mx - s * cx
    ty = (height - 1) / 2 + 0.5 * oy * my - s * cy
    return CameraParams(scale=s, pitch=pitch, yaw=yaw, roll=roll, tx=tx, ty=ty)


def _draw_sample(model, rng, config):
    """Fixed draw order: p_id, p_exp, p_alb, pitch, yaw, roll, height
    fraction, center offsets, light (gaussian direction, z folded positive)."""
    p_id = rng.standard_normal(model.m_id) * np.sqrt(model.id_eigen)
    p_exp = rng.standard_normal(model.m_exp) * np.sqrt(model.exp_eigen)
    p_alb = rng.standard_normal(model.alb_basis.shape[1]) * np.sqrt(model.id_eigen)
    pitch = rng.uniform(-config.pitch_limit, config.pitch_limit)
    yaw = rng.uniform(-config.yaw_limit, config.yaw_limit)
    roll = rng.uniform(-config.roll_limit, config.roll_limit)
    frac = rng.uniform(*config.height_fraction)
    ox, oy = rng.uniform(-1.0, 1.0, size=2)
    light = rng.standard_normal(3)
    light[2] = abs(light[2])
    norm = np.linalg.norm(light)
    if norm < 1e-9:  # astronomically unlikely; keep the draw count fixed
        light = np.array([0.0, 0.0, 1.0])
        norm = 1.0
    light /= norm

    shape = ShapeParams(p_id=p_id, p_exp=p_exp)
    mesh = synthesize_shape(model, shape)
    camera = _fit_camera(mesh, pitch, yaw, roll, frac, ox, oy, config.width, config.height)
    return shape, AlbedoParams(p_alb=p_alb), camera, light


def generate_dataset(model, count, seed, config=None):
    """Render `count` random samples; each sample's randomness comes from an
    independent child of SeedSequence(seed), so the list is reproducible."""
    if config is None:
        config = RenderConfig()
    if count < 0:
        raise ValueError("count must be non-negative")
    children = np.random.SeedSequence(seed).spawn(count)
    out = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        shape, alb, camera, light = _draw_sample(model, rng, config)
        out.append(
            render_image(model, shape, alb, camera, light, config.width, config.height)
        )
        if (i + 1) % 50 == 0:
            log.info("rendered %d / %d samples", i + 1, count)
    return out
