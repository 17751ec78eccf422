"""Linear face model: shape/albedo synthesis, pose, and weak-perspective projection.

Coordinate conventions used throughout the package:

* A "coordinate vector" packs per-vertex triples vertex-major:
  [x1, y1, z1, x2, y2, z2, ...] (length 3n).  ``vec.reshape(-1, 3)`` gives
  one row per vertex; the matching 3 x n matrix is its transpose.
* Model frame: x right, y down, z toward the viewer (a face looking at the
  camera has its nose at large z).
* Rotation R = Rz(roll) @ Ry(yaw) @ Rx(pitch), right-handed factors.
* Image frame: origin at the top-left, x right, y down, pixel centers on
  integer coordinates.
* Projection of a model point q: s * (R q)_{xy} + (tx, ty); depth is
  -(R q)_z, so smaller depth means closer to the camera.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

from .container import read_container, write_container


# ---------------------------------------------------------------------------
# types


@dataclass
class FaceMesh:
    """Triangle mesh: vertices as a 3 x n array, triangles as t x 3 vertex ids."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[0] != 3:
            raise ValueError(f"vertices must be 3 x n, got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError(f"triangles must be t x 3, got {self.triangles.shape}")
        n = self.vertices.shape[1]
        if self.triangles.size:
            if self.triangles.min() < 0 or self.triangles.max() >= n:
                raise ValueError("triangle indices out of range")
            same = (
                (self.triangles[:, 0] == self.triangles[:, 1])
                | (self.triangles[:, 1] == self.triangles[:, 2])
                | (self.triangles[:, 0] == self.triangles[:, 2])
            )
            if same.any():
                raise ValueError("degenerate triangle (repeated vertex index)")

    @property
    def n_vertices(self):
        return self.vertices.shape[1]


@dataclass
class ShapeParams:
    """Identity + expression coefficients."""

    p_id: np.ndarray
    p_exp: np.ndarray

    def __post_init__(self):
        self.p_id = np.asarray(self.p_id, dtype=np.float64).reshape(-1)
        self.p_exp = np.asarray(self.p_exp, dtype=np.float64).reshape(-1)

    def as_vector(self):
        return np.concatenate([self.p_id, self.p_exp])


@dataclass
class AlbedoParams:
    p_alb: np.ndarray

    def __post_init__(self):
        self.p_alb = np.asarray(self.p_alb, dtype=np.float64).reshape(-1)


@dataclass
class CameraParams:
    """Weak-perspective pose: scale, Euler angles (radians), image translation."""

    scale: float
    pitch: float
    yaw: float
    roll: float
    tx: float
    ty: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def as_vector(self):
        return np.array(
            [self.scale, self.pitch, self.yaw, self.roll, self.tx, self.ty],
            dtype=np.float64,
        )

    @classmethod
    def from_vector(cls, w):
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        if w.shape[0] != 6:
            raise ValueError("camera vector must have 6 entries")
        return cls(*w)

    def rotation(self):
        return rotation_from_angles(self.pitch, self.yaw, self.roll)


@dataclass
class MorphableModel:
    """Linear shape/albedo model over a shared triangle topology.

    Basis matrices have unit-norm columns; per-mode variances live in
    id_eigen / exp_eigen.  Landmark index lists pick out the 160-point
    dense set and its 68-point prefix (standard annotation order: jaw,
    brows, nose, eyes, mouth).
    """

    mean_shape: np.ndarray   # (3n,)
    id_basis: np.ndarray     # (3n, m1)
    exp_basis: np.ndarray    # (3n, m2)
    id_eigen: np.ndarray     # (m1,)
    exp_eigen: np.ndarray    # (m2,)
    mean_albedo: np.ndarray  # (3n,) rgb per vertex in [0,1]
    alb_basis: np.ndarray    # (3n, m1)
    triangles: np.ndarray    # (t, 3)
    lm160: np.ndarray        # (160,) vertex ids
    lm68: np.ndarray         # (68,) vertex ids, == lm160[:68]

    def __post_init__(self):
        self.mean_shape = np.asarray(self.mean_shape, dtype=np.float64).reshape(-1)
        self.mean_albedo = np.asarray(self.mean_albedo, dtype=np.float64).reshape(-1)
        self.id_basis = np.asarray(self.id_basis, dtype=np.float64)
        self.exp_basis = np.asarray(self.exp_basis, dtype=np.float64)
        self.alb_basis = np.asarray(self.alb_basis, dtype=np.float64)
        self.id_eigen = np.asarray(self.id_eigen, dtype=np.float64).reshape(-1)
        self.exp_eigen = np.asarray(self.exp_eigen, dtype=np.float64).reshape(-1)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.lm160 = np.asarray(self.lm160, dtype=np.int64).reshape(-1)
        self.lm68 = np.asarray(self.lm68, dtype=np.int64).reshape(-1)

        n3 = self.mean_shape.shape[0]
        if n3 % 3:
            raise ValueError("mean shape length must be a multiple of 3")
        if self.id_basis.shape[0] != n3 or self.exp_basis.shape[0] != n3:
            raise ValueError("basis rows must match mean shape length")
        if self.alb_basis.shape[0] != n3 or self.mean_albedo.shape[0] != n3:
            raise ValueError("albedo rows must match mean shape length")
        if self.id_eigen.shape[0] != self.id_basis.shape[1]:
            raise ValueError("id_eigen length must match id_basis columns")
        if self.exp_eigen.shape[0] != self.exp_basis.shape[1]:
            raise ValueError("exp_eigen length must match exp_basis columns")
        if (self.id_eigen <= 0).any() or (self.exp_eigen <= 0).any():
            raise ValueError("eigen variances must be positive")
        if self.lm160.shape[0] != 160 or self.lm68.shape[0] != 68:
            raise ValueError("landmark lists must have 160 and 68 entries")
        if not np.array_equal(self.lm68, self.lm160[:68]):
            raise ValueError("lm68 must be the first 68 entries of lm160")

    @property
    def n_vertices(self):
        return self.mean_shape.shape[0] // 3

    @property
    def m_id(self):
        return self.id_basis.shape[1]

    @property
    def m_exp(self):
        return self.exp_basis.shape[1]

    def mean_mesh(self):
        return FaceMesh(vec_to_mat(self.mean_shape), self.triangles)


# ---------------------------------------------------------------------------
# small layout helpers


def vec_to_mat(vec):
    """(3n,) coordinate vector -> 3 x n matrix."""
    return np.asarray(vec, dtype=np.float64).reshape(-1, 3).T


def mat_to_vec(mat):
    """3 x n matrix -> (3n,) coordinate vector."""
    return np.asarray(mat, dtype=np.float64).T.reshape(-1)


# ---------------------------------------------------------------------------
# synthesis and projection


def synthesize_shape(model, params):
    """Mean shape plus identity and expression basis blends, as a FaceMesh."""
    if params.p_id.shape[0] != model.m_id:
        raise ValueError(f"p_id must have {model.m_id} entries")
    if params.p_exp.shape[0] != model.m_exp:
        raise ValueError(f"p_exp must have {model.m_exp} entries")
    vec = model.mean_shape + model.id_basis @ params.p_id + model.exp_basis @ params.p_exp
    return FaceMesh(vec_to_mat(vec), model.triangles)


def synthesize_albedo(model, params):
    """Per-vertex rgb from the albedo model, clamped to [0, 1].  Returns (3n,)."""
    if params.p_alb.shape[0] != model.alb_basis.shape[1]:
        raise ValueError(f"p_alb must have {model.alb_basis.shape[1]} entries")
    vec = model.mean_albedo + model.alb_basis @ params.p_alb
    return np.clip(vec, 0.0, 1.0)


def rotation_from_angles(pitch, yaw, roll):
    """R = Rz(roll) @ Ry(yaw) @ Rx(pitch); each factor is the standard
    right-handed rotation about its axis."""
    cp, sp_ = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cr, sr = np.cos(roll), np.sin(roll)
    rx = np.array([[1, 0, 0], [0, cp, -sp_], [0, sp_, cp]], dtype=np.float64)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


def project_points(points, camera):
    """Weak-perspective projection of a 3 x k point array -> 2 x k pixels."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(3, 1)
    if points.shape[0] != 3:
        raise ValueError(f"points must be 3 x k, got {points.shape}")
    r = camera.rotation()
    cam = r @ points
    return camera.scale * cam[:2] + np.array([[camera.tx], [camera.ty]])


def camera_depths(points, camera):
    """Depth -(R q)_z for a 3 x k array; smaller is nearer."""
    points = np.asarray(points, dtype=np.float64)
    r = camera.rotation()
    return -(r[2] @ points)


# ---------------------------------------------------------------------------
# synthetic model generation


def _smooth_columns(cols, triangles, n, rounds=8, keep=0.3):
    """Damped neighbor averaging of per-vertex fields.

    cols: (n, c) array of per-vertex scalars; each round replaces f with
    keep * f + (1 - keep) * mean over graph neighbors.  Turns white noise
    into smooth deformation fields while keeping the columns linearly
    independent (the operator is full rank).
    """
    i = np.concatenate(
        [triangles[:, 0], triangles[:, 1], triangles[:, 2],
         triangles[:, 1], triangles[:, 2], triangles[:, 0]]
    )
    j = np.concatenate(
        [triangles[:, 1], triangles[:, 2], triangles[:, 0],
         triangles[:, 0], triangles[:, 1], triangles[:, 2]]
    )
    w = sp.coo_matrix((np.ones(i.shape[0]), (i, j)), shape=(n, n)).tocsr()
    w.data[:] = 1.0  # collapse duplicate edge entries to plain adjacency
    deg = np.maximum(w.sum(axis=1).A1, 1.0)
    out = cols
    for _ in range(rounds):
        out = keep * out + (1.0 - keep) * (w @ out) / deg[:, None]
    return out


def _farthest_point_sample(points, count, start):
    """Greedy farthest-point sampling; returns `count` vertex ids."""
    n = points.shape[1]
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    d2 = np.sum((points - points[:, [start]]) ** 2, axis=0)
    for k in range(1, count):
        nxt = int(np.argmax(d2))
        chosen[k] = nxt
        d2 = np.minimum(d2, np.sum((points - points[:, [nxt]]) ** 2, axis=0))
    return chosen


def generate_synthetic_model(seed, n_vertices=500, m_id=8, m_exp=6):
    """Build a deterministic face-like morphable model from a seed.

    The mean surface is the front patch of an ellipsoid (with a nose bump
    and painted eye/mouth albedo markings), triangulated by a jittered
    staggered grid in parameter space.  Shape and albedo bases are smoothed
    white-noise fields orthonormalized by QR, so basis columns have unit
    norm and identity Gram matrix; mode variances decay geometrically.
    """
    if n_vertices < 200:
        raise ValueError("need at least 200 vertices")
    if m_id < 1 or m_exp < 1:
        raise ValueError("basis sizes must be positive")
    if m_id + m_exp >= 3 * n_vertices:
        raise ValueError("more basis columns than coordinates")

    rng = np.random.default_rng(seed)

    # --- staggered parameter grid with exactly n_vertices points
    rows = max(int(round(np.sqrt(n_vertices))), 2)
    base, extra = divmod(n_vertices, rows)
    counts = [base + 1 if r < extra else base for r in range(rows)]
    us, vs = [], []
    for r, c in enumerate(counts):
        v = (r + 0.5) / rows
        ju = rng.uniform(-0.15, 0.15, size=c) / c
        jv = rng.uniform(-0.15, 0.15, size=c) / rows
        us.append((np.arange(c) + 0.5) / c + ju)
        vs.append(np.full(c, v) + jv)
    u = np.concatenate(us)
    v = np.concatenate(vs)

    tri = Delaunay(np.column_stack([u, v]))
    triangles = np.asarray(tri.simplices, dtype=np.int64)

    # --- ellipsoid patch with a nose bump
    half_sweep = np.deg2rad(75.0)
    theta = (2.0 * u - 1.0) * half_sweep          # around the y axis (left-right)
    phi = (2.0 * v - 1.0) * half_sweep            # up-down; positive phi is +y (down)
    a, b, c = 1.0, 1.35, 0.75
    x = a * np.sin(theta) * np.cos(phi)
    y = b * np.sin(phi)
    z = c * np.cos(theta) * np.cos(phi)

    # outward normal of the ellipsoid, for displacing the bump
    nrm = np.stack([x / a**2, y / b**2, z / c**2])
    nrm /= np.linalg.norm(nrm, axis=0, keepdims=True)
    phi0 = np.deg2rad(10.0)
    sigma = np.deg2rad(12.0)
    bump = 0.13 * np.exp(-(theta**2 + (phi - phi0) ** 2) / (2.0 * sigma**2))
    verts = np.stack([x, y, z]) + bump * nrm

    # consistent outward winding: triangle normal should point away from the origin
    p0 = verts[:, triangles[:, 0]]
    p1 = verts[:, triangles[:, 1]]
    p2 = verts[:, triangles[:, 2]]
    fn = np.cross((p1 - p0).T, (p2 - p0).T)
    centroid = (p0 + p1 + p2).T / 3.0
    flip = np.einsum("ij,ij->i", fn, centroid) < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    mean_shape = mat_to_vec(verts)

    # --- bases: smoothed gaussian fields, orthonormalized
    n3 = 3 * n_vertices
    raw_shape = rng.standard_normal((n_vertices, 3 * (m_id + m_exp)))
    raw_alb = rng.standard_normal((n_vertices, 3 * m_id))
    sm_shape = _smooth_columns(raw_shape, triangles, n_vertices)
    sm_alb = _smooth_columns(raw_alb, triangles, n_vertices)
    # (n, 3, m) -> rows in vertex-major coordinate order
    shape_cols = sm_shape.reshape(n_vertices, m_id + m_exp, 3).transpose(0, 2, 1).reshape(n3, -1)
    alb_cols = sm_alb.reshape(n_vertices, m_id, 3).transpose(0, 2, 1).reshape(n3, -1)
    q_shape, _ = np.linalg.qr(shape_cols)
    q_alb, _ = np.linalg.qr(alb_cols)
    id_basis = q_shape[:, :m_id]
    exp_basis = q_shape[:, m_id:]
    alb_basis = q_alb

    decay = 0.75
    id_eigen = 0.36 * decay ** np.arange(m_id)
    exp_eigen = 0.1225 * decay ** np.arange(m_exp)

    # --- mean albedo: skin tone + smooth color variation + eye/mouth markings
    base_rgb = np.array([0.78, 0.62, 0.54])
    r_ch = base_rgb[0] + 0.10 * np.sin(2.1 * theta + 0.8) * np.cos(1.7 * phi)
    g_ch = base_rgb[1] + 0.09 * np.sin(1.3 * theta - 0.5) * np.sin(2.3 * phi + 0.4)
    b_ch = base_rgb[2] + 0.07 * np.cos(1.9 * theta) * np.cos(1.1 * phi - 0.7)
    eye_l = np.exp(-(((theta + np.deg2rad(25)) ** 2) + (phi + np.deg2rad(15)) ** 2) / (2 * np.deg2rad(7) ** 2))
    eye_r = np.exp(-(((theta - np.deg2rad(25)) ** 2) + (phi + np.deg2rad(15)) ** 2) / (2 * np.deg2rad(7) ** 2))
    mouth = np.exp(-((theta ** 2) / (2 * np.deg2rad(16) ** 2) + ((phi - np.deg2rad(35)) ** 2) / (2 * np.deg2rad(6) ** 2)))
    dark = 0.30 * (eye_l + eye_r) + 0.22 * mouth
    rgb = np.stack([r_ch - dark, g_ch - dark, b_ch - 0.5 * dark], axis=1)
    mean_albedo = np.clip(rgb, 0.05, 0.95).reshape(-1)

    # --- landmarks: farthest-point sampling seeded at the nose tip
    nose = int(np.argmax(verts[2]))
    lm160 = _farthest_point_sample(verts, 160, nose)
    lm68 = lm160[:68]

    return MorphableModel(
        mean_shape=mean_shape,
        id_basis=id_basis,
        exp_basis=exp_basis,
        id_eigen=id_eigen,
        exp_eigen=exp_eigen,
        mean_albedo=mean_albedo,
        alb_basis=alb_basis,
        triangles=triangles,
        lm160=lm160,
        lm68=lm68,
    )


# ---------------------------------------------------------------------------
# model file IO


def save_model(path, model, provenance=None):
    tensors = {
        "mean_shape": model.mean_shape,
        "id_basis": model.id_basis,
        "exp_basis": model.exp_basis,
        "id_eigen": model.id_eigen,
        "exp_eigen": model.exp_eigen,
        "mean_albedo": model.mean_albedo,
        "alb_basis": model.alb_basis,
        "triangles": model.triangles.astype(np.uint32),
        "lm160": model.lm160.astype(np.uint32),
        "lm68": model.lm68.astype(np.uint32),
    }
    write_container(path, tensors, provenance=provenance)


def load_model(path):
    t = read_container(path)
    return MorphableModel(
        mean_shape=t["mean_shape"],
        id_basis=t["id_basis"],
        exp_basis=t["exp_basis"],
        id_eigen=t["id_eigen"],
        exp_eigen=t["exp_eigen"],
        mean_albedo=t["mean_albedo"],
        alb_basis=t["alb_basis"],
        triangles=t["triangles"].astype(np.int64),
        lm160=t["lm160"].astype(np.int64),
        lm68=t["lm68"].astype(np.int64),
    )
