"""Cascaded-regression face alignment.

State per image: the 68-point landmark estimate X (as [x0, y0, x1, y1, ...]),
the dense 160-point projections U, their visibility V, and the current shape
and camera parameters.  Each cascade stage reads a stacked descriptor vector
F (one D-slot per dense landmark, zeros when invisible), applies the learned
linear update to X and the camera, then re-fits shape coefficients so the
state stays on the model manifold.
"""

from dataclasses import dataclass, field

import numpy as np

from .dffnet import sample_feature
from .facemodel import (
    CameraParams,
    ShapeParams,
    project_points,
    synthesize_shape,
    vec_to_mat,
)
from .render import landmark_visibility

N_SPARSE = 68
N_DENSE = 160


@dataclass
class AlignConfig:
    omega_landmark: float = 1.0
    omega_regular: float = 1e-3
    box_height_fraction: float = 0.85
    vis_resolution: int = 128
    scale_floor: float = 1e-6


@dataclass
class DescentStage:
    """One linear stage: X <- X + r_x F + b_x, w <- w + r_w F + b_w."""

    r_x: np.ndarray  # (136, 160 * D)
    b_x: np.ndarray  # (136,)
    r_w: np.ndarray  # (6, 160 * D)
    b_w: np.ndarray  # (6,)

    def __post_init__(self):
        self.r_x = np.asarray(self.r_x, dtype=np.float64)
        self.b_x = np.asarray(self.b_x, dtype=np.float64).reshape(-1)
        self.r_w = np.asarray(self.r_w, dtype=np.float64)
        self.b_w = np.asarray(self.b_w, dtype=np.float64).reshape(-1)
        if self.r_x.shape[0] != self.b_x.shape[0]:
            raise ValueError("r_x rows must match b_x length")
        if self.r_w.shape[0] != 6 or self.b_w.shape[0] != 6:
            raise ValueError("camera update must have 6 rows")
        if self.r_x.shape[1] != self.r_w.shape[1]:
            raise ValueError("r_x and r_w must share the feature dimension")


@dataclass
class LandmarkState:
    x: np.ndarray            # (136,) current 68-point estimate
    u: np.ndarray            # (320,) dense 160-point projections
    v: np.ndarray            # (160,) bool visibility
    shape: ShapeParams
    camera: CameraParams

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        self.u = np.asarray(self.u, dtype=np.float64).reshape(-1)
        self.v = np.asarray(self.v, dtype=bool).reshape(-1)
        if self.x.shape[0] != 2 * N_SPARSE:
            raise ValueError("x must have 136 entries")
        if self.u.shape[0] != 2 * N_DENSE:
            raise ValueError("u must have 320 entries")
        if self.v.shape[0] != N_DENSE:
            raise ValueError("v must have 160 entries")

    def landmarks68(self):
        return self.x.reshape(-1, 2).T.copy()


def _project_interleaved(model, vertex_ids, shape, camera):
    """Project the listed vertices and interleave as [x0, y0, x1, y1, ...]."""
    mesh = synthesize_shape(model, shape)
    xy = project_points(mesh.vertices[:, vertex_ids], camera)
    return xy.T.reshape(-1)


def state_from_params(model, shape, camera, config):
    """Build the full landmark state implied by (shape, camera)."""
    mesh = synthesize_shape(model, shape)
    xy160 = project_points(mesh.vertices[:, model.lm160], camera)
    vis = landmark_visibility(mesh, camera, model.lm160, config.vis_resolution)
    return LandmarkState(
        x=xy160[:, :N_SPARSE].T.reshape(-1),
        u=xy160.T.reshape(-1),
        v=vis,
        shape=shape,
        camera=camera,
    )


def initialize(model, face_box, config=None):
    """Start state inside a face box (x, y, w, h): mean shape, frontal pose,
    scaled so the projected face height is box_height_fraction of the box,
    centered on the box center."""
    if config is None:
        config = AlignConfig()
    bx, by, bw, bh = (float(v) for v in face_box)
    if bw <= 0 or bh <= 0:
        raise ValueError("face box must have positive size")

    mesh = model.mean_mesh()
    lo = mesh.vertices[:2].min(axis=1)
    hi = mesh.vertices[:2].max(axis=1)
    h0 = float(hi[1] - lo[1])
    s = config.box_height_fraction * bh / max(h0, 1e-12)
    cx, cy = 0.5 * (lo + hi)
    camera = CameraParams(
        scale=s,
        pitch=0.0,
        yaw=0.0,
        roll=0.0,
        tx=bx + bw / 2 - s * cx,
        ty=by + bh / 2 - s * cy,
    )
    shape = ShapeParams(p_id=np.zeros(model.m_id), p_exp=np.zeros(model.m_exp))
    return state_from_params(model, shape, camera, config)


def stack_descriptors(fmap, state):
    """Concatenate the descriptor at each dense landmark (zeros when the
    landmark is invisible or projects outside the image) into a vector of
    length 160 * D."""
    d = fmap.dim
    out = np.zeros(N_DENSE * d)
    for i in range(N_DENSE):
        if not state.v[i]:
            continue
        out[i * d : (i + 1) * d] = sample_feature(fmap, state.u[2 * i], state.u[2 * i + 1])
    return out


def descent_step(state, features, stage):
    """Apply one linear stage.  Exactly targetX = X + r_x F + b_x and
    w_new = w + r_w F + b_w (the camera scale is floored at a tiny positive
    value only to keep the camera constructible)."""
    features = np.asarray(features, dtype=np.float64).reshape(-1)
    if features.shape[0] != stage.r_x.shape[1]:
        raise ValueError("feature vector length does not match the stage")
    target_x = state.x + stage.r_x @ features + stage.b_x
    w_new = state.camera.as_vector() + stage.r_w @ features + stage.b_w
    if w_new[0] <= 0:
        w_new[0] = 1e-6
    return target_x, CameraParams.from_vector(w_new)


def landmark_system(model, camera):
    """Linear system pieces for fitting shape coefficients to 2D landmarks.

    Projected 68-point positions are affine in (p_id, p_exp):
    y(p) = y0 + A p.  Returns (A, y0, reg) with A (136 x m), y0 (136,),
    and reg the diagonal of the eigenvalue-weighted penalty, so that the
    minimizer of  omega_landmark ||target - y0 - A p||^2 + omega_regular
    p^T diag(reg) p  solves  (omega_landmark A^T A + omega_regular
    diag(reg)) p = omega_landmark A^T (target - y0).
    """
    r = camera.rotation()
    sr2 = camera.scale * r[:2]  # (2, 3)
    ids = model.lm68
    rows = (3 * ids[:, None] + np.arange(3)[None, :]).reshape(-1)  # coordinate rows

    mean3 = model.mean_shape[rows].reshape(-1, 3).T          # 3 x 68
    y0 = (sr2 @ mean3 + np.array([[camera.tx], [camera.ty]])).T.reshape(-1)

    basis = np.concatenate([model.id_basis, model.exp_basis], axis=1)
    b3 = basis[rows].reshape(N_SPARSE, 3, -1)                # (68, 3, m)
    a = np.einsum("rc,lcm->lrm", sr2, b3).reshape(2 * N_SPARSE, -1)

    reg = np.concatenate([1.0 / model.id_eigen, 1.0 / model.exp_eigen])
    return a, y0, reg


def fit_shape(model, target_x, camera, config=None):
    """Least-squares shape coefficients for the target 68-point positions
    under the given camera, with eigenvalue-weighted Tikhonov regularization
    (identity and expression solved jointly)."""
    if config is None:
        config = AlignConfig()
    target_x = np.asarray(target_x, dtype=np.float64).reshape(-1)
    if target_x.shape[0] != 2 * N_SPARSE:
        raise ValueError("target must have 136 entries")
    a, y0, reg = landmark_system(model, camera)
    lhs = config.omega_landmark * (a.T @ a) + config.omega_regular * np.diag(reg)
    rhs = config.omega_landmark * (a.T @ (target_x - y0))
    try:
        p = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        p, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    m1 = model.m_id
    return ShapeParams(p_id=p[:m1], p_exp=p[m1:])


def _clamp_camera(camera, config):
    """Post-update guards: yaw into [-pi/2, pi/2], scale positive."""
    yaw = float(np.clip(camera.yaw, -np.pi / 2, np.pi / 2))
    s = max(camera.scale, config.scale_floor)
    if yaw == camera.yaw and s == camera.scale:
        return camera
    return CameraParams(
        scale=s, pitch=camera.pitch, yaw=yaw, roll=camera.roll,
        tx=camera.tx, ty=camera.ty,
    )


def align(model, fmap, face_box, stages, config=None):
    """Run the cascade on one image's feature map.

    The feature map is extracted once by the caller and reused across all
    stages.  Returns (final state, trace) where trace holds the X estimate
    of the initial state and of each stage's output."""
    if config is None:
        config = AlignConfig()
    state = initialize(model, face_box, config)
    trace = [state.x.copy()]
    for stage in stages:
        features = stack_descriptors(fmap, state)
        target_x, camera = descent_step(state, features, stage)
        camera = _clamp_camera(camera, config)
        shape = fit_shape(model, target_x, camera, config)
        state = state_from_params(model, shape, camera, config)
        trace.append(state.x.copy())
    return state, trace
