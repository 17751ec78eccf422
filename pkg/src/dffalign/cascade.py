"""Learning the descent cascade by sequential ridge regression.

Stage k regresses the residuals (X* - X(k)) and (w* - w(k)) onto stacked
descriptors over the training set, with a ridge penalty on both the linear
map and its intercept (augmented design: the intercept column is penalized
like any other).  After applying a learned stage to every training image,
the shared generic shape is re-fit by averaging the per-image landmark
systems, and states are rebuilt from the updated (shape, camera) pairs.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .align import (
    AlignConfig,
    DescentStage,
    N_SPARSE,
    _clamp_camera,
    descent_step,
    initialize,
    landmark_system,
    stack_descriptors,
    state_from_params,
)
from .facemodel import ShapeParams

log = logging.getLogger(__name__)


@dataclass
class RegressionConfig:
    stage_count: int = 3
    lambda_x_scale: float = 1e-3  # ridge weight = scale * n_samples
    lambda_w_scale: float = 1e-3
    box_margin: float = 0.1       # training boxes: tight landmark box + margin


@dataclass
class TrainState:
    """Per-image cascade training state plus ground truth."""

    states: list           # LandmarkState per image
    features: np.ndarray   # (N, 160 * D), refreshed each stage
    gt_x: np.ndarray       # (N, 136)
    gt_w: np.ndarray       # (N, 6)
    boxes: np.ndarray      # (N, 4)


def ridge_solve(features, targets, lam):
    """Minimize ||features R^T + 1 b^T - targets||_F^2 + lam (||R||_F^2 + ||b||^2).

    features: (N, F); targets: (N, T).  Returns (R (T, F), b (T,)).  With
    lam = 0 a rank-deficient system falls back to the minimum-norm solution
    (reported via logging).
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if lam < 0:
        raise ValueError("ridge weight must be non-negative")
    n = features.shape[0]
    phi = np.concatenate([features, np.ones((n, 1))], axis=1)
    gram = phi.T @ phi
    if lam > 0:
        gram = gram + lam * np.eye(gram.shape[0])
    rhs = phi.T @ targets
    try:
        sol = np.linalg.solve(gram, rhs)  # (F+1, T)
    except np.linalg.LinAlgError:
        log.warning("ridge system is rank deficient; using minimum-norm solution")
        sol, *_ = np.linalg.lstsq(phi, targets, rcond=None)
    return sol[:-1].T, sol[-1].copy()


def learn_stage(train, reg_config):
    """Fit one DescentStage from the current features and residuals."""
    n = train.features.shape[0]
    cur_x = np.stack([s.x for s in train.states])
    cur_w = np.stack([s.camera.as_vector() for s in train.states])
    r_x, b_x = ridge_solve(train.features, train.gt_x - cur_x, reg_config.lambda_x_scale * n)
    r_w, b_w = ridge_solve(train.features, train.gt_w - cur_w, reg_config.lambda_w_scale * n)
    return DescentStage(r_x=r_x, b_x=b_x, r_w=r_w, b_w=b_w)


def update_generic_shape(model, targets, cameras, config=None, n_total=None):
    """Shape coefficients minimizing the average landmark misfit across
    images (each with its own camera) plus the eigenvalue-weighted penalty.

    With a single image this is exactly fit_shape.  n_total overrides the
    averaging denominator (defaults to len(targets))."""
    if config is None:
        config = AlignConfig()
    if len(targets) == 0:
        raise ValueError("need at least one target")
    if len(targets) != len(cameras):
        raise ValueError("need one camera per target")
    n = n_total if n_total is not None else len(targets)

    m = model.m_id + model.m_exp
    lhs = np.zeros((m, m))
    rhs = np.zeros(m)
    reg = None
    for target, camera in zip(targets, cameras):
        a, y0, reg = landmark_system(model, camera)
        weight = config.omega_landmark / n
        lhs += weight * (a.T @ a)
        rhs += weight * (a.T @ (np.asarray(target, dtype=np.float64).reshape(-1) - y0))
    lhs += config.omega_regular * np.diag(reg)
    try:
        p = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        p, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return ShapeParams(p_id=p[: model.m_id], p_exp=p[model.m_id :])


def landmark_box(landmarks68, margin):
    """Tight box around (2, 68) landmarks, expanded by `margin` per side."""
    lo = landmarks68.min(axis=1)
    hi = landmarks68.max(axis=1)
    size = hi - lo
    return np.array(
        [lo[0] - margin * size[0], lo[1] - margin * size[1],
         (1 + 2 * margin) * size[0], (1 + 2 * margin) * size[1]]
    )


def _refresh_features(net, samples, states):
    """One descriptor stack per image, each from a single extraction."""
    stacks = []
    for sample, state in zip(samples, states):
        fmap = net.extract(sample.image)
        stacks.append(stack_descriptors(fmap, state))
    return np.stack(stacks)


def learn_cascade(model, net, samples, reg_config=None, align_config=None):
    """Learn the full cascade from rendered training samples.

    Returns (stages, diagnostics); diagnostics holds the mean training
    landmark error (in pixels) before training and after each stage.
    """
    if reg_config is None:
        reg_config = RegressionConfig()
    if align_config is None:
        align_config = AlignConfig()
    if not samples:
        raise ValueError("need training samples")

    gt_x = np.stack([s.landmarks68.T.reshape(-1) for s in samples])
    gt_w = np.stack([s.camera.as_vector() for s in samples])
    boxes = np.stack(
        [landmark_box(s.landmarks68, reg_config.box_margin) for s in samples]
    )
    states = [initialize(model, box, align_config) for box in boxes]

    def mean_error(states_now):
        errs = []
        for st, gx in zip(states_now, gt_x):
            diff = (st.x - gx).reshape(-1, 2)
            errs.append(np.mean(np.linalg.norm(diff, axis=1)))
        return float(np.mean(errs))

    diagnostics = {"train_error": [mean_error(states)]}
    stages = []
    for k in range(reg_config.stage_count):
        features = _refresh_features(net, samples, states)
        train = TrainState(
            states=states, features=features, gt_x=gt_x, gt_w=gt_w, boxes=boxes
        )
        stage = learn_stage(train, reg_config)
        stages.append(stage)

        targets = []
        cameras = []
        for i, state in enumerate(states):
            target_x, camera = descent_step(state, features[i], stage)
            targets.append(target_x)
            cameras.append(_clamp_camera(camera, align_config))
        generic = update_generic_shape(model, targets, cameras, align_config)
        states = [
            state_from_params(model, generic, camera, align_config)
            for camera in cameras
        ]
        err = mean_error(states)
        diagnostics["train_error"].append(err)
        log.info("stage %d: mean training landmark error %.3f px", k, err)

    return stages, diagnostics


# ---------------------------------------------------------------------------
# cascade IO


def save_cascade(path, stages, provenance=None):
    from .container import write_container

    tensors = {"meta/stage_count": np.asarray([len(stages)], dtype=np.uint32)}
    for k, st in enumerate(stages):
        tensors[f"stage{k}/r_x"] = st.r_x
        tensors[f"stage{k}/b_x"] = st.b_x
        tensors[f"stage{k}/r_w"] = st.r_w
        tensors[f"stage{k}/b_w"] = st.b_w
    write_container(path, tensors, provenance=provenance)


def load_cascade(path):
    from .container import read_container

    t = read_container(path)
    count = int(t["meta/stage_count"][0])
    return [
        DescentStage(
            r_x=t[f"stage{k}/r_x"],
            b_x=t[f"stage{k}/b_x"],
            r_w=t[f"stage{k}/r_w"],
            b_w=t[f"stage{k}/b_w"],
        )
        for k in range(count)
    ]
