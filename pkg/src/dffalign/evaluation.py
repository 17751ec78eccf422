"""Alignment accuracy metrics: normalized mean error per image, aggregated
into yaw bins.

Per image the error is the mean Euclidean distance over (visible) landmark
pairs, normalized either by the square root of the face-box area or by the
ground-truth inter-pupil distance.  Reports bin images by absolute yaw into
[0, 30], (30, 60] and (60, 90] degrees; the summary Mean is the unweighted
mean of the non-empty bin means and Std is their population standard
deviation.
"""

from dataclasses import dataclass, field

import numpy as np

# eye-socket landmark index groups in the 68-point annotation order
LEFT_EYE = np.arange(36, 42)
RIGHT_EYE = np.arange(42, 48)

YAW_BIN_EDGES = (30.0, 60.0, 90.0)
BIN_NAMES = ("[0,30]", "(30,60]", "(60,90]")


@dataclass
class EvalItem:
    """Ground truth for one image."""

    landmarks68: np.ndarray   # (2, 68)
    yaw: float                # radians
    box: np.ndarray = None    # (x, y, w, h); required for bbox mode
    visible: np.ndarray = None  # (68,) bool, default all


@dataclass
class EvalReport:
    mode: str
    per_image: np.ndarray       # (N,) NME per image
    bin_means: list             # 3 entries, None where the bin is empty
    bin_counts: list
    mean: float                 # unweighted mean over non-empty bin means
    std: float                  # population std over non-empty bin means

    def lines(self):
        out = [f"mode = {self.mode}"]
        for name, m, c in zip(BIN_NAMES, self.bin_means, self.bin_counts):
            shown = "empty" if m is None else f"{m:.6f}"
            out.append(f"bin {name}: nme = {shown} (n = {c})")
        out.append(f"mean = {self.mean:.6f}")
        out.append(f"std = {self.std:.6f}")
        return out


def _pair_error(pred, gt, visible):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != (2, 68) or gt.shape != (2, 68):
        raise ValueError("landmarks must be 2 x 68")
    if visible is None:
        visible = np.ones(68, dtype=bool)
    visible = np.asarray(visible, dtype=bool).reshape(-1)
    if not visible.any():
        raise ValueError("no visible landmarks to score")
    d = np.linalg.norm(pred[:, visible] - gt[:, visible], axis=0)
    return float(np.mean(d))


def nme_bbox(pred, gt, box, visible=None):
    """Mean landmark distance divided by sqrt(box area)."""
    box = np.asarray(box, dtype=np.float64).reshape(-1)
    if box.shape[0] != 4 or box[2] <= 0 or box[3] <= 0:
        raise ValueError("box must be (x, y, w, h) with positive size")
    return _pair_error(pred, gt, visible) / float(np.sqrt(box[2] * box[3]))


def nme_interpupil(pred, gt, visible=None):
    """Mean landmark distance divided by the ground-truth inter-pupil
    distance (pupils = eye-socket landmark group centroids)."""
    gt = np.asarray(gt, dtype=np.float64)
    left = gt[:, LEFT_EYE].mean(axis=1)
    right = gt[:, RIGHT_EYE].mean(axis=1)
    dist = float(np.linalg.norm(left - right))
    if dist < 1e-9:
        raise ValueError("degenerate inter-pupil distance")
    return _pair_error(pred, gt, visible) / dist


def evaluate(predictions, truths, mode="bbox"):
    """Score predicted landmark sets against ground truth.

    predictions: list of (2, 68) arrays; truths: list of EvalItem.
    """
    if mode not in ("bbox", "interpupil"):
        raise ValueError(f"unknown mode {mode!r}")
    if len(predictions) != len(truths):
        raise ValueError("need one prediction per ground-truth item")
    if not truths:
        raise ValueError("nothing to evaluate")

    per_image = np.empty(len(truths))
    bins = [[] for _ in YAW_BIN_EDGES]
    for i, (pred, truth) in enumerate(zip(predictions, truths)):
        if mode == "bbox":
            if truth.box is None:
                raise ValueError("bbox mode needs a face box per item")
            err = nme_bbox(pred, truth.landmarks68, truth.box, truth.visible)
        else:
            err = nme_interpupil(pred, truth.landmarks68, truth.visible)
        per_image[i] = err
        yaw_deg = abs(np.degrees(float(truth.yaw)))
        slot = len(YAW_BIN_EDGES) - 1
        for b, edge in enumerate(YAW_BIN_EDGES):
            if yaw_deg <= edge:
                slot = b
                break
        bins[slot].append(err)

    bin_means = [float(np.mean(b)) if b else None for b in bins]
    bin_counts = [len(b) for b in bins]
    filled = [m for m in bin_means if m is not None]
    mean = float(np.mean(filled))
    std = float(np.std(filled))  # population convention over bin means
    return EvalReport(
        mode=mode,
        per_image=per_image,
        bin_means=bin_means,
        bin_counts=bin_counts,
        mean=mean,
        std=std,
    )
