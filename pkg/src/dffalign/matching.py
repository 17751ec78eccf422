"""Nearest-angle descriptor matching between feature maps.

The angle between two unit descriptors is degrees(arccos(clip(dot, -1, 1))).
Each source descriptor matches the target pixel with the smallest angle,
scanning row-major (y outer, x inner) and keeping the first minimum; matches
above the angle threshold are dropped.  Sparse matching reads descriptors at
continuous landmark positions, dense matching matches every source pixel.
"""

from dataclasses import dataclass, field

import numpy as np

from .dffnet import sample_feature

SPARSE_THRESHOLD_DEG = 30.0
DENSE_THRESHOLD_DEG = 12.0
NO_MATCH = -1


@dataclass
class MatchSet:
    """Matches as an (M, 5) array of rows (sx, sy, tx, ty, angle_deg)."""

    pairs: np.ndarray
    threshold: float
    mode: str  # "sparse" or "dense"
    correspondence: np.ndarray = None  # dense only: (H, W, 2) of (tx, ty), NO_MATCH off

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 5)


def _best_target(src_vecs, target_fmap):
    """For each row of src_vecs: (tx, ty, angle) of the nearest-angle target
    pixel, first minimum in row-major order."""
    h, w, d = target_fmap.features.shape
    flat = target_fmap.features.reshape(-1, d)
    dots = src_vecs @ flat.T
    angles = np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))
    idx = np.argmin(angles, axis=1)  # first occurrence wins
    rows = np.arange(src_vecs.shape[0])
    return idx % w, idx // w, angles[rows, idx]


def sparse_match(source_fmap, source_points, target_fmap, threshold=SPARSE_THRESHOLD_DEG):
    """Match descriptors sampled at source_points (2 x L) into the target.

    Points outside the source image sample to zero vectors and are skipped.
    """
    pts = np.asarray(source_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] != 2:
        raise ValueError("source_points must be 2 x L")
    vecs = np.stack(
        [sample_feature(source_fmap, pts[0, i], pts[1, i]) for i in range(pts.shape[1])]
    )
    valid = np.linalg.norm(vecs, axis=1) > 0.5  # unit vs. exact-zero outside marker
    pairs = []
    if valid.any():
        tx, ty, ang = _best_target(vecs[valid], target_fmap)
        for (sx, sy), bx, by, a in zip(pts.T[valid], tx, ty, ang):
            if a <= threshold:
                pairs.append((sx, sy, float(bx), float(by), a))
    return MatchSet(
        pairs=np.asarray(pairs, dtype=np.float64).reshape(-1, 5),
        threshold=float(threshold),
        mode="sparse",
    )


def dense_match(source_fmap, target_fmap, threshold=DENSE_THRESHOLD_DEG):
    """Match every source pixel; also returns the (H, W, 2) correspondence
    map holding (tx, ty) per pixel, NO_MATCH where over threshold."""
    h, w, d = source_fmap.features.shape
    vecs = source_fmap.features.reshape(-1, d)
    tx, ty, ang = _best_target(vecs, target_fmap)
    keep = ang <= threshold

    corr = np.full((h, w, 2), NO_MATCH, dtype=np.int32)
    sy, sx = np.divmod(np.arange(h * w), w)
    corr[sy[keep], sx[keep], 0] = tx[keep]
    corr[sy[keep], sx[keep], 1] = ty[keep]

    pairs = np.column_stack(
        [sx[keep], sy[keep], tx[keep], ty[keep], ang[keep]]
    ).astype(np.float64)
    return MatchSet(
        pairs=pairs, threshold=float(threshold), mode="dense", correspondence=corr
    )


# ---------------------------------------------------------------------------
# text IO and visualization


def save_matches(path, match_set, provenance=None):
    """One `sx sy tx ty angle` line per pair; '#' lines carry provenance."""
    with open(path, "w") as fh:
        if provenance:
            for line in provenance.rstrip("\n").split("\n"):
                fh.write(f"# {line}\n")
        fh.write(f"# mode = {match_set.mode}\n")
        fh.write(f"# threshold_deg = {match_set.threshold}\n")
        for sx, sy, tx, ty, ang in match_set.pairs:
            fh.write(f"{sx:.6f} {sy:.6f} {tx:.6f} {ty:.6f} {ang:.6f}\n")


def _position_colors(h, w):
    """Position-coded colors: red ramps with x, green with y, blue fixed."""
    xs = np.linspace(0.15, 1.0, w)
    ys = np.linspace(0.15, 1.0, h)
    img = np.zeros((h, w, 3))
    img[:, :, 0] = xs[None, :]
    img[:, :, 1] = ys[:, None]
    img[:, :, 2] = 0.35
    return img


def correspondence_images(match_set, target_size):
    """Visualize a dense correspondence: the target painted with position
    colors, and the source painted with the color of its matched target
    pixel (black where unmatched).  Returns (source_img, target_img)."""
    if match_set.correspondence is None:
        raise ValueError("correspondence visualization needs a dense match")
    th, tw = target_size
    tgt = _position_colors(th, tw)
    corr = match_set.correspondence
    src = np.zeros((corr.shape[0], corr.shape[1], 3))
    ok = corr[:, :, 0] != NO_MATCH
    src[ok] = tgt[corr[ok][:, 1], corr[ok][:, 0]]
    return src, tgt
