"""File-level IO: PNG images, dataset directories, landmark text files.

A dataset directory holds:

    manifest.txt            provenance header plus one line per sample
    tensors.dfft            per-sample parameters, landmarks, visibility
    images/sample_NNNN.png  the rendered images

Landmark files are plain text, one "x y visible" line per landmark, with
'#' provenance headers.
"""

import os

import numpy as np
from PIL import Image

from .container import read_container, write_container
from .facemodel import AlbedoParams, CameraParams, ShapeParams
from .render import RenderedSample


def save_image_png(path, image):
    """Store a float image in [0, 1] as 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def load_image_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def _sample_name(i):
    return f"sample_{i:04d}"


def save_dataset(directory, samples, provenance=None):
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    tensors = {"meta/count": np.asarray([len(samples)], dtype=np.uint32)}
    lines = []
    for i, s in enumerate(samples):
        name = _sample_name(i)
        rel = os.path.join("images", f"{name}.png")
        save_image_png(os.path.join(directory, rel), s.image)
        tensors[f"{name}/p_id"] = s.shape.p_id
        tensors[f"{name}/p_exp"] = s.shape.p_exp
        tensors[f"{name}/p_alb"] = s.albedo.p_alb
        tensors[f"{name}/camera"] = s.camera.as_vector()
        tensors[f"{name}/light"] = s.light
        tensors[f"{name}/landmarks68"] = s.landmarks68
        tensors[f"{name}/landmarks160"] = s.landmarks160
        tensors[f"{name}/visibility160"] = s.visibility160.astype(np.uint8)
        lines.append(f"{name} {rel}")
    write_container(os.path.join(directory, "tensors.dfft"), tensors, provenance=provenance)
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        if provenance:
            for line in provenance.rstrip("\n").split("\n"):
                fh.write(f"# {line}\n")
        for line in lines:
            fh.write(line + "\n")


def load_dataset(directory):
    """Rebuild RenderedSamples from a dataset directory (images from PNG,
    so pixel values carry 8-bit quantization)."""
    t = read_container(os.path.join(directory, "tensors.dfft"))
    count = int(t["meta/count"][0])
    entries = {}
    with open(os.path.join(directory, "manifest.txt")) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, rel = line.split()
            entries[name] = rel
    samples = []
    for i in range(count):
        name = _sample_name(i)
        if name not in entries:
            raise ValueError(f"manifest is missing {name}")
        samples.append(
            RenderedSample(
                image=load_image_png(os.path.join(directory, entries[name])),
                shape=ShapeParams(p_id=t[f"{name}/p_id"], p_exp=t[f"{name}/p_exp"]),
                albedo=AlbedoParams(p_alb=t[f"{name}/p_alb"]),
                camera=CameraParams.from_vector(t[f"{name}/camera"]),
                light=t[f"{name}/light"],
                landmarks68=t[f"{name}/landmarks68"],
                landmarks160=t[f"{name}/landmarks160"],
                visibility160=t[f"{name}/visibility160"].astype(bool),
            )
        )
    return samples


def save_landmarks_txt(path, landmarks, visible=None, provenance=None):
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if visible is None:
        visible = np.ones(landmarks.shape[1], dtype=bool)
    with open(path, "w") as fh:
        if provenance:
            for line in provenance.rstrip("\n").split("\n"):
                fh.write(f"# {line}\n")
        for i in range(landmarks.shape[1]):
            fh.write(
                f"{landmarks[0, i]:.6f} {landmarks[1, i]:.6f} {int(visible[i])}\n"
            )


def load_landmarks_txt(path):
    xs, ys, vs = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            xs.append(float(parts[0]))
            ys.append(float(parts[1]))
            vs.append(bool(int(parts[2])) if len(parts) > 2 else True)
    return np.array([xs, ys]), np.array(vs, dtype=bool)


def draw_landmarks(image, landmarks, visible=None, radius=1):
    """Return a copy of the image with landmark crosses painted in (green
    for visible, red for hidden)."""
    img = np.array(image, dtype=np.float64, copy=True)
    h, w = img.shape[:2]
    if visible is None:
        visible = np.ones(landmarks.shape[1], dtype=bool)
    for i in range(landmarks.shape[1]):
        cx = int(round(landmarks[0, i]))
        cy = int(round(landmarks[1, i]))
        color = (0.1, 0.9, 0.1) if visible[i] else (0.9, 0.1, 0.1)
        for dx in range(-radius, radius + 1):
            if 0 <= cx + dx < w and 0 <= cy < h:
                img[cy, cx + dx] = color
        for dy in range(-radius, radius + 1):
            if 0 <= cx < w and 0 <= cy + dy < h:
                img[cy + dy, cx] = color
    return img
