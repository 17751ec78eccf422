"""Per-pixel face descriptors: a small encoder-decoder network with skip
connections, trained with an angular softmax loss against many random patch
segmentations at once.

The network maps an H x W x 3 image to an H x W x D field of unit-norm
descriptors.  For each segmentation k with class vectors h_j (unit rows),
the per-image loss is the mean over labeled pixels p of

    -log( exp(h_{tau(p)} . f_p) / sum_j exp(h_j . f_p) )

and segmentation losses add; a batch averages the per-image totals.  Class
vectors are renormalized to unit length after every optimizer step.

Everything runs in float64 on the CPU so training and extraction are
bit-reproducible for a fixed seed.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as tf

log = logging.getLogger(__name__)

NORM_GUARD = 1e-12


@dataclass
class NetConfig:
    input_size: tuple = (64, 64)   # (height, width), divisible by 2**depth
    feature_dim: int = 32
    depth: int = 2
    channels: tuple = (16, 32)
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.channels = tuple(int(c) for c in self.channels)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if len(self.channels) != self.depth:
            raise ValueError("need one channel count per level")
        h, w = self.input_size
        f = 2**self.depth
        if h % f or w % f:
            raise ValueError(f"input size {self.input_size} not divisible by {f}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


@dataclass
class LossLayerParams:
    """Class vectors (unit rows) for one segmentation's angular softmax."""

    class_vectors: np.ndarray  # (K, D)

    def __post_init__(self):
        self.class_vectors = np.asarray(self.class_vectors, dtype=np.float64)
        if self.class_vectors.ndim != 2:
            raise ValueError("class_vectors must be K x D")
        norms = np.linalg.norm(self.class_vectors, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("class vectors must have unit rows")


@dataclass
class FeatureMap:
    """H x W x D unit-norm descriptor field."""

    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3:
            raise ValueError("features must be H x W x D")
        if not np.isfinite(self.features).all():
            raise ValueError("non-finite feature values")
        norms = np.linalg.norm(self.features, axis=2)
        if np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("descriptors must be unit vectors")

    @property
    def height(self):
        return self.features.shape[0]

    @property
    def width(self):
        return self.features.shape[1]

    @property
    def dim(self):
        return self.features.shape[2]


@dataclass
class OptimConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 4
    shuffle_seed: int = 0
    # decay on the net weights only; class vectors are renormalized anyway.
    # keeps the pre-normalization magnitudes from inflating, which would
    # shrink the trunk gradients (the normalized output is scale-invariant)
    weight_decay: float = 0.0


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)


class FeatureNet(nn.Module):
    """Encoder-decoder with skip connections and a unit-normalized head."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        ch = config.channels
        self.enc = nn.ModuleList()
        prev = 3
        for c in ch:
            self.enc.append(nn.Conv2d(prev, c, 3, padding=1))
            prev = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = nn.Conv2d(ch[-1], 2 * ch[-1], 3, padding=1)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        prev = 2 * ch[-1]
        for c in reversed(ch):
            self.up.append(nn.ConvTranspose2d(prev, c, 2, stride=2))
            self.dec.append(nn.Conv2d(2 * c, c, 3, padding=1))
            prev = c
        self.head = nn.Conv2d(ch[0], config.feature_dim, 1)
        self.double()

    def forward(self, x):
        """(B, 3, H, W) -> (B, D, H, W) with unit-norm pixel vectors.

        Pixels whose raw output has norm below 1e-12 fall back to the first
        basis vector e_1 (keeps the map well-defined for, e.g., all-zero
        weights).
        """
        skips = []
        for conv in self.enc:
            x = tf.relu(conv(x))
            skips.append(x)
            x = self.pool(x)
        x = tf.relu(self.bottleneck(x))
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = up(x)
            x = tf.relu(dec(torch.cat([x, skip], dim=1)))
        x = self.head(x)

        norm = torch.linalg.vector_norm(x, dim=1, keepdim=True)
        tiny = norm < NORM_GUARD
        safe = torch.where(tiny, torch.ones_like(norm), norm)
        unit = x / safe
        e1 = torch.zeros_like(x)
        e1[:, 0] = 1.0
        return torch.where(tiny, e1, unit)

    def extract(self, image):
        """numpy (H, W, 3) image in [0, 1] -> FeatureMap."""
        image = np.asarray(image, dtype=np.float64)
        h, w = self.config.input_size
        if image.shape != (h, w, 3):
            raise ValueError(
                f"expected a {h} x {w} x 3 image, got {image.shape}"
            )
        with torch.no_grad():
            x = torch.from_numpy(image).permute(2, 0, 1).unsqueeze(0)
            out = self.forward(x)
        return FeatureMap(out[0].permute(1, 2, 0).numpy())


def init_loss_layers(n_segmentations, n_classes, feature_dim, seed):
    """Random unit-row class vectors for each segmentation."""
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(n_segmentations):
        h = rng.standard_normal((n_classes, feature_dim))
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        layers.append(LossLayerParams(class_vectors=h))
    return layers


# ---------------------------------------------------------------------------
# loss


def angular_softmax_loss(fmap, labels, layer):
    """Reference (numpy) loss for one segmentation on one feature map.

    labels: (H, W) ints, negative = unlabeled.  Returns 0.0 when no pixel
    is labeled.
    """
    labels = np.asarray(labels)
    f = fmap.features
    if labels.shape != f.shape[:2]:
        raise ValueError("label map size does not match the feature map")
    mask = labels >= 0
    if not mask.any():
        return 0.0
    h = layer.class_vectors
    if labels[mask].max() >= h.shape[0]:
        raise ValueError("label exceeds the number of classes")
    logits = f[mask] @ h.T                      # (P, K)
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    picked = logits[np.arange(logits.shape[0]), labels[mask]]
    return float(np.mean(lse - picked))


def _torch_batch_loss(net, h_list, images_t, label_stacks, want_accuracy=False):
    """Mean over images of the summed per-segmentation losses.

    images_t: (B, 3, H, W) tensor; label_stacks: per image, a list of (H, W)
    label tensors (one per segmentation, negatives unlabeled); h_list: per
    segmentation, a (K, D) tensor.  Optionally counts argmax accuracy over
    labeled pixels (detached).
    """
    fmaps = net(images_t)  # (B, D, H, W)
    total = images_t.new_zeros(())
    correct = 0
    labeled = 0
    for b in range(images_t.shape[0]):
        per_image = images_t.new_zeros(())
        for k, h in enumerate(h_list):
            lab = label_stacks[b][k]
            mask = lab >= 0
            if not bool(mask.any()):
                continue
            f = fmaps[b].permute(1, 2, 0)[mask]   # (P, D)
            logits = f @ h.T                      # (P, K)
            targets = lab[mask]
            per_image = per_image + tf.cross_entropy(logits, targets, reduction="mean")
            if want_accuracy:
                with torch.no_grad():
                    correct += int((logits.argmax(dim=1) == targets).sum())
                    labeled += int(targets.shape[0])
        total = total + per_image
    loss = total / images_t.shape[0]
    if want_accuracy:
        return loss, correct, labeled
    return loss


def _to_torch_inputs(images, label_stacks):
    imgs = torch.stack(
        [torch.from_numpy(np.asarray(im, dtype=np.float64)).permute(2, 0, 1) for im in images]
    )
    labs = [
        [torch.from_numpy(np.ascontiguousarray(l, dtype=np.int64)) for l in per_image]
        for per_image in label_stacks
    ]
    return imgs, labs


def loss_and_gradients(net, layers, images, label_stacks):
    """Batch loss and gradients for every net parameter and class vector.

    images: list of (H, W, 3) arrays; label_stacks: per image, one (H, W)
    label map per segmentation.  Returns (loss, grads) where grads maps
    parameter names (net state-dict keys, plus "class_vectors.<k>") to
    numpy arrays.  Unlabeled everything gives zero loss and zero gradients.
    """
    imgs, labs = _to_torch_inputs(images, label_stacks)
    h_list = [
        torch.from_numpy(l.class_vectors.copy()).requires_grad_(True) for l in layers
    ]
    net.zero_grad(set_to_none=False)
    loss = _torch_batch_loss(net, h_list, imgs, labs)
    if loss.requires_grad:  # False when nothing is labeled: all grads stay zero
        loss.backward()
    grads = {}
    for name, p in net.named_parameters():
        g = p.grad
        grads[name] = np.zeros(tuple(p.shape)) if g is None else g.numpy().copy()
    for k, h in enumerate(h_list):
        g = h.grad
        grads[f"class_vectors.{k}"] = (
            np.zeros(tuple(h.shape)) if g is None else g.numpy().copy()
        )
    return float(loss.item()), grads


def loss_value(net, layers, images, label_stacks):
    """Batch loss only (no gradients); used by finite-difference checks."""
    imgs, labs = _to_torch_inputs(images, label_stacks)
    h_list = [torch.from_numpy(l.class_vectors.copy()) for l in layers]
    with torch.no_grad():
        loss = _torch_batch_loss(net, h_list, imgs, labs)
    return float(loss.item())


# ---------------------------------------------------------------------------
# training


def train(net_config, images, label_stacks, n_classes, epochs, optim_config=None):
    """Train a fresh net (and loss layers) on images with per-segmentation
    label maps.  Returns (net, layers, log); deterministic in the seeds.

    label_stacks[i][k] is the (H, W) label map of image i under
    segmentation k; negatives mark unlabeled pixels.
    """
    if optim_config is None:
        optim_config = OptimConfig()
    if not images:
        raise ValueError("need at least one training image")
    n_seg = len(label_stacks[0])
    if any(len(s) != n_seg for s in label_stacks):
        raise ValueError("every image needs one label map per segmentation")

    net = FeatureNet(net_config)
    layers = init_loss_layers(n_seg, n_classes, net_config.feature_dim, net_config.seed)
    h_list = [
        torch.from_numpy(l.class_vectors.copy()).requires_grad_(True) for l in layers
    ]
    imgs, labs = _to_torch_inputs(images, label_stacks)

    opt = torch.optim.SGD(
        [
            {"params": list(net.parameters()), "weight_decay": optim_config.weight_decay},
            {"params": h_list, "weight_decay": 0.0},
        ],
        lr=optim_config.learning_rate,
        momentum=optim_config.momentum,
    )
    rng = np.random.default_rng(optim_config.shuffle_seed)
    n = len(images)
    bs = max(1, int(optim_config.batch_size))
    history = TrainLog()

    for epoch in range(epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        labeled = 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            batch_imgs = imgs[idx]
            batch_labs = [labs[i] for i in idx]
            opt.zero_grad()
            loss, c, p = _torch_batch_loss(
                net, h_list, batch_imgs, batch_labs, want_accuracy=True
            )
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged (non-finite loss) at epoch {epoch}"
                )
            if loss.requires_grad:
                loss.backward()
                opt.step()
            with torch.no_grad():
                for h in h_list:
                    norms = torch.linalg.vector_norm(h, dim=1, keepdim=True)
                    h /= torch.clamp(norms, min=NORM_GUARD)
            loss_sum += float(loss.item()) * len(idx)
            correct += c
            labeled += p
        mean_loss = loss_sum / n
        acc = correct / labeled if labeled else 0.0
        history.epoch_loss.append(mean_loss)
        history.epoch_accuracy.append(acc)
        log.info("epoch %d: loss %.5f accuracy %.4f", epoch, mean_loss, acc)

    for l, h in zip(layers, h_list):
        l.class_vectors = h.detach().numpy().copy()
    return net, layers, history


def pixel_accuracy(net, layers, images, label_stacks):
    """Fraction of labeled pixels whose nearest class vector is the true one."""
    correct = 0
    labeled = 0
    for image, per_image in zip(images, label_stacks):
        fmap = net.extract(image)
        f = fmap.features
        for layer, lab in zip(layers, per_image):
            lab = np.asarray(lab)
            mask = lab >= 0
            if not mask.any():
                continue
            logits = f[mask] @ layer.class_vectors.T
            correct += int((logits.argmax(axis=1) == lab[mask]).sum())
            labeled += int(mask.sum())
    return correct / labeled if labeled else 0.0


# ---------------------------------------------------------------------------
# descriptor sampling


def sample_feature(fmap, x, y):
    """Bilinearly interpolated descriptor at continuous (x, y), renormalized
    to unit length (e_1 fallback for vanishing norm).  Outside the image --
    beyond the [0, W-1] x [0, H-1] pixel-center rectangle -- returns zeros."""
    f = fmap.features
    h, w, d = f.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        return np.zeros(d)
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    ax = x - x0
    ay = y - y0
    v = (
        (1 - ax) * (1 - ay) * f[y0, x0]
        + ax * (1 - ay) * f[y0, x1]
        + (1 - ax) * ay * f[y1, x0]
        + ax * ay * f[y1, x1]
    )
    n = np.linalg.norm(v)
    if n < NORM_GUARD:
        out = np.zeros(d)
        out[0] = 1.0
        return out
    return v / n


# ---------------------------------------------------------------------------
# weight IO


def save_weights(path, net, layers, provenance=None):
    from .container import write_container

    cfg = net.config
    tensors = {
        "meta/input_size": np.asarray(cfg.input_size, dtype=np.uint32),
        "meta/feature_dim": np.asarray([cfg.feature_dim], dtype=np.uint32),
        "meta/depth": np.asarray([cfg.depth], dtype=np.uint32),
        "meta/channels": np.asarray(cfg.channels, dtype=np.uint32),
        "meta/seed": np.asarray([cfg.seed & 0xFFFFFFFF], dtype=np.uint32),
        "meta/n_segmentations": np.asarray([len(layers)], dtype=np.uint32),
    }
    for name, p in net.state_dict().items():
        tensors[f"net/{name}"] = p.numpy().astype(np.float64)
    for k, layer in enumerate(layers):
        tensors[f"loss/class_vectors.{k}"] = layer.class_vectors
    write_container(path, tensors, provenance=provenance)


def load_weights(path):
    from .container import read_container

    t = read_container(path)
    cfg = NetConfig(
        input_size=tuple(int(v) for v in t["meta/input_size"]),
        feature_dim=int(t["meta/feature_dim"][0]),
        depth=int(t["meta/depth"][0]),
        channels=tuple(int(c) for c in t["meta/channels"]),
        seed=int(t["meta/seed"][0]),
    )
    net = FeatureNet(cfg)
    state = {}
    for name, arr in t.items():
        if name.startswith("net/"):
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite weights in {name}")
            state[name[4:]] = torch.from_numpy(arr.copy())
    net.load_state_dict(state)
    n_seg = int(t["meta/n_segmentations"][0])
    layers = [
        LossLayerParams(class_vectors=t[f"loss/class_vectors.{k}"])
        for k in range(n_seg)
    ]
    return net, layers
