"""Run configuration: a flat key = value text format covering every tunable,
with strict key checking, plus provenance assembly for output artifacts.

Example file:

    # pipeline scale
    image_width = 64
    image_height = 64
    dataset_count = 200
    channels = 16,32

Unknown keys are rejected (typos should fail loudly, not silently fall back
to defaults).
"""

from dataclasses import dataclass, fields

import numpy as np

from .align import AlignConfig
from .cascade import RegressionConfig
from .dffnet import NetConfig, OptimConfig
from .render import RenderConfig


@dataclass
class RunConfig:
    # synthetic model
    n_vertices: int = 500
    m_id: int = 8
    m_exp: int = 6
    # images / dataset
    image_width: int = 64
    image_height: int = 64
    dataset_count: int = 200
    # segmentation bank
    segmentation_count: int = 8
    patches: int = 32
    # feature network
    feature_dim: int = 32
    net_depth: int = 2
    channels: tuple = (16, 32)
    epochs: int = 20
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 4
    weight_decay: float = 0.0
    # matching
    sparse_threshold_deg: float = 30.0
    dense_threshold_deg: float = 12.0
    # alignment / cascade
    omega_landmark: float = 1.0
    omega_regular: float = 1e-3
    box_height_fraction: float = 0.85
    vis_resolution: int = 128
    stage_count: int = 3
    lambda_x_scale: float = 1e-3
    lambda_w_scale: float = 1e-3
    box_margin: float = 0.1

    # ---- views onto the per-module config types
    def net_config(self, seed=0):
        return NetConfig(
            input_size=(self.image_height, self.image_width),
            feature_dim=self.feature_dim,
            depth=self.net_depth,
            channels=self.channels,
            seed=seed,
        )

    def optim_config(self, seed=0):
        return OptimConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            batch_size=self.batch_size,
            shuffle_seed=seed,
            weight_decay=self.weight_decay,
        )

    def render_config(self):
        return RenderConfig(
            width=self.image_width,
            height=self.image_height,
            count=self.dataset_count,
        )

    def align_config(self):
        return AlignConfig(
            omega_landmark=self.omega_landmark,
            omega_regular=self.omega_regular,
            box_height_fraction=self.box_height_fraction,
            vis_resolution=self.vis_resolution,
        )

    def regression_config(self):
        return RegressionConfig(
            stage_count=self.stage_count,
            lambda_x_scale=self.lambda_x_scale,
            lambda_w_scale=self.lambda_w_scale,
            box_margin=self.box_margin,
        )

    def as_text(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out)


def _convert(name, kind, raw):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
    except ValueError as exc:
        raise ValueError(f"bad value for {name!r}: {raw!r}") from exc
    raise ValueError(f"unsupported config field type for {name!r}")


def parse_config(text):
    """Parse key = value lines ('#' comments allowed) into a RunConfig;
    unknown keys raise ValueError."""
    known = {f.name: f.type for f in fields(RunConfig)}
    # dataclass field .type may be the string annotation; map by default value type
    defaults = RunConfig()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        kind = type(getattr(defaults, key))
        values[key] = _convert(key, kind, raw)
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.image_width < 8 or cfg.image_height < 8:
        raise ValueError("image size too small")
    if cfg.patches < 1:
        raise ValueError("patches must be >= 1")
    if len(cfg.channels) != cfg.net_depth:
        raise ValueError("channels must list one value per net level")
    factor = 2**cfg.net_depth
    if cfg.image_width % factor or cfg.image_height % factor:
        raise ValueError(f"image size must be divisible by {factor}")


def load_config(path):
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return parse_config(fh.read())


def provenance_text(command, seed, config, inputs=None):
    """Self-describing record attached to every output artifact: tool,
    command, seed, input paths, and the full config echo."""
    lines = [f"tool = dffalign", f"command = {command}"]
    if seed is not None:
        lines.append(f"seed = {seed}")
    for key, value in (inputs or {}).items():
        lines.append(f"input.{key} = {value}")
    lines.append("-- config --")
    lines.append(config.as_text())
    return "\n".join(lines)
