"""Run configuration: a flat key = value file with pipeline defaults.

Every knob of the pipeline has a default here; a config file only lists
overrides.  Serialization is canonical (fixed key order, 17-digit floats),
so a config hash identifies a run and a round-trip through text preserves
equality exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .detection import PPParams
from .errors import ConfigError, InputError
from .features import FeatureSpec
from .forest import RFParams
from .synth import SceneParams


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


def _parse_float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    """All pipeline parameters plus dataset/synthesis settings."""

    seed: int = 0
    threads: int = 1
    manifest: str = ""

    # feature extraction
    window_side: int = 3
    ring_radii: tuple[int, ...] = (2, 4)

    # random forest
    trees: int = 30
    features_per_node: int = 0  # 0 = floor(sqrt(M))
    min_leaf: int = 5
    train_pixels: int = 200_000

    # post-processing
    nms_side: int = 9
    confidence_floor: float = 0.375
    otsu_side: int = 19
    closing_radius: int = 5
    dilation_radius: int = 2

    # scoring
    sweep: str = "exact"
    jaccard_levels: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7)

    # synthetic scenes
    scenes: int = 10
    scene_width: int = 512
    scene_height: int = 512
    panels_per_scene: int = 8
    panel_side_min: int = 10
    panel_side_max: int = 15
    noise_sigma: float = 3.0

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.train_pixels < 2:
            raise ConfigError(f"train_pixels must be >= 2, got {self.train_pixels}")
        if self.sweep not in ("exact", "quantized"):
            raise ConfigError(f"sweep must be exact or quantized, got {self.sweep!r}")
        if not self.jaccard_levels or any(
            not 0.0 < j <= 1.0 for j in self.jaccard_levels
        ):
            raise ConfigError(f"jaccard_levels must lie in (0, 1]: {self.jaccard_levels}")
        if self.scenes < 1:
            raise ConfigError(f"scenes must be >= 1, got {self.scenes}")
        # delegate the remaining invariants to the parameter classes
        self.feature_spec()
        self.rf_params()
        self.pp_params()
        self.scene_params(0)

    def feature_spec(self) -> FeatureSpec:
        return FeatureSpec(self.window_side, self.ring_radii)

    def rf_params(self) -> RFParams:
        return RFParams(
            n_trees=self.trees,
            features_per_node=self.features_per_node or None,
            min_leaf=self.min_leaf,
            seed=self.seed,
        )

    def pp_params(self) -> PPParams:
        return PPParams(
            nms_side=self.nms_side,
            confidence_floor=self.confidence_floor,
            otsu_side=self.otsu_side,
            closing_radius=self.closing_radius,
            dilation_radius=self.dilation_radius,
        )

    def scene_params(self, index: int) -> SceneParams:
        """Parameters of the index-th synthetic scene of this run."""
        return SceneParams(
            width=self.scene_width,
            height=self.scene_height,
            n_panels=self.panels_per_scene,
            panel_side_min=self.panel_side_min,
            panel_side_max=self.panel_side_max,
            noise_sigma=self.noise_sigma,
            seed=(self.seed * 1_000_003 + index) & ((1 << 64) - 1),
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(
                    format(v, ".17g") if isinstance(v, float) else str(v)
                    for v in value
                )
            elif isinstance(value, float):
                text = format(value, ".17g")
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def replace(self, **overrides) -> "RunConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(overrides)
        return RunConfig(**values)


_TUPLE_PARSERS = {
    "ring_radii": _parse_int_tuple,
    "jaccard_levels": _parse_float_tuple,
}


def parse_config(text: str) -> RunConfig:
    """Parse key = value lines; '#' starts a comment, unknown keys fail."""
    defaults = RunConfig()
    names = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _TUPLE_PARSERS:
                values[key] = _TUPLE_PARSERS[key](value)
            else:
                values[key] = type(getattr(defaults, key))(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))
