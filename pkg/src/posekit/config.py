"""Flat key-value run configuration shared by the command-line tools.

Every key below may appear in a YAML config file (``key: value`` pairs, no
nesting) and be overridden by the command-line flag ``--key-name``
(underscores become dashes). Resolution order: profile defaults, then the
config file, then flags.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import yaml

from .data.augment import JitterParams
from .data.render import DomainParams
from .errors import InvalidConfig
from .losses import LossWeights
from .model import ModelConfig
from .training import DESK_SCHEDULE, PAPER_SCHEDULE, TrainConfig, truncate_schedule


def parse_schedule(value) -> tuple:
    """``"15:0.01,8:0.001"`` or ``[[15, 0.01], [8, 0.001]]`` -> ``((15, 0.01), (8, 0.001))``."""
    if isinstance(value, str):
        try:
            pairs = [part.split(":") for part in value.split(",") if part.strip()]
            return tuple((int(n), float(lr)) for n, lr in pairs)
        except ValueError:
            raise InvalidConfig(f"bad lr_schedule {value!r}; expected 'epochs:lr,epochs:lr,...'") from None
    return tuple((int(n), float(lr)) for n, lr in value)


def format_schedule(schedule) -> str:
    return ",".join(f"{n}:{lr:g}" for n, lr in schedule)


def parse_pair(value, cast=float) -> tuple:
    if isinstance(value, str):
        parts = value.replace("x", ",").split(",")
    else:
        parts = list(value)
    if len(parts) != 2:
        raise InvalidConfig(f"expected two values, got {value!r}")
    return tuple(cast(p) for p in parts)


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"expected a boolean, got {value!r}")


@dataclass(frozen=True)
class Key:
    name: str
    cast: Callable[[Any], Any]
    help: str


TRAIN_KEYS = [
    Key("backbone", str, "feature extractor: tiny | mobilenet_v2"),
    Key("bins", int, "orientation bins per dimension; 0 selects the regression head"),
    Key("image_width", int, "network input width in pixels"),
    Key("image_height", int, "network input height in pixels"),
    Key("in_channels", int, "network input channels (1 or 3)"),
    Key("coord_channels", parse_bool, "append x/y coordinate planes to the input (tiny only)"),
    Key("pretrained_backbone", parse_bool, "load ImageNet weights for mobilenet_v2"),
    Key("lr_schedule", parse_schedule, "piecewise-constant schedule 'epochs:lr,...'"),
    Key("epochs", int, "truncate or extend the schedule to this many epochs"),
    Key("batch_size", int, "training batch size"),
    Key("momentum", float, "SGD momentum"),
    Key("weight_decay", float, "SGD weight decay"),
    Key("lambda_ori", float, "weight of the orientation loss term"),
    Key("epsilon_clamp", float, "arccos clamp for orientation regression losses"),
    Key("distance_weighted", parse_bool, "divide the regression orientation loss by target distance"),
    Key("delta", float, "soft-label Gaussian width in bins"),
    Key("roll_prob", float, "probability of roll augmentation per sample"),
    Key("roll_max_deg", float, "maximum roll augmentation magnitude in degrees"),
    Key("brightness", float, "brightness jitter magnitude"),
    Key("contrast", float, "contrast jitter magnitude"),
    Key("saturation", float, "saturation jitter magnitude (3-channel only)"),
    Key("hue", float, "hue jitter magnitude in turns (3-channel only)"),
    Key("blur_sigma_max", float, "maximum Gaussian blur sigma in pixels"),
    Key("val_fraction", float, "fraction of the dataset held out for validation"),
    Key("eval_batch_size", int, "batch size for evaluation"),
    Key("seed", int, "global seed"),
]

GENERATE_KEYS = [
    Key("n", int, "number of images"),
    Key("seed", int, "global seed"),
    Key("domain", str, "rendering domain: synthetic | pseudo_real"),
    Key("distance_range", lambda v: parse_pair(v, float), "target distance range 'min,max' in meters"),
    Key("image_size", lambda v: parse_pair(v, int), "image size 'WIDTHxHEIGHT'"),
    Key("focal_scale", float, "focal length as a multiple of image width"),
    Key("background", str, "background: black | gradient | blobs"),
    Key("noise_sigma", float, "sensor noise sigma (intensity units in [0, 1])"),
    Key("edge_brightness", lambda v: parse_pair(v, float), "edge brightness range 'lo,hi'"),
    Key("blur_sigma", lambda v: parse_pair(v, float), "render blur sigma range 'lo,hi'"),
    Key("light_jitter", float, "light direction jitter"),
    Key("line_width", int, "edge line width in pixels"),
    Key("depth_gamma", float, "depth attenuation exponent for edge brightness"),
]

PROFILES = {
    "desk": {
        "backbone": "tiny", "bins": 12, "image_width": 192, "image_height": 120, "in_channels": 1,
        "coord_channels": True, "pretrained_backbone": False, "lr_schedule": DESK_SCHEDULE,
    },
    "paper": {
        "backbone": "mobilenet_v2", "bins": 12, "image_width": 384, "image_height": 240, "in_channels": 1,
        "coord_channels": False, "pretrained_backbone": True, "lr_schedule": PAPER_SCHEDULE,
    },
}

_COMMON_TRAIN_DEFAULTS = {
    "epochs": None, "batch_size": 32, "momentum": 0.9, "weight_decay": 0.0,
    "lambda_ori": 1.0, "epsilon_clamp": 1e-7, "distance_weighted": False,
    "delta": 3.0, "roll_prob": 0.5, "roll_max_deg": 25.0,
    "brightness": 0.2, "contrast": 0.2, "saturation": 0.2, "hue": 0.05, "blur_sigma_max": 1.5,
    "val_fraction": 0.15, "eval_batch_size": 128, "seed": 0,
}

GENERATE_DEFAULTS = {
    "n": 100, "seed": 0, "domain": "synthetic", "distance_range": (3.0, 20.0),
    "image_size": (192, 120), "focal_scale": 1.25,
}


def train_defaults(profile: str) -> dict:
    if profile not in PROFILES:
        raise InvalidConfig(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return {**_COMMON_TRAIN_DEFAULTS, **PROFILES[profile]}


def load_config_file(path, keys) -> dict:
    """Read a flat YAML mapping, rejecting unknown keys by name."""
    p = Path(path)
    if not p.exists():
        raise InvalidConfig(f"config file {p} does not exist")
    try:
        raw = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"{p}: invalid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{p}: expected a flat key-value mapping")
    known = {k.name: k for k in keys}
    out = {}
    for name, value in raw.items():
        if name not in known:
            raise InvalidConfig(f"{p}: unknown config key {name!r}")
        if isinstance(value, dict):
            raise InvalidConfig(f"{p}: key {name!r} must be a scalar or list, not a mapping")
        out[name] = value
    return out


def resolve(defaults: dict, file_values: dict, flag_values: dict, keys) -> dict:
    known = {k.name: k for k in keys}
    merged = dict(defaults)
    merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    out = {}
    for name, value in merged.items():
        if value is None or name not in known:
            out[name] = value
            continue
        try:
            out[name] = known[name].cast(value)
        except InvalidConfig:
            raise
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad value for {name}: {value!r} ({exc})") from None
    return out


def train_config_from_flat(flat: dict) -> TrainConfig:
    bins = flat["bins"]
    schedule = flat["lr_schedule"]
    if flat.get("epochs"):
        schedule = truncate_schedule(schedule, flat["epochs"])
    model = ModelConfig(
        backbone=flat["backbone"],
        head_mode="regression" if bins == 0 else "softclass",
        n_bins=bins if bins else 12,
        input_width=flat["image_width"],
        input_height=flat["image_height"],
        in_channels=flat["in_channels"],
        coord_channels=flat["coord_channels"] and flat["backbone"] == "tiny",
        pretrained_backbone=flat["pretrained_backbone"],
        seed=flat["seed"],
    )
    return TrainConfig(
        model=model,
        loss=LossWeights(flat["lambda_ori"], flat["epsilon_clamp"], flat["distance_weighted"]),
        jitter=JitterParams(flat["brightness"], flat["contrast"], flat["saturation"], flat["hue"],
                            flat["blur_sigma_max"]),
        lr_schedule=schedule,
        batch_size=flat["batch_size"],
        momentum=flat["momentum"],
        weight_decay=flat["weight_decay"],
        delta=flat["delta"],
        roll_prob=flat["roll_prob"],
        roll_max_deg=flat["roll_max_deg"],
        seed=flat["seed"],
        eval_batch_size=flat["eval_batch_size"],
    )


def domain_from_flat(flat: dict) -> DomainParams:
    overrides = {k: flat[k] for k in
                 ("background", "noise_sigma", "edge_brightness", "blur_sigma", "light_jitter", "line_width",
                  "depth_gamma")
                 if flat.get(k) is not None}
    return DomainParams.preset(flat["domain"], **overrides)


def dump_flat(flat: dict, info: dict | None = None) -> str:
    """Deterministic YAML for a resolved flat config.

    ``info`` entries (derived facts such as parameter counts) are written as
    leading comments so the file stays loadable as a config.
    """
    header = "".join(f"# {k}: {v}\n" for k, v in (info or {}).items())
    out = {}
    for k in sorted(flat):
        v = flat[k]
        if k == "lr_schedule":
            v = format_schedule(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return header + yaml.safe_dump(out, sort_keys=True, default_flow_style=False)
