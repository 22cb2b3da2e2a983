"""Wireframe satellite model, pose sampling and grayscale rendering."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import cv2
import numpy as np

from ..errors import FrustumSamplingExhausted, InvalidConfig, NonPositiveDepth
from ..geometry import CameraIntrinsics, Pose, quat_to_matrix, random_quaternions

DOMAINS = ("synthetic", "pseudo_real")
BACKGROUNDS = ("black", "gradient", "blobs")
SUBPIXEL_BITS = 4
MAX_POSE_ATTEMPTS = 1000


@dataclass(frozen=True)
class SatelliteModel3D:
    vertices: np.ndarray  # (V, 3) meters, body frame
    edges: np.ndarray  # (E, 2) vertex indices
    edge_brightness: np.ndarray  # (E,) relative brightness per edge
    name: str = "satellite"
    version: int = 1

    def __post_init__(self):
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= len(self.vertices)):
            raise InvalidConfig("edge index out of range")
        if np.linalg.norm(self.vertices, axis=1).max() > 3.0:
            raise InvalidConfig("model must fit in a 3 m sphere around the body origin")

    @classmethod
    def default(cls) -> "SatelliteModel3D":
        raw = json.loads(resources.files("posekit.assets").joinpath("satellite_v1.json").read_text())
        edges, bright = [], []
        for part in raw["parts"].values():
            edges += part["edges"]
            bright += [part["brightness"]] * len(part["edges"])
        return cls(
            np.asarray(raw["vertices"], dtype=float),
            np.asarray(edges, dtype=int),
            np.asarray(bright, dtype=float),
            raw["name"],
            raw["version"],
        )

    def camera_points(self, pose: Pose) -> np.ndarray:
        return self.vertices @ quat_to_matrix(pose.orientation).T + pose.position


@dataclass(frozen=True)
class DomainParams:
    domain: str = "synthetic"
    background: str = "black"
    noise_sigma: float = 0.01
    edge_brightness: tuple[float, float] = (0.85, 1.0)
    blur_sigma: tuple[float, float] = (0.0, 0.5)
    light_jitter: float = 0.0
    line_width: int = 1
    depth_gamma: float = 3.0

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise InvalidConfig(f"unknown domain {self.domain!r}; valid domains: {', '.join(DOMAINS)}")
        if self.background not in BACKGROUNDS:
            raise InvalidConfig(f"unknown background {self.background!r}; choose from {BACKGROUNDS}")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be >= 0")

    @classmethod
    def preset(cls, domain: str, **overrides) -> "DomainParams":
        if domain not in DOMAINS:
            raise InvalidConfig(f"unknown domain {domain!r}; valid domains: {', '.join(DOMAINS)}")
        base = _PRESETS[domain]
        return replace(base, **overrides) if overrides else base


_PRESETS = {
    "synthetic": DomainParams(),
    "pseudo_real": DomainParams(
        domain="pseudo_real",
        background="blobs",
        noise_sigma=0.05,
        edge_brightness=(0.45, 0.9),
        blur_sigma=(0.6, 1.5),
        light_jitter=0.6,
    ),
}


def sample_pose(seed, distance_range=(3.0, 20.0), intrinsics: CameraIntrinsics | None = None,
                margin: float = 0.1) -> Pose:
    """Uniform SO(3) orientation; distance uniform in ``distance_range``.

    The direction is drawn uniformly over the image plane and rejected until
    the target center projects at least ``margin * width`` from every border.
    """
    k = intrinsics or CameraIntrinsics()
    d_min, d_max = distance_range
    if not 0 < d_min < d_max:
        raise InvalidConfig(f"need 0 < d_min < d_max, got {distance_range}")
    rng = np.random.default_rng(seed)
    q = random_quaternions(rng)
    distance = rng.uniform(d_min, d_max)
    m = margin * k.width
    for _ in range(MAX_POSE_ATTEMPTS):
        u, v = rng.uniform(0.0, k.width), rng.uniform(0.0, k.height)
        if m <= u <= k.width - m and m <= v <= k.height - m:
            ray = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
            return Pose(q, distance * ray / np.linalg.norm(ray))
    raise FrustumSamplingExhausted(f"no admissible direction after {MAX_POSE_ATTEMPTS} attempts")


def _background(kind: str, rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    if kind == "black":
        return np.zeros((h, w), np.float32)
    if kind == "gradient":
        angle = rng.uniform(0, 2 * np.pi)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
        ramp = (np.cos(angle) * xs / w + np.sin(angle) * ys / h)
        ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-6)
        return (rng.uniform(0.05, 0.3) * ramp).astype(np.float32)
    # low-frequency blobs: upsampled coarse noise
    coarse = rng.uniform(0.0, 1.0, (max(h // 24, 2), max(w // 24, 2))).astype(np.float32)
    field = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)
    field = cv2.GaussianBlur(field, (0, 0), sigmaX=w / 24)
    field = (field - field.min()) / max(float(np.ptp(field)), 1e-6)
    return (rng.uniform(0.15, 0.4) * field).astype(np.float32)


def render(model: SatelliteModel3D, pose: Pose, intrinsics: CameraIntrinsics | None = None,
           domain: DomainParams | None = None, seed=0) -> np.ndarray:
    """Render ``model`` at ``pose`` to an 8-bit grayscale image.

    Edges are drawn far-to-near as anti-aliased sub-pixel lines whose
    brightness falls off with depth relative to the target center.
    """
    k = intrinsics or CameraIntrinsics()
    dp = domain or DomainParams()
    rng = np.random.default_rng(seed)
    pts = model.camera_points(pose)
    if np.any(pts[:, 2] <= 0) or pose.position[2] <= 0:
        raise NonPositiveDepth("part of the target is behind the camera")

    base = rng.uniform(*dp.edge_brightness)
    light = np.array([0.0, 0.0, -1.0])
    if dp.light_jitter > 0:
        light = light + rng.normal(0.0, dp.light_jitter, 3)
        light /= np.linalg.norm(light)

    uv = pts[:, :2] / pts[:, 2:3] * [k.fx, k.fy] + [k.cx, k.cy]
    a, b = model.edges[:, 0], model.edges[:, 1]
    depth = 0.5 * (pts[a, 2] + pts[b, 2])
    direction = pts[b] - pts[a]
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    shading = 0.7 + 0.3 * (1.0 - np.abs(direction @ light))
    relative = (pose.position[2] / depth) ** dp.depth_gamma
    level = np.clip(base * model.edge_brightness * shading * relative, 0.0, 1.0)

    canvas = np.zeros((k.height, k.width), np.uint8)
    scale = 1 << SUBPIXEL_BITS
    fixed = np.round(uv * scale).astype(np.int64)
    # coordinates far outside the image would overflow cv2's int32 fixed point
    fixed = np.clip(fixed, -(1 << 26), 1 << 26)
    for e in np.argsort(-depth, kind="stable"):
        p0 = tuple(int(c) for c in fixed[a[e]])
        p1 = tuple(int(c) for c in fixed[b[e]])
        cv2.line(canvas, p0, p1, int(round(255 * level[e])), dp.line_width, cv2.LINE_AA, SUBPIXEL_BITS)

    img = _background(dp.background, rng, k.height, k.width) + canvas.astype(np.float32) / 255.0
    blur = rng.uniform(*dp.blur_sigma)
    if blur > 1e-3:
        img = cv2.GaussianBlur(img, (0, 0), sigmaX=blur)
    if dp.noise_sigma > 0:
        img = img + rng.normal(0.0, dp.noise_sigma, img.shape).astype(np.float32)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
