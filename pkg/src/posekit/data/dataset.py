"""On-disk datasets in the SPEED label layout.

A dataset directory holds 8-bit grayscale PNG images plus ``labels.json``, a
JSON array of::

    {"filename": "img000000.png",
     "q_vbs2tango": [w, x, y, z],
     "r_Vo2To_vbs_true": [x, y, z],
     "domain": "synthetic"}          # optional

and a ``camera.json`` sidecar with the intrinsics used for generation.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import cv2
import numpy as np

from ..errors import InvalidConfig, InvalidQuaternion, MalformedManifest, MissingImage
from ..geometry import CameraIntrinsics, Pose
from .render import DomainParams, SatelliteModel3D, render, sample_pose

LABELS_FILE = "labels.json"
CAMERA_FILE = "camera.json"
QUAT_KEY = "q_vbs2tango"
POS_KEY = "r_Vo2To_vbs_true"
NORM_TOLERANCE = 1e-3


@dataclass
class SampleRecord:
    image_id: str
    pose: Pose
    domain: str = "synthetic"
    image_path: Path | None = None

    def load_image(self) -> np.ndarray:
        if self.image_path is None:
            raise MissingImage(f"{self.image_id}: record has no image file")
        img = cv2.imread(str(self.image_path), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise MissingImage(f"cannot read image {self.image_path}")
        return img


def image_name(index: int) -> str:
    return f"img{index:06d}.png"


def sample_seeds(seed: int, index: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent pose and render seeds for image ``index``; order-independent."""
    pose_ss, render_ss = np.random.SeedSequence([int(seed), int(index)]).spawn(2)
    return pose_ss, render_ss


def render_sample(index: int, seed: int, domain: DomainParams, distance_range, intrinsics,
                  model: SatelliteModel3D | None = None) -> tuple[Pose, np.ndarray]:
    pose_ss, render_ss = sample_seeds(seed, index)
    pose = sample_pose(pose_ss, distance_range, intrinsics)
    img = render(model or SatelliteModel3D.default(), pose, intrinsics, domain, render_ss)
    return pose, img


def _label_entry(filename: str, pose: Pose, domain: str) -> dict:
    return {
        "filename": filename,
        QUAT_KEY: [float(v) for v in pose.orientation],
        POS_KEY: [float(v) for v in pose.position],
        "domain": domain,
    }


def write_manifest(entries: list[dict], path) -> None:
    Path(path).write_text(json.dumps(entries, indent=1) + "\n")


def generate_dataset(n_images: int, seed: int, domain="synthetic", distance_range=(3.0, 20.0),
                     intrinsics: CameraIntrinsics | None = None, out_dir=".", indices=None) -> list[dict]:
    """Render ``n_images`` samples into ``out_dir`` and write the label manifest.

    ``indices`` restricts rendering to a subset of ``range(n_images)``; each
    image depends only on ``(seed, index)``.
    """
    if n_images <= 0:
        raise InvalidConfig("n_images must be positive")
    k = intrinsics or CameraIntrinsics()
    dp = domain if isinstance(domain, DomainParams) else DomainParams.preset(domain)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = SatelliteModel3D.default()
    entries = []
    for i in (range(n_images) if indices is None else sorted(indices)):
        pose, img = render_sample(i, seed, dp, distance_range, k, model)
        name = image_name(i)
        if not cv2.imwrite(str(out / name), img):
            raise OSError(f"failed to write {out / name}")
        entries.append(_label_entry(name, pose, dp.domain))
    write_manifest(entries, out / LABELS_FILE)
    (out / CAMERA_FILE).write_text(json.dumps(asdict(k), indent=1) + "\n")
    return entries


def _manifest_path(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / LABELS_FILE
    if not p.exists():
        raise MalformedManifest(f"no label manifest at {p}")
    return p


def parse_pose(entry: dict, where: str = "") -> Pose:
    try:
        q = np.asarray(entry[QUAT_KEY], dtype=float)
        t = np.asarray(entry[POS_KEY], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedManifest(f"{where}: bad or missing pose fields ({exc})") from None
    if q.shape != (4,) or t.shape != (3,) or not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
        raise MalformedManifest(f"{where}: pose fields must be 4 and 3 finite numbers")
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) >= NORM_TOLERANCE:
        raise InvalidQuaternion(f"{where}: quaternion norm {norm:.6g} is not close to 1")
    return Pose(q / norm, t)


def read_labels(path) -> list[SampleRecord]:
    """Parse a label manifest without touching images."""
    p = _manifest_path(path)
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(raw, list):
        raise MalformedManifest(f"{p}: expected a JSON array of label objects")
    records = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict) or "filename" not in entry:
            raise MalformedManifest(f"{p}[{i}]: missing 'filename'")
        pose = parse_pose(entry, f"{p}[{i}]")
        records.append(SampleRecord(str(entry["filename"]), pose, str(entry.get("domain", "synthetic"))))
    return records


def load_dataset(path, require_images: bool = True) -> list[SampleRecord]:
    """Records with parsed poses and image paths resolved next to the manifest."""
    p = _manifest_path(path)
    records = read_labels(p)
    for r in records:
        r.image_path = p.parent / r.image_id
        if require_images and not r.image_path.exists():
            raise MissingImage(f"image {r.image_path} listed in {p.name} does not exist")
    return records


def load_intrinsics(path, default: CameraIntrinsics | None = None) -> CameraIntrinsics:
    p = Path(path)
    cam = (p if p.is_dir() else p.parent) / CAMERA_FILE
    if cam.exists():
        return CameraIntrinsics(**json.loads(cam.read_text()))
    return default or CameraIntrinsics()


def split_train_val(records, val_fraction: float = 0.15, seed: int = 0):
    """Deterministic shuffle split into ``(train, val)``."""
    if not 0 < val_fraction < 1:
        raise InvalidConfig("val_fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(records))
    n_val = int(round(len(records) * val_fraction))
    val = [records[i] for i in sorted(order[:n_val])]
    train = [records[i] for i in sorted(order[n_val:])]
    return train, val
