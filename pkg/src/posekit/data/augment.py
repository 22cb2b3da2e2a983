"""Label-consistent training augmentations."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..geometry import CameraIntrinsics, Pose, quat_multiply, rot_z, rotate_vector


def roll_warp_matrix(theta: float, k: CameraIntrinsics) -> np.ndarray:
    """2x3 affine map taking pixels of the original view to the rolled view.

    A camera-frame rotation about the optical axis moves normalized image
    coordinates by the same planar rotation; with ``fx != fy`` it is
    conjugated by the focal scaling.
    """
    c, s = np.cos(theta), np.sin(theta)
    f = np.diag([k.fx, k.fy])
    a = f @ np.array([[c, -s], [s, c]]) @ np.linalg.inv(f)
    center = np.array([k.cx, k.cy])
    return np.hstack([a, (center - a @ center)[:, None]])


def roll_pose(pose: Pose, theta: float) -> Pose:
    r = rot_z(theta)
    return Pose(quat_multiply(r, pose.orientation), rotate_vector(r, pose.position))


def augment_roll(image: np.ndarray, pose: Pose, theta: float, intrinsics: CameraIntrinsics):
    """Roll the camera by ``theta`` radians about its optical axis.

    Returns the rotated image (bilinear, about the principal point, zero fill)
    and the matching pose.
    """
    if theta == 0:
        return image.copy(), pose
    m = roll_warp_matrix(theta, intrinsics)
    h, w = image.shape[:2]
    out = cv2.warpAffine(image, m, (w, h), flags=cv2.INTER_LINEAR,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return out, roll_pose(pose, theta)


@dataclass(frozen=True)
class JitterParams:
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.05
    blur_sigma_max: float = 1.5


NO_JITTER = JitterParams(0.0, 0.0, 0.0, 0.0, 0.0)


def apply_photometric(image: np.ndarray, brightness=1.0, contrast=1.0, saturation=1.0,
                      hue=0.0, blur_sigma=0.0) -> np.ndarray:
    """Deterministic intensity transform; factors of 1 (and shifts of 0) are identities.

    ``hue`` is a fraction of a full turn. Saturation and hue only touch
    3-channel images.
    """
    dtype = image.dtype
    scale = 255.0 if dtype == np.uint8 else 1.0
    img = image.astype(np.float32) / scale
    if brightness != 1.0:
        img = img * brightness
    if contrast != 1.0:
        gray = img if img.ndim == 2 else cv2.cvtColor(np.clip(img, 0, 1), cv2.COLOR_RGB2GRAY)
        img = (img - gray.mean()) * contrast + gray.mean()
    if img.ndim == 3 and img.shape[2] == 3 and (saturation != 1.0 or hue != 0.0):
        hsv = cv2.cvtColor(np.clip(img, 0, 1), cv2.COLOR_RGB2HSV)
        hsv[..., 0] = (hsv[..., 0] + 360.0 * hue) % 360.0
        hsv[..., 1] = np.clip(hsv[..., 1] * saturation, 0, 1)
        img = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    if blur_sigma > 1e-3:
        img = cv2.GaussianBlur(img, (0, 0), sigmaX=blur_sigma)
    img = np.clip(img, 0.0, 1.0)
    if dtype == np.uint8:
        return np.round(img * 255.0).astype(np.uint8)
    return img.astype(dtype)


def photometric_jitter(image: np.ndarray, seed, params: JitterParams = JitterParams()) -> np.ndarray:
    """Random brightness/contrast/saturation/hue change plus Gaussian blur."""
    rng = np.random.default_rng(seed)
    return apply_photometric(
        image,
        brightness=rng.uniform(1 - params.brightness, 1 + params.brightness),
        contrast=rng.uniform(1 - params.contrast, 1 + params.contrast),
        saturation=rng.uniform(1 - params.saturation, 1 + params.saturation),
        hue=rng.uniform(-params.hue, params.hue),
        blur_sigma=rng.uniform(0.0, params.blur_sigma_max),
    )
