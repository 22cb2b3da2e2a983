"""Training loop, checkpoints, evaluation, prediction export and submission scoring."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np
import torch

from .codec import build_grid, decode, encode_soft
from .data.augment import JitterParams, augment_roll, photometric_jitter
from .data.dataset import SampleRecord, read_labels
from .errors import (
    ConfigMismatch,
    InvalidConfig,
    MalformedManifest,
    MissingPrediction,
    NonFiniteLoss,
    UnknownId,
)
from .geometry import CameraIntrinsics, Pose
from .losses import LossWeights, combined_loss
from .metrics import MetricsReport, PoseEstimatePair, esa_score, g_factor
from .model import ModelConfig, PoseNet, build_model, count_parameters, normalize_quaternion_output

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "posekit-checkpoint"
CHECKPOINT_VERSION = 1
SUBMISSION_HEADER = ("image_id", "qw", "qx", "qy", "qz", "tx", "ty", "tz")
LOG_COLUMNS = (
    "epoch", "lr", "train_loss", "train_position_loss", "train_orientation_loss",
    "val_e_t", "val_e_q", "val_esa",
)

PAPER_SCHEDULE = ((30, 0.01), (15, 0.001), (5, 0.0001))
DESK_SCHEDULE = ((15, 0.01), (8, 0.001), (4, 0.0001))


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    jitter: JitterParams = field(default_factory=JitterParams)
    lr_schedule: tuple = DESK_SCHEDULE
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 0.0
    delta: float = 3.0
    roll_prob: float = 0.5
    roll_max_deg: float = 25.0
    seed: int = 0
    eval_batch_size: int = 128

    def __post_init__(self):
        self.lr_schedule = tuple((int(n), float(lr)) for n, lr in self.lr_schedule)
        if not self.lr_schedule or any(n < 1 or lr <= 0 for n, lr in self.lr_schedule):
            raise InvalidConfig("lr_schedule needs positive epoch counts and learning rates")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not 0 <= self.roll_prob <= 1:
            raise InvalidConfig("roll_prob must be in [0, 1]")

    @property
    def epochs(self) -> int:
        return sum(n for n, _ in self.lr_schedule)

    @property
    def mode(self) -> str:
        return self.model.head_mode

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_schedule"] = [list(s) for s in self.lr_schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        return cls(
            model=ModelConfig(**d.pop("model")),
            loss=LossWeights(**d.pop("loss")),
            jitter=JitterParams(**d.pop("jitter")),
            **d,
        )


def truncate_schedule(schedule, epochs: int) -> tuple:
    """Keep the first ``epochs`` epochs of a piecewise-constant schedule."""
    if epochs < 1:
        raise InvalidConfig("epochs must be >= 1")
    out, left = [], epochs
    for n, lr in schedule:
        if left <= 0:
            break
        out.append((min(n, left), lr))
        left -= n
    if left > 0:
        n, lr = out[-1]
        out[-1] = (n + left, lr)
    return tuple(out)


def lr_at(schedule, epoch: int) -> float:
    """Learning rate of (0-based) ``epoch``; the last rate persists past the end."""
    start = 0
    for n, lr in schedule:
        if epoch < start + n:
            return lr
        start += n
    return schedule[-1][1]


@dataclass
class EpochRow:
    epoch: int
    lr: float
    train_loss: float
    train_position_loss: float
    train_orientation_loss: float
    val_e_t: float
    val_e_q: float
    val_esa: float


@dataclass
class TrainLog:
    rows: list[EpochRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(LOG_COLUMNS) + "\n")
        for r in self.rows:
            vals = [getattr(r, c) for c in LOG_COLUMNS]
            buf.write(",".join(str(v) if isinstance(v, int) else f"{v:.9g}" for v in vals) + "\n")
        return buf.getvalue()

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(EpochRow(int(rec["epoch"]), *(float(rec[c]) for c in LOG_COLUMNS[1:])))
        return cls(rows)


@dataclass
class TrainResult:
    final: dict
    best: dict
    log: TrainLog


# --------------------------------------------------------------------------- images


def _resize(img: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    if img.shape[:2] != (cfg.input_height, cfg.input_width):
        img = cv2.resize(img, (cfg.input_width, cfg.input_height), interpolation=cv2.INTER_AREA)
    return img


def images_to_tensor(images, cfg: ModelConfig) -> torch.Tensor:
    """Stack 8-bit grayscale images into a float batch ``(B, C, H, W)`` in [0, 1]."""
    arr = np.stack([_resize(img, cfg) for img in images]).astype(np.float32) / 255.0
    x = torch.from_numpy(arr).unsqueeze(1)
    if cfg.in_channels == 3:
        x = x.expand(-1, 3, -1, -1).contiguous()
    return x


class ImageCache:
    """Decoded dataset images kept in memory as uint8 arrays."""

    def __init__(self, records: list[SampleRecord]):
        self.records = records
        self.images = [r.load_image() for r in records]


# --------------------------------------------------------------------------- checkpoints


def make_checkpoint(net: PoseNet, cfg: TrainConfig, epoch: int, intrinsics: CameraIntrinsics,
                    metrics: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "train_config": cfg.to_dict(),
        "intrinsics": asdict(intrinsics),
        "state_dict": {k: v.detach().clone() for k, v in net.state_dict().items()},
        "epoch": epoch,
        "rng_state": torch.get_rng_state(),
        "metrics": dict(metrics or {}),
        "n_params": count_parameters(net),
    }


def save_checkpoint(ckpt: dict, path) -> None:
    """Write the checkpoint and a ``<name>.config.json`` sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt, path)
    side = {k: ckpt[k] for k in ("format", "version", "epoch", "train_config", "intrinsics", "metrics", "n_params")}
    path.with_suffix(".config.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> dict:
    ckpt = torch.load(Path(path), map_location="cpu", weights_only=True)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ConfigMismatch(f"{path} is not a posekit checkpoint")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ConfigMismatch(f"{path}: unsupported checkpoint version {ckpt.get('version')}")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> tuple[PoseNet, TrainConfig]:
    cfg = TrainConfig.from_dict(ckpt["train_config"])
    net = build_model(cfg.model)
    net.load_state_dict(ckpt["state_dict"])
    net.eval()
    return net, cfg


# --------------------------------------------------------------------------- inference


@torch.no_grad()
def predict_poses(net: PoseNet, images, batch_size: int = 128, delta: float = 3.0):
    """``(quaternions (N, 4), positions (N, 3))`` for a list of grayscale images."""
    cfg = net.cfg
    was_training = net.training
    net.eval()
    grid = build_grid(cfg.n_bins, delta) if cfg.head_mode == "softclass" else None
    qs, ts = [], []
    for start in range(0, len(images), batch_size):
        x = images_to_tensor(images[start:start + batch_size], cfg)
        t, ori = net(x)
        if grid is None:
            q = normalize_quaternion_output(ori.double()).numpy()
        else:
            p = torch.softmax(ori.double(), dim=-1).numpy()
            q = decode(p, grid, check=False)
        qs.append(q)
        ts.append(t.double().numpy())
    net.train(was_training)
    return np.concatenate(qs), np.concatenate(ts)


def evaluate_model(net: PoseNet, records, images=None, batch_size: int = 128, delta: float = 3.0,
                   meta=None) -> MetricsReport:
    if images is None:
        images = [r.load_image() for r in records]
    q, t = predict_poses(net, images, batch_size, delta)
    pairs = [
        PoseEstimatePair(Pose(q[i], t[i]), r.pose, r.image_id, r.domain) for i, r in enumerate(records)
    ]
    return esa_score(pairs, meta)


def _report_meta(cfg: TrainConfig, n_params: int) -> dict:
    return {
        "backbone": cfg.model.backbone,
        "head_mode": cfg.model.head_mode,
        "n_bins": cfg.model.n_bins if cfg.model.head_mode == "softclass" else 0,
        "n_params": n_params,
    }


def evaluate(checkpoint, records, images=None) -> MetricsReport:
    """Score a checkpoint (dict or path) on ``records``."""
    ckpt = load_checkpoint(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
    net, cfg = model_from_checkpoint(ckpt)
    if images is None:
        images = [r.load_image() for r in records]
    for img, r in zip(images, records):
        if img.ndim != 2:
            raise ConfigMismatch(f"{r.image_id}: expected a single-channel image")
    return evaluate_model(net, records, images, cfg.eval_batch_size, cfg.delta,
                          _report_meta(cfg, ckpt.get("n_params", count_parameters(net))))


def oracle_report(records) -> MetricsReport:
    """Report for predictions equal to the ground truth."""
    return esa_score([PoseEstimatePair(r.pose, r.pose, r.image_id, r.domain) for r in records])


# --------------------------------------------------------------------------- training


def _augment(img, pose, rng: np.random.Generator, cfg: TrainConfig, k: CameraIntrinsics):
    if rng.random() < cfg.roll_prob:
        theta = math.radians(rng.uniform(-cfg.roll_max_deg, cfg.roll_max_deg))
        img, pose = augment_roll(img, pose, theta, k)
    img = photometric_jitter(img, rng, cfg.jitter)
    return img, pose


def build_batch(cache: ImageCache, idx, epoch: int, cfg: TrainConfig, k: CameraIntrinsics,
                augment: bool = True):
    """Images and labels for one batch; augmentation draws depend only on (seed, epoch, index)."""
    imgs, qs, ts = [], [], []
    for i in idx:
        img, pose = cache.images[i], cache.records[i].pose
        if augment:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, epoch, int(i)]))
            img, pose = _augment(img, pose, rng, cfg, k)
        imgs.append(img)
        qs.append(pose.orientation)
        ts.append(pose.position)
    x = images_to_tensor(imgs, cfg.model)
    labels = {
        "orientation": torch.tensor(np.stack(qs), dtype=torch.float32),
        "position": torch.tensor(np.stack(ts), dtype=torch.float32),
    }
    return x, labels


def train(cfg: TrainConfig, train_set, val_set, intrinsics: CameraIntrinsics | None = None,
          progress=None) -> TrainResult:
    """Run the full schedule; returns the final and best-validation checkpoints plus the log.

    ``train_set``/``val_set`` are lists of :class:`SampleRecord` or
    :class:`ImageCache`. ``progress`` is called with each finished
    :class:`EpochRow`.
    """
    if not len(train_set) or not len(val_set):
        raise InvalidConfig("training and validation sets must be nonempty")
    k = intrinsics or CameraIntrinsics()
    tr = train_set if isinstance(train_set, ImageCache) else ImageCache(train_set)
    va = val_set if isinstance(val_set, ImageCache) else ImageCache(val_set)

    torch.manual_seed(cfg.seed)
    net = build_model(replace(cfg.model, seed=cfg.seed))
    n_params = count_parameters(net)
    grid = build_grid(cfg.model.n_bins, cfg.delta) if cfg.mode == "softclass" else None
    opt = torch.optim.SGD(net.parameters(), lr=cfg.lr_schedule[0][1], momentum=cfg.momentum,
                          weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))

    trace = TrainLog()
    best, best_score, final = None, math.inf, None
    meta = _report_meta(cfg, n_params)
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg.lr_schedule, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        net.train()
        order = order_rng.permutation(len(tr.records))
        sums = np.zeros(3)
        n_seen = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, labels = build_batch(tr, idx, epoch, cfg, k)
            if grid is not None:
                target = encode_soft(labels["orientation"].double().numpy(), grid)
                if log.isEnabledFor(logging.DEBUG):
                    assert np.all(target >= 0) and np.allclose(target.sum(axis=1), 1.0, atol=1e-6)
                labels["soft_target"] = torch.as_tensor(target, dtype=torch.float32)
            loss, terms = combined_loss(net(x), labels, cfg.loss, cfg.mode)
            if not torch.isfinite(loss):
                ids = [tr.records[i].image_id for i in idx]
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}: batch {ids}", ids)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            b = len(idx)
            sums += b * np.array([loss.item(), terms["position"].item(), terms["orientation"].item()])
            n_seen += b
        report = evaluate_model(net, va.records, va.images, cfg.eval_batch_size, cfg.delta, meta)
        row = EpochRow(epoch, lr, *(sums / n_seen), report.e_t_mean, report.e_q_mean, report.esa_score)
        trace.rows.append(row)
        log.info("epoch %d lr %g loss %.4f val e_t %.3f m e_q %.2f deg E %.4f",
                 epoch, lr, row.train_loss, row.val_e_t, row.val_e_q, row.val_esa)
        if progress is not None:
            progress(row)
        metrics = {"val_e_t": row.val_e_t, "val_e_q": row.val_e_q, "val_esa": row.val_esa}
        if report.esa_score < best_score:
            best_score = report.esa_score
            best = make_checkpoint(net, cfg, epoch, k, metrics)
    final = make_checkpoint(net, cfg, cfg.epochs - 1, k, metrics)
    return TrainResult(final, best, trace)


# --------------------------------------------------------------------------- submissions


class MalformedSubmission(MalformedManifest):
    pass


def predict(checkpoint, image_dir, out_path=None) -> str:
    """Predict every ``*.png`` in ``image_dir``; returns (and optionally writes) the CSV text."""
    ckpt = load_checkpoint(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
    net, cfg = model_from_checkpoint(ckpt)
    paths = sorted(Path(image_dir).glob("*.png"))
    images = []
    for p in paths:
        img = cv2.imread(str(p), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise OSError(f"cannot read image {p}")
        images.append(img)
    lines = [",".join(SUBMISSION_HEADER)]
    if images:
        q, t = predict_poses(net, images, cfg.eval_batch_size, cfg.delta)
        for p, qi, ti in zip(paths, q, t):
            lines.append(",".join([p.name] + [f"{v:.9g}" for v in (*qi, *ti)]))
    text = "\n".join(lines) + "\n"
    if out_path is not None:
        Path(out_path).write_text(text)
    return text


def write_submission(rows, path) -> None:
    """Write ``(image_id, q, t)`` rows in the submission format."""
    lines = [",".join(SUBMISSION_HEADER)]
    for image_id, q, t in rows:
        lines.append(",".join([image_id] + [f"{v:.9g}" for v in (*q, *t)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_submission(path) -> dict[str, Pose]:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or tuple(h.strip() for h in lines[0].split(",")) != SUBMISSION_HEADER:
        raise MalformedSubmission(f"{path}:1: header must be {','.join(SUBMISSION_HEADER)}")
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        f = line.split(",")
        try:
            if len(f) != len(SUBMISSION_HEADER):
                raise ValueError(f"expected {len(SUBMISSION_HEADER)} fields, got {len(f)}")
            vals = np.array([float(v) for v in f[1:]])
            if not np.all(np.isfinite(vals)):
                raise ValueError("non-finite value")
            norm = np.linalg.norm(vals[:4])
            if norm == 0:
                raise ValueError("zero quaternion")
            if f[0] in out:
                raise ValueError(f"duplicate image_id {f[0]}")
        except ValueError as exc:
            raise MalformedSubmission(f"{path}:{lineno}: {exc}") from None
        out[f[0]] = Pose(vals[:4] / norm, vals[4:])
    return out


@dataclass
class ScoreResult:
    report: MetricsReport
    per_domain: dict[str, MetricsReport]
    g_factor: float | None  # None when undefined

    @property
    def g_factor_defined(self) -> bool:
        return self.g_factor is not None


def domain_g_factor(per_domain: dict[str, MetricsReport]) -> float | None:
    """``E_real / E_synthetic`` for a two-domain report; None when undefined."""
    if "synthetic" not in per_domain or len(per_domain) != 2:
        return None
    other = next(d for d in per_domain if d != "synthetic")
    e_syn, e_real = per_domain["synthetic"].esa_score, per_domain[other].esa_score
    if e_syn <= 0:
        return None
    return g_factor(e_real, e_syn)


def score_submission(submission, labels) -> ScoreResult:
    """Join predictions with labels on ``image_id`` and score them per domain."""
    preds = read_submission(submission) if not isinstance(submission, dict) else submission
    records = read_labels(labels) if not isinstance(labels, list) else labels
    by_id = {r.image_id: r for r in records}
    unknown = set(preds) - set(by_id)
    if unknown:
        raise UnknownId(unknown)
    missing = set(by_id) - set(preds)
    if missing:
        raise MissingPrediction(missing)
    pairs = [PoseEstimatePair(preds[r.image_id], r.pose, r.image_id, r.domain) for r in records]
    report = esa_score(pairs)
    per_domain = {d: report.subset(d) for d in report.domains()}
    gf = domain_g_factor(per_domain)
    if len(per_domain) == 2:
        report.meta["g_factor"] = "undefined" if gf is None else f"{gf:.9g}"
    for d, sub in per_domain.items():
        report.meta[f"esa_score.{d}"] = f"{sub.esa_score:.9g}"
    return ScoreResult(report, per_domain, gf)

