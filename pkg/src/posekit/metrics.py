"""Competition pose metrics, generalization factor and error-by-distance tables."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInput, InvalidBins, ZeroNormGroundTruth
from .geometry import Pose, quat_angular_distance

PER_IMAGE_COLUMNS = ("image_id", "domain", "distance_m", "e_t_m", "e_q_deg", "esa")


@dataclass(frozen=True)
class PoseEstimatePair:
    predicted: Pose
    ground_truth: Pose
    image_id: str = ""
    domain: str = "synthetic"

    def __post_init__(self):
        if self.ground_truth.distance <= 0:
            raise ZeroNormGroundTruth(f"{self.image_id}: ground-truth position has zero norm")


@dataclass
class ImageScore:
    image_id: str
    domain: str
    distance: float
    e_t: float
    e_q: float
    esa: float


@dataclass
class MetricsReport:
    e_t_mean: float
    e_q_mean: float
    esa_score: float
    n_samples: int
    per_image: list[ImageScore] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def domains(self) -> list[str]:
        return sorted({s.domain for s in self.per_image})

    def subset(self, domain: str) -> "MetricsReport":
        rows = [s for s in self.per_image if s.domain == domain]
        return _aggregate(rows, dict(self.meta))

    def to_text(self) -> str:
        """Flat ``key=value`` header, a blank line, then the per-image CSV table."""
        buf = io.StringIO()
        for key, value in self.summary().items():
            buf.write(f"{key}={value}\n")
        buf.write("\n")
        buf.write(",".join(PER_IMAGE_COLUMNS) + "\n")
        for s in self.per_image:
            buf.write(
                f"{s.image_id},{s.domain},{s.distance:.9g},{s.e_t:.9g},{s.e_q:.9g},{s.esa:.9g}\n"
            )
        return buf.getvalue()

    def summary(self) -> dict:
        out = {
            "n_samples": self.n_samples,
            "e_t_mean": f"{self.e_t_mean:.9g}",
            "e_q_mean": f"{self.e_q_mean:.9g}",
            "esa_score": f"{self.esa_score:.9g}",
        }
        for k, v in self.meta.items():
            out[k] = v
        return out

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def per_image_scores(pair: PoseEstimatePair) -> tuple[float, float, float]:
    """``(e_t [m], e_q [deg], esa)`` for one image."""
    t_hat = pair.predicted.position
    t = pair.ground_truth.position
    e_t = float(np.linalg.norm(t_hat - t))
    e_q_rad = quat_angular_distance(pair.predicted.orientation, pair.ground_truth.orientation)
    return e_t, math.degrees(e_q_rad), e_t / float(np.linalg.norm(t)) + e_q_rad


def _aggregate(rows: list[ImageScore], meta=None) -> MetricsReport:
    if not rows:
        raise EmptyInput("no pose pairs to score")
    return MetricsReport(
        e_t_mean=float(np.mean([r.e_t for r in rows])),
        e_q_mean=float(np.mean([r.e_q for r in rows])),
        esa_score=float(np.mean([r.esa for r in rows])),
        n_samples=len(rows),
        per_image=rows,
        meta=meta or {},
    )


def esa_score(pairs, meta=None) -> MetricsReport:
    rows = []
    for p in pairs:
        e_t, e_q, esa = per_image_scores(p)
        rows.append(ImageScore(p.image_id, p.domain, p.ground_truth.distance, e_t, e_q, esa))
    return _aggregate(rows, meta)


def g_factor(e_real: float, e_syn: float) -> float:
    """Ratio of real-domain to synthetic-domain score."""
    if not e_syn > 0:
        raise ZeroDivisionError(f"synthetic score must be positive, got {e_syn}")
    return e_real / e_syn


def read_report(path) -> MetricsReport:
    text = Path(path).read_text()
    head, _, table = text.partition("\n\n")
    kv = {}
    for line in head.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
    rows = []
    lines = table.strip().splitlines()
    if lines:
        header = lines[0].split(",")
        if tuple(header) != PER_IMAGE_COLUMNS:
            raise ValueError(f"{path}: unexpected report columns {header}")
        for line in lines[1:]:
            f = line.split(",")
            rows.append(ImageScore(f[0], f[1], float(f[2]), float(f[3]), float(f[4]), float(f[5])))
    if not rows:
        raise EmptyInput(f"{path}: report has no per-image rows")
    meta = {k: v for k, v in kv.items() if k not in ("n_samples", "e_t_mean", "e_q_mean", "esa_score")}
    return _aggregate(rows, meta)


@dataclass
class DistanceBin:
    lo: float
    hi: float
    count: int
    e_t_mean: float | None
    e_t_median: float | None
    e_t_p90: float | None
    e_q_mean: float | None
    e_q_median: float | None
    e_q_p90: float | None


DISTANCE_COLUMNS = (
    "bin_lo_m", "bin_hi_m", "count",
    "e_t_mean", "e_t_median", "e_t_p90", "e_q_mean", "e_q_median", "e_q_p90",
)


def error_by_distance(scores, bin_edges) -> list[DistanceBin]:
    """Group per-image errors into left-closed, right-open distance bins.

    ``scores`` may be :class:`PoseEstimatePair` objects, :class:`ImageScore`
    rows or a :class:`MetricsReport`. Images outside the edges are dropped.
    """
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise InvalidBins("bin edges must be a strictly increasing sequence of at least two values")
    if isinstance(scores, MetricsReport):
        scores = scores.per_image
    rows = []
    for s in scores:
        if isinstance(s, PoseEstimatePair):
            e_t, e_q, _ = per_image_scores(s)
            rows.append((s.ground_truth.distance, e_t, e_q))
        else:
            rows.append((s.distance, s.e_t, s.e_q))
    data = np.asarray(rows, dtype=float).reshape(-1, 3)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = data[(data[:, 0] >= lo) & (data[:, 0] < hi)]
        if len(sel) == 0:
            out.append(DistanceBin(float(lo), float(hi), 0, *([None] * 6)))
            continue
        et, eq = sel[:, 1], sel[:, 2]
        out.append(
            DistanceBin(
                float(lo), float(hi), len(sel),
                float(et.mean()), float(np.median(et)), float(np.percentile(et, 90)),
                float(eq.mean()), float(np.median(eq)), float(np.percentile(eq, 90)),
            )
        )
    return out


def distance_table_csv(bins: list[DistanceBin]) -> str:
    lines = [",".join(DISTANCE_COLUMNS)]
    for b in bins:
        vals = [b.lo, b.hi, b.count, b.e_t_mean, b.e_t_median, b.e_t_p90, b.e_q_mean, b.e_q_median, b.e_q_p90]
        lines.append(",".join("" if v is None else f"{v:.9g}" for v in vals))
    return "\n".join(lines) + "\n"
