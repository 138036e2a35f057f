"""Fingertip trajectory data model, preprocessing, and derivative features.

A trajectory is an ordered list of ``(p, q, s)`` samples: planar fingertip
coordinates plus a stroke identity that starts at 1 and increments by one at
each pen-up boundary.  Characters are represented for the model purely by
per-step derivatives: coordinate offsets, writing direction, curvature, and
stroke-boundary indicators, so the features are invariant to where the
character was written.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DataFormatError, EmptyInputError, TooShortError

# default arc spacing between resampled points, in normalized units
RESAMPLE_SPACING = 0.02

# interior vertices turning more than this are kept as resampling anchors
CORNER_ANGLE_RAD = math.radians(15.0)

FEATURE_DIM = 8
COL_DP, COL_DQ, COL_SIN_A, COL_COS_A, COL_SIN_B, COL_COS_B, COL_SAME, COL_NEW = range(8)


class TrajectoryPoint(NamedTuple):
    p: float
    q: float
    s: int


@dataclass
class Trajectory:
    """Ordered fingertip samples with an optional ground-truth label."""

    points: list[TrajectoryPoint]
    label: str | None = None

    def __len__(self) -> int:
        return len(self.points)

    def coords(self) -> np.ndarray:
        return np.array([(pt.p, pt.q) for pt in self.points], dtype=np.float64)

    def stroke_ids(self) -> np.ndarray:
        return np.array([pt.s for pt in self.points], dtype=np.int64)

    @staticmethod
    def from_arrays(coords: np.ndarray, strokes: np.ndarray, label: str | None = None) -> "Trajectory":
        pts = [
            TrajectoryPoint(float(x), float(y), int(s))
            for (x, y), s in zip(coords, strokes)
        ]
        return Trajectory(pts, label)


class FeatureVector(NamedTuple):
    dp: float
    dq: float
    sin_a: float
    cos_a: float
    sin_b: float
    cos_b: float
    same_stroke: float
    new_stroke: float


class FeatureSequence:
    """Row-per-step derivative features, stored as a ``[T-2, 8]`` matrix."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != FEATURE_DIM:
            raise DataFormatError(f"feature matrix must be [n, {FEATURE_DIM}], got {matrix.shape}")
        if matrix.shape[0] < 1:
            raise EmptyInputError("feature sequence must have at least one row")
        self.matrix = matrix

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def __getitem__(self, i: int) -> FeatureVector:
        return FeatureVector(*self.matrix[i])


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def normalize(traj: Trajectory) -> Trajectory:
    """Map coordinates into the unit square, centered, aspect preserved.

    The longer bounding-box axis spans [0, 1]; the shorter one is centered
    around 0.5.  A degenerate (single-point) bounding box collapses to the
    center.
    """
    if not traj.points:
        raise EmptyInputError("cannot normalize an empty trajectory")
    xy = traj.coords()
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    extent = hi - lo
    longest = float(extent.max())
    if longest == 0.0:
        xy = np.full_like(xy, 0.5)
    else:
        xy = (xy - lo) / longest + (1.0 - extent / longest) / 2.0
    return Trajectory.from_arrays(xy, traj.stroke_ids(), traj.label)


def _dedupe(points: np.ndarray) -> np.ndarray:
    if len(points) < 2:
        return points
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.any(points[1:] != points[:-1], axis=1)
    return points[keep]


def _corner_anchors(points: np.ndarray) -> list[int]:
    """Indices of interior vertices whose turn angle exceeds the threshold."""
    anchors = []
    if len(points) < 3:
        return anchors
    seg = np.diff(points, axis=0)
    norms = np.linalg.norm(seg, axis=1)
    for i in range(1, len(points) - 1):
        a, b = seg[i - 1], seg[i]
        na, nb = norms[i - 1], norms[i]
        if na == 0.0 or nb == 0.0:
            continue
        cosang = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
        if math.acos(cosang) > CORNER_ANGLE_RAD:
            anchors.append(i)
    return anchors


def _resample_run(points: np.ndarray, spacing: float) -> np.ndarray:
    """Equal arc-length subdivision of one polyline run, endpoints exact."""
    seg_len = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = float(seg_len.sum())
    if total == 0.0:
        return points[[0, -1]]
    pieces = max(1, int(round(total / spacing)))
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    targets = np.linspace(0.0, total, pieces + 1)
    x = np.interp(targets, cum, points[:, 0])
    y = np.interp(targets, cum, points[:, 1])
    out = np.column_stack([x, y])
    out[0] = points[0]
    out[-1] = points[-1]
    return out


def _resample_stroke(points: np.ndarray, spacing: float) -> np.ndarray:
    points = _dedupe(points)
    if len(points) == 1:
        return np.repeat(points, 2, axis=0)
    # sharp corners are kept as anchors so repeated resampling does not
    # progressively shave them off
    anchors = [0] + _corner_anchors(points) + [len(points) - 1]
    runs = []
    for a, b in zip(anchors[:-1], anchors[1:]):
        run = _resample_run(points[a : b + 1], spacing)
        runs.append(run if a == anchors[0] else run[1:])
    return np.concatenate(runs, axis=0)


def resample(traj: Trajectory, spacing: float = RESAMPLE_SPACING) -> Trajectory:
    """Resample each stroke to roughly equidistant arc-length spacing.

    Stroke endpoints and sharp interior corners are retained exactly; each
    run in between is divided uniformly into ``round(length / spacing)``
    pieces.  A stroke shorter than the spacing keeps only its endpoints.
    """
    if spacing <= 0:
        raise ValueError(f"spacing must be > 0, got {spacing}")
    if not traj.points:
        raise EmptyInputError("cannot resample an empty trajectory")
    xy = traj.coords()
    sid = traj.stroke_ids()
    new_xy = []
    new_sid = []
    for stroke in np.unique(sid):
        pts = _resample_stroke(xy[sid == stroke], spacing)
        new_xy.append(pts)
        new_sid.append(np.full(len(pts), stroke, dtype=np.int64))
    return Trajectory.from_arrays(
        np.concatenate(new_xy, axis=0), np.concatenate(new_sid), traj.label
    )


# ---------------------------------------------------------------------------
# derivative features
# ---------------------------------------------------------------------------


def extract_features(traj: Trajectory) -> FeatureSequence:
    """Eight derivative features per interior point of the trajectory.

    For each step ``t`` with movement vectors ``v_t`` (point t to t+1) and
    ``v_{t+1}``: the coordinate offsets, the unit writing direction of
    ``v_t``, the sine/cosine of the turn between consecutive movements, and
    the same-stroke / new-stroke indicator pair comparing ``s_t`` with
    ``s_{t+1}``.  Zero-length movement vectors fall back to (sin, cos) =
    (0, 1), i.e. "straight ahead".
    """
    n = len(traj.points)
    if n < 3:
        raise TooShortError(f"need at least 3 points to extract features, got {n}")
    xy = traj.coords()
    if not np.isfinite(xy).all():
        raise DataFormatError("trajectory coordinates must be finite")
    sid = traj.stroke_ids()

    v = np.diff(xy, axis=0)  # [n-1, 2]
    v1 = v[:-1]
    v2 = v[1:]
    n1 = np.linalg.norm(v1, axis=1)
    n2 = np.linalg.norm(v2, axis=1)

    ok1 = n1 > 0.0
    safe1 = np.where(ok1, n1, 1.0)
    cos_a = np.where(ok1, v1[:, 0] / safe1, 1.0)
    sin_a = np.where(ok1, v1[:, 1] / safe1, 0.0)

    ok12 = ok1 & (n2 > 0.0)
    denom = np.where(ok12, n1 * n2, 1.0)
    cos_b = np.where(ok12, (v1 * v2).sum(axis=1) / denom, 1.0)
    sin_b = np.where(ok12, (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]) / denom, 0.0)
    # clamp rounding spill so the unit-circle invariant survives float math
    cos_b = np.clip(cos_b, -1.0, 1.0)

    same = (sid[:-2] == sid[1:-1]).astype(np.float64)
    rows = np.column_stack([v1[:, 0], v1[:, 1], sin_a, cos_a, sin_b, cos_b, same, 1.0 - same])
    return FeatureSequence(rows)


def prepare(traj: Trajectory, spacing: float = RESAMPLE_SPACING) -> FeatureSequence:
    """Full preprocessing pipeline: normalize, resample, featurize."""
    return extract_features(resample(normalize(traj), spacing))


# ---------------------------------------------------------------------------
# corpus files (JSON Lines, one sample per line)
# ---------------------------------------------------------------------------


def validate_points(raw, require_label: bool = False) -> list[TrajectoryPoint]:
    """Validate a raw ``[[p, q, s], ...]`` array into trajectory points.

    Enforces: at least 3 points, finite coordinates, integer stroke ids that
    start at 1 and never decrease or jump by more than one.
    """
    if not isinstance(raw, list) or len(raw) < 3:
        raise DataFormatError("points must be an array of at least 3 [p, q, s] triples")
    points: list[TrajectoryPoint] = []
    prev_s = None
    for i, item in enumerate(raw):
        if not isinstance(item, (list, tuple)) or len(item) != 3:
            raise DataFormatError(f"point {i} is not a [p, q, s] triple")
        p, q, s = item
        if not isinstance(p, (int, float)) or not isinstance(q, (int, float)) or isinstance(p, bool) or isinstance(q, bool):
            raise DataFormatError(f"point {i} has non-numeric coordinates")
        if not (math.isfinite(p) and math.isfinite(q)):
            raise DataFormatError(f"point {i} has non-finite coordinates")
        if not isinstance(s, int) or isinstance(s, bool):
            raise DataFormatError(f"point {i} has a non-integer stroke id")
        if prev_s is None:
            if s != 1:
                raise DataFormatError(f"stroke ids must start at 1, got {s}")
        elif s < prev_s or s > prev_s + 1:
            raise DataFormatError(f"stroke id jumps from {prev_s} to {s} at point {i}")
        prev_s = s
        points.append(TrajectoryPoint(float(p), float(q), s))
    return points


def parse_sample(obj, require_label: bool = True) -> Trajectory:
    """Parse one corpus object ``{"label": ..., "points": ...}``."""
    if not isinstance(obj, dict):
        raise DataFormatError("sample must be a JSON object")
    allowed = {"label", "points"}
    unknown = set(obj) - allowed
    if unknown:
        raise DataFormatError(f"unknown sample fields: {sorted(unknown)}")
    if "points" not in obj:
        raise DataFormatError("sample is missing 'points'")
    label = obj.get("label")
    if require_label and not isinstance(label, str):
        raise DataFormatError("sample is missing a string 'label'")
    if label is not None and not isinstance(label, str):
        raise DataFormatError("'label' must be a string")
    return Trajectory(validate_points(obj["points"]), label)


def read_corpus(path, require_label: bool = True) -> list[Trajectory]:
    """Read a JSON Lines corpus, reporting bad lines by number."""
    samples: list[Trajectory] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON ({exc.msg})", lineno) from exc
            try:
                samples.append(parse_sample(obj, require_label=require_label))
            except DataFormatError as exc:
                raise DataFormatError(str(exc), lineno) from exc
    if not samples:
        raise EmptyInputError(f"corpus {path} contains no samples")
    return samples


def write_corpus(samples: Iterable[Trajectory], path) -> int:
    """Write samples as JSON Lines; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for traj in samples:
            obj = {
                "label": traj.label,
                "points": [[pt.p, pt.q, pt.s] for pt in traj.points],
            }
            fh.write(json.dumps(obj) + "\n")
            count += 1
    return count
