"""Synthetic glyph corpus generation.

The real capture rig is not available at a developer desk, so training and
evaluation run against synthetic trajectories: each class is a polyline
glyph template in the unit square (y growing downward, matching the browser
writing pad), and samples are produced by jittering control points, small
random rotation and scale, then resampling and normalizing like any other
trajectory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, InvalidConfigError
from .trajectory import RESAMPLE_SPACING, Trajectory, TrajectoryPoint, normalize, resample


@dataclass
class GlyphTemplate:
    """One character class: a label and its stroke control polylines."""

    class_id: int
    label: str
    strokes: list[np.ndarray]  # each [k, 2] in the unit square

    def __post_init__(self):
        if not self.strokes:
            raise InvalidConfigError(f"template {self.label!r} has no strokes")
        self.strokes = [np.asarray(s, dtype=np.float64) for s in self.strokes]
        for s in self.strokes:
            if s.ndim != 2 or s.shape[1] != 2 or s.shape[0] < 2:
                raise InvalidConfigError(
                    f"template {self.label!r}: each stroke needs >= 2 control points"
                )

    def as_trajectory(self) -> Trajectory:
        pts = []
        for i, stroke in enumerate(self.strokes, start=1):
            pts.extend(TrajectoryPoint(float(x), float(y), i) for x, y in stroke)
        return Trajectory(pts, self.label)


# 20 geometric glyphs: digits plus ten easily-polylined capitals.
_BUILTIN: list[tuple[str, list[list[tuple[float, float]]]]] = [
    ("0", [[(0.50, 0.08), (0.28, 0.22), (0.20, 0.50), (0.28, 0.78), (0.50, 0.92),
            (0.72, 0.78), (0.80, 0.50), (0.72, 0.22), (0.50, 0.08)]]),
    ("1", [[(0.50, 0.08), (0.50, 0.92)]]),
    ("2", [[(0.22, 0.28), (0.35, 0.10), (0.65, 0.10), (0.78, 0.28), (0.22, 0.90),
            (0.78, 0.90)]]),
    ("3", [[(0.25, 0.15), (0.60, 0.08), (0.75, 0.28), (0.50, 0.46), (0.75, 0.64),
            (0.60, 0.90), (0.25, 0.84)]]),
    ("4", [[(0.62, 0.08), (0.20, 0.62), (0.84, 0.62)], [(0.66, 0.34), (0.66, 0.94)]]),
    ("5", [[(0.76, 0.10), (0.30, 0.10), (0.27, 0.45), (0.62, 0.42), (0.78, 0.62),
            (0.68, 0.86), (0.28, 0.90)]]),
    ("6", [[(0.70, 0.10), (0.40, 0.28), (0.26, 0.58), (0.38, 0.88), (0.66, 0.86),
            (0.74, 0.62), (0.52, 0.50), (0.30, 0.62)]]),
    ("7", [[(0.20, 0.10), (0.80, 0.10), (0.42, 0.92)]]),
    ("8", [[(0.50, 0.50), (0.30, 0.34), (0.50, 0.08), (0.70, 0.34), (0.50, 0.50),
            (0.28, 0.70), (0.50, 0.94), (0.72, 0.70), (0.50, 0.50)]]),
    ("9", [[(0.72, 0.34), (0.50, 0.48), (0.28, 0.34), (0.38, 0.10), (0.64, 0.10),
            (0.72, 0.34), (0.58, 0.92)]]),
    ("A", [[(0.15, 0.92), (0.50, 0.08), (0.85, 0.92)], [(0.30, 0.60), (0.70, 0.60)]]),
    ("C", [[(0.76, 0.20), (0.52, 0.08), (0.28, 0.26), (0.22, 0.50), (0.28, 0.74),
            (0.52, 0.92), (0.76, 0.80)]]),
    ("E", [[(0.76, 0.10), (0.26, 0.10), (0.26, 0.90), (0.76, 0.90)],
           [(0.26, 0.50), (0.66, 0.50)]]),
    ("H", [[(0.26, 0.08), (0.26, 0.92)], [(0.74, 0.08), (0.74, 0.92)],
           [(0.26, 0.50), (0.74, 0.50)]]),
    ("L", [[(0.30, 0.08), (0.30, 0.90), (0.76, 0.90)]]),
    ("N", [[(0.25, 0.92), (0.25, 0.08), (0.75, 0.92), (0.75, 0.08)]]),
    ("T", [[(0.18, 0.10), (0.82, 0.10)], [(0.50, 0.10), (0.50, 0.92)]]),
    ("U", [[(0.25, 0.08), (0.25, 0.68), (0.40, 0.90), (0.60, 0.90), (0.75, 0.68),
            (0.75, 0.08)]]),
    ("X", [[(0.20, 0.10), (0.80, 0.90)], [(0.80, 0.10), (0.20, 0.90)]]),
    ("Z", [[(0.20, 0.10), (0.80, 0.10), (0.20, 0.90), (0.80, 0.90)]]),
]


def builtin_templates() -> list[GlyphTemplate]:
    """The shipped 20-class glyph set."""
    return [
        GlyphTemplate(i, label, [np.array(s, dtype=np.float64) for s in strokes])
        for i, (label, strokes) in enumerate(_BUILTIN)
    ]


def load_templates(path) -> list[GlyphTemplate]:
    """Load templates from a JSON array of {class, strokes} objects."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid template JSON: {exc.msg}") from exc
    if not isinstance(raw, list) or not raw:
        raise DataFormatError("template file must be a non-empty JSON array")
    templates = []
    for i, obj in enumerate(raw):
        if not isinstance(obj, dict) or set(obj) != {"class", "strokes"}:
            raise DataFormatError(f"template {i} must have exactly 'class' and 'strokes'")
        if not isinstance(obj["class"], str):
            raise DataFormatError(f"template {i}: 'class' must be a string")
        try:
            templates.append(GlyphTemplate(i, obj["class"], obj["strokes"]))
        except (InvalidConfigError, ValueError) as exc:
            raise DataFormatError(f"template {i}: {exc}") from exc
    return templates


def save_templates(templates: list[GlyphTemplate], path) -> None:
    payload = [
        {"class": t.label, "strokes": [s.tolist() for s in t.strokes]}
        for t in templates
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def _transform(strokes: list[np.ndarray], rng: np.random.Generator,
               noise: float, max_rotation_deg: float, max_scale_jitter: float) -> list[np.ndarray]:
    theta = math.radians(rng.uniform(-max_rotation_deg, max_rotation_deg)) if max_rotation_deg > 0 else 0.0
    factor = 1.0 + (rng.uniform(-max_scale_jitter, max_scale_jitter) if max_scale_jitter > 0 else 0.0)
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    center = np.array([0.5, 0.5])
    out = []
    for stroke in strokes:
        pts = stroke.copy()
        if noise > 0:
            pts = pts + rng.normal(0.0, noise, size=pts.shape)
        pts = (pts - center) @ rot.T * factor + center
        out.append(pts)
    return out


def synth_generate(
    templates: list[GlyphTemplate],
    per_class: int,
    seed: int,
    noise: float = 0.02,
    max_rotation_deg: float = 10.0,
    max_scale_jitter: float = 0.10,
    spacing: float = RESAMPLE_SPACING,
) -> list[Trajectory]:
    """Deterministically generate ``per_class`` labeled samples per template."""
    if per_class < 1:
        raise InvalidConfigError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    samples: list[Trajectory] = []
    for template in templates:
        for _ in range(per_class):
            strokes = _transform(template.strokes, rng, noise, max_rotation_deg, max_scale_jitter)
            pts = []
            for i, stroke in enumerate(strokes, start=1):
                pts.extend(TrajectoryPoint(float(x), float(y), i) for x, y in stroke)
            traj = Trajectory(pts, template.label)
            # normalize first so the spacing is in normalized units, matching
            # the inference pipeline
            samples.append(resample(normalize(traj), spacing))
    return samples


def split_corpus(
    samples: list[Trajectory],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[Trajectory], list[Trajectory], list[Trajectory]]:
    """Stratified train/val/test split, deterministic for a given seed."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidConfigError(f"split fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[Trajectory]] = {}
    for s in samples:
        by_label.setdefault(s.label or "", []).append(s)
    train: list[Trajectory] = []
    val: list[Trajectory] = []
    test: list[Trajectory] = []
    for label in sorted(by_label):
        group = by_label[label]
        order = rng.permutation(len(group))
        n_train = int(round(fractions[0] * len(group)))
        n_val = int(round(fractions[1] * len(group)))
        for rank, idx in enumerate(order):
            if rank < n_train:
                train.append(group[idx])
            elif rank < n_train + n_val:
                val.append(group[idx])
            else:
                test.append(group[idx])
    return train, val, test
