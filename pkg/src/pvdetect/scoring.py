"""Pixel- and object-level precision/recall evaluation.

Pixel scoring pools every pixel of the supplied maps and sweeps the
acceptance threshold over the distinct positive confidence values in
descending order (a pixel with confidence exactly at the threshold counts
as detected).  Object scoring links detections to annotations with the
Jaccard overlap: a detection is judged against the union of every
annotation it touches, and an accepted detection marks all of them as
detected.

Both flavors report the positive-class prevalence as the random-detector
baseline: the positive pixel fraction at pixel level, and the precision
of the full candidate list at object level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detection import DetectionObject
from .errors import ConfigError, DataError, InputError


@dataclass(frozen=True)
class PRCurve:
    """Points of a precision/recall sweep, thresholds strictly decreasing."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    prevalence: float
    quantized: bool = False

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        p = np.asarray(self.precision, dtype=np.float64)
        r = np.asarray(self.recall, dtype=np.float64)
        for name, arr in (("thresholds", t), ("precision", p), ("recall", r)):
            object.__setattr__(self, name, arr)
            if arr.shape != t.shape:
                raise DataError("curve arrays must have identical length")
        if t.size:
            if not (np.diff(t) < 0).all():
                raise DataError("thresholds must be strictly decreasing")
            if (np.diff(r) < 0).any():
                raise DataError("recall must be non-decreasing along the sweep")
            for name, arr in (("precision", p), ("recall", r)):
                if arr.min() < 0.0 or arr.max() > 1.0:
                    raise DataError(f"{name} outside [0, 1]")

    @property
    def max_recall(self) -> float:
        return float(self.recall[-1]) if self.recall.size else 0.0

    def best_precision_at(self, min_recall: float) -> float:
        """Highest precision among points with recall >= min_recall."""
        ok = self.recall >= min_recall
        return float(self.precision[ok].max()) if ok.any() else 0.0

    def best_recall_at(self, min_precision: float) -> float:
        """Highest recall among points with precision >= min_precision."""
        ok = self.precision >= min_precision
        return float(self.recall[ok].max()) if ok.any() else 0.0


def jaccard(set_a, set_b) -> float:
    """Jaccard overlap |A & B| / |A | B| of two pixel sets."""
    a, b = set(set_a), set(set_b)
    if not a and not b:
        raise ValueError("jaccard of two empty sets is undefined")
    return len(a & b) / len(a | b)


def pixel_pr(
    conf_maps: list[np.ndarray],
    label_masks: list[np.ndarray],
    sweep: str = "exact",
) -> PRCurve:
    """Pooled pixel-level PR curve over paired maps and masks.

    sweep="exact" uses every distinct positive confidence as a threshold;
    sweep="quantized" uses the 1001 uniform thresholds 1.000 .. 0.000 and
    marks the curve as quantized (thresholds that accept no pixel are
    dropped, since precision is undefined there).  In both modes pixels
    with zero confidence are never counted as detections.
    """
    if sweep not in ("exact", "quantized"):
        raise ConfigError(f"unknown sweep mode {sweep!r}")
    if len(conf_maps) != len(label_masks) or not conf_maps:
        raise ConfigError("need one label mask per confidence map")
    confs, labels = [], []
    for conf, mask in zip(conf_maps, label_masks):
        conf = np.asarray(conf, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if conf.shape != mask.shape:
            raise DataError(f"map {conf.shape} does not match mask {mask.shape}")
        if conf.size and (
            not np.isfinite(conf).all() or conf.min() < 0.0 or conf.max() > 1.0
        ):
            raise DataError("confidences must be finite values in [0, 1]")
        confs.append(conf.ravel())
        labels.append(mask.ravel())
    conf = np.concatenate(confs)
    label = np.concatenate(labels)
    n_pos = int(label.sum())
    if n_pos == 0:
        raise DataError("ground truth contains no positive pixels")
    prevalence = n_pos / label.size

    order = np.argsort(-conf, kind="stable")
    sorted_conf = conf[order]
    cum_tp = np.cumsum(label[order])

    if sweep == "exact":
        positive = sorted_conf > 0.0
        last_of_value = np.ones(sorted_conf.size, dtype=bool)
        last_of_value[:-1] = sorted_conf[:-1] != sorted_conf[1:]
        ends = np.nonzero(last_of_value & positive)[0]
        thresholds = sorted_conf[ends]
        detected = ends + 1
        tp = cum_tp[ends]
    else:
        levels = np.arange(1000, -1, -1) / 1000.0
        # detections at threshold t: pixels with 0 < confidence and conf >= t
        n_positive_conf = int((sorted_conf > 0.0).sum())
        detected = np.searchsorted(-sorted_conf, -levels, side="right")
        detected = np.minimum(detected, n_positive_conf)
        keep = detected >= 1
        thresholds = levels[keep]
        detected = detected[keep]
        tp = cum_tp[detected - 1]

    precision = tp / detected
    recall = tp / n_pos
    return PRCurve(thresholds, precision, recall, prevalence, sweep == "quantized")


@dataclass(frozen=True)
class MatchResult:
    """Outcome of linking detections to annotations at one Jaccard level."""

    accepted: tuple[bool, ...]
    detected_by: tuple[frozenset, ...] = field(default_factory=tuple)

    @property
    def n_true(self) -> int:
        return sum(self.accepted)

    @property
    def n_false(self) -> int:
        return len(self.accepted) - self.n_true

    @property
    def n_detected_annotations(self) -> int:
        return sum(1 for d in self.detected_by if d)


def match_objects(
    detections: list[DetectionObject],
    annotation_pixel_sets: list,
    jaccard_threshold: float,
) -> MatchResult:
    """Judge each detection against the union of the annotations it touches.

    A detection is true when that union is non-empty and their Jaccard
    overlap reaches the threshold; every annotation in the union is then
    detected.  Detections touching nothing, or falling short of the
    threshold, are false.
    """
    if not 0.0 < jaccard_threshold <= 1.0:
        raise ConfigError(
            f"jaccard threshold must be in (0, 1], got {jaccard_threshold}"
        )
    ann_sets = [frozenset(a) for a in annotation_pixel_sets]
    accepted = []
    detected_by = [set() for _ in ann_sets]
    for d_index, det in enumerate(detections):
        touching = [i for i, a in enumerate(ann_sets) if a & det.pixels]
        ok = False
        if touching:
            union = frozenset().union(*(ann_sets[i] for i in touching))
            ok = jaccard(det.pixels, union) >= jaccard_threshold
        accepted.append(ok)
        if ok:
            for i in touching:
                detected_by[i].add(d_index)
    return MatchResult(tuple(accepted), tuple(frozenset(s) for s in detected_by))


def object_pr(
    detections: list[DetectionObject],
    annotation_pixel_sets: list,
    jaccard_threshold: float,
) -> PRCurve:
    """Object-level PR curve, sweeping distinct detection confidences.

    At each threshold only detections at or above it are kept and matched;
    precision is the true fraction of kept detections and recall the
    detected fraction of annotations.  The prevalence field reports the
    precision of the full candidate list (the random-detector baseline);
    maximum recall can stay below 1 when some annotations are never
    covered.
    """
    if not annotation_pixel_sets:
        raise DataError("object scoring requires at least one annotation")
    if not detections:
        return PRCurve(np.array([]), np.array([]), np.array([]), 0.0)
    confidences = sorted({d.confidence for d in detections}, reverse=True)
    thresholds, precision, recall = [], [], []
    n_ann = len(annotation_pixel_sets)
    for t in confidences:
        kept = [d for d in detections if d.confidence >= t]
        result = match_objects(kept, annotation_pixel_sets, jaccard_threshold)
        thresholds.append(t)
        precision.append(result.n_true / len(kept))
        recall.append(result.n_detected_annotations / n_ann)
    full = match_objects(detections, annotation_pixel_sets, jaccard_threshold)
    prevalence = full.n_true / len(detections)
    return PRCurve(
        np.array(thresholds), np.array(precision), np.array(recall), prevalence
    )


def multi_tile_object_pr(
    detections_by_tile: dict,
    annotations_by_tile: dict,
    jaccard_threshold: float,
) -> PRCurve:
    """Object PR pooled over tiles, keyed by tile id.

    Pixel coordinates are namespaced per tile before pooling so objects on
    different tiles can never overlap each other.
    """
    tile_ids = sorted(annotations_by_tile)
    pooled_detections = []
    pooled_annotations = []
    for idx, tile_id in enumerate(tile_ids):
        for ann in annotations_by_tile[tile_id]:
            pooled_annotations.append(frozenset((idx, x, y) for x, y in ann))
        for det in detections_by_tile.get(tile_id, []):
            pooled_detections.append(
                DetectionObject(
                    frozenset((idx, x, y) for x, y in det.pixels), det.confidence
                )
            )
    extra = set(detections_by_tile) - set(tile_ids)
    if extra:
        raise DataError(f"detections reference unknown tiles: {sorted(extra)}")
    return object_pr(pooled_detections, pooled_annotations, jaccard_threshold)


# ---------------------------------------------------------------------------
# PR curve CSV
# ---------------------------------------------------------------------------


def write_pr_csv(curve: PRCurve, path) -> None:
    """CSV with header threshold,precision,recall and 17-digit decimals.

    Prevalence and the quantized flag ride along as '#' comment lines
    ahead of the header.
    """
    lines = [f"# prevalence={format(curve.prevalence, '.17g')}"]
    if curve.quantized:
        lines.append("# sweep=quantized")
    lines.append("threshold,precision,recall")
    for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
        lines.append(
            f"{format(t, '.17g')},{format(p, '.17g')},{format(r, '.17g')}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_pr_svg(curve: PRCurve, path, title: str = "") -> None:
    """Minimal standalone SVG of the curve, recall on x and precision on y."""
    width, height, margin = 480, 360, 48
    sx = width - 2 * margin
    sy = height - 2 * margin

    def px(r):
        return margin + r * sx

    def py(p):
        return height - margin - p * sy

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="13">recall</text>',
        f'<text x="14" y="{height // 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {height // 2})">precision</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{px(tick):.1f}" y="{height - margin + 16}" '
            f'text-anchor="middle" font-size="10">{tick:g}</text>'
        )
        parts.append(
            f'<text x="{margin - 6}" y="{py(tick) + 3:.1f}" '
            f'text-anchor="end" font-size="10">{tick:g}</text>'
        )
    if title:
        parts.append(
            f'<text x="{width // 2}" y="20" text-anchor="middle" '
            f'font-size="14">{title}</text>'
        )
    if curve.prevalence > 0:
        parts.append(
            f'<line x1="{px(0):.1f}" y1="{py(curve.prevalence):.1f}" '
            f'x2="{px(1):.1f}" y2="{py(curve.prevalence):.1f}" '
            f'stroke="gray" stroke-dasharray="4 3"/>'
        )
    if curve.recall.size:
        points = " ".join(
            f"{px(r):.2f},{py(p):.2f}" for r, p in zip(curve.recall, curve.precision)
        )
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="crimson" '
            f'stroke-width="1.5"/>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def read_pr_csv(path) -> PRCurve:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"PR file not found: {path}")
    prevalence = 0.0
    quantized = False
    rows = []
    saw_header = False
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("prevalence="):
                prevalence = float(body.split("=", 1)[1])
            elif body == "sweep=quantized":
                quantized = True
            continue
        if not saw_header:
            if line != "threshold,precision,recall":
                raise DataError(f"{path}: bad PR header {line!r}")
            saw_header = True
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}: bad PR row {line!r}")
        rows.append(tuple(float(v) for v in parts))
    if not saw_header:
        raise DataError(f"{path}: missing PR header")
    arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return PRCurve(arr[:, 0], arr[:, 1], arr[:, 2], prevalence, quantized)
