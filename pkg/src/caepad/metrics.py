"""
Biometric evaluation of reconstruction-error scores.

Conventions: higher score = more imposter-like; an image is accepted as a
client when ``score < threshold``.

* ``fpr`` is the false acceptance rate, imposters with ``score < threshold``.
* ``fnr`` is the false rejection rate, clients with ``score >= threshold``.
* The ROC treats imposter as the positive class: its x axis is the client
  rejection rate (``fnr``) and its y axis ``tpr = 1 - fpr``, the fraction of
  imposters flagged.
"""
import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CLIENT, IMPOSTER, LABELS, Threshold, reconstruction_error


class MetricError(ValueError):
    """Scores cannot support the requested metric (empty or single-class)."""


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: tuple
    provenance: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = tuple(self.labels)
        if len(self.labels) != len(self.scores):
            raise ValueError(f"{len(self.scores)} scores but {len(self.labels)} labels")
        if not np.all(np.isfinite(self.scores)) or np.any(self.scores < 0):
            raise ValueError("scores must be finite and non-negative")
        bad = set(self.labels) - set(LABELS)
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)}")

    def __len__(self):
        return len(self.scores)

    @property
    def is_imposter(self):
        return np.array([lab == IMPOSTER for lab in self.labels], dtype=bool)

    def client_scores(self):
        return self.scores[~self.is_imposter]

    def imposter_scores(self):
        return self.scores[self.is_imposter]

    def swapped(self):
        flip = {CLIENT: IMPOSTER, IMPOSTER: CLIENT}
        return ScoreSet(self.scores.copy(), [flip[lab] for lab in self.labels], self.provenance)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["score", "label"])
        for s, lab in zip(self.scores, self.labels):
            w.writerow([repr(float(s)), lab])
        if path is not None:
            Path(path).write_text(buf.getvalue(), encoding="utf-8")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path, provenance=None):
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["score", "label"]:
                raise MetricError(f"{path}: expected header 'score,label', got {header}")
            scores, labels = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    scores.append(float(row[0]))
                except (ValueError, IndexError):
                    raise MetricError(f"{path}:{lineno}: bad score row {row}") from None
                if len(row) != 2 or row[1] not in LABELS:
                    raise MetricError(f"{path}:{lineno}: bad label in row {row}")
                labels.append(row[1])
        return cls(scores, labels, provenance if provenance is not None else path.stem)


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    fpr: float
    fnr: float

    @property
    def hter(self):
        return (self.fpr + self.fnr) / 2.0

    @property
    def tpr(self):
        return 1.0 - self.fpr


@dataclass
class RocCurve:
    points: list
    auc: float
    provenance: str = field(default="")

    @property
    def thresholds(self):
        return np.array([p.threshold for p in self.points])

    def to_csv(self, path=None):
        lines = ["threshold,fpr,tpr,fnr"]
        for p in self.points:
            lines.append(f"{float(p.threshold)!r},{p.fpr!r},{p.tpr!r},{p.fnr!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def score_dataset(model, dataset, provenance="", chunk=64):
    """Reconstruction error of every ``(image, label, ...)`` item, in order."""
    if len(dataset) == 0:
        raise ValueError("cannot score an empty dataset")
    images = np.stack([item[0] for item in dataset])
    labels = [item[1] for item in dataset]
    scores = np.concatenate(
        [np.atleast_1d(reconstruction_error(model, images[i : i + chunk])) for i in range(0, len(images), chunk)]
    )
    return ScoreSet(scores, labels, provenance)


def _require_both(scores):
    if len(scores) == 0:
        raise MetricError("empty ScoreSet")
    imp = scores.is_imposter
    if imp.all() or not imp.any():
        raise MetricError("ScoreSet needs at least one client and one imposter")


def sweep_thresholds(scores):
    """-inf, midpoints between consecutive distinct scores, +inf."""
    u = np.unique(scores.scores)
    mids = (u[:-1] + u[1:]) / 2.0
    # adjacent doubles can round the midpoint down onto the lower score
    mids = np.where(mids > u[:-1], mids, u[1:])
    return np.concatenate(([-np.inf], mids, [np.inf]))


def _rates(scores, thresholds):
    """(fpr, fnr) arrays for each threshold, counted by binary search."""
    cli = np.sort(scores.client_scores())
    imp = np.sort(scores.imposter_scores())
    # count of values strictly below each threshold
    cli_acc = np.searchsorted(cli, thresholds, side="left")
    imp_acc = np.searchsorted(imp, thresholds, side="left")
    fpr = imp_acc / len(imp) if len(imp) else np.zeros(len(thresholds))
    fnr = (len(cli) - cli_acc) / len(cli) if len(cli) else np.zeros(len(thresholds))
    return fpr, fnr


def roc_curve(scores):
    _require_both(scores)
    thr = sweep_thresholds(scores)
    fpr, fnr = _rates(scores, thr)
    points = [OperatingPoint(float(t), float(a), float(b)) for t, a, b in zip(thr, fpr, fnr)]
    # sweep runs from (x, y) = (1, 1) at -inf down to (0, 0) at +inf
    x, y = fnr[::-1], (1.0 - fpr)[::-1]
    auc = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1])) / 2.0)
    return RocCurve(points, auc, scores.provenance)


def auc(scores):
    return roc_curve(scores).auc


def eer_threshold(scores, provenance="EER on validation"):
    """Threshold where FPR and FNR are closest, and the EER there.

    Ties on |FPR - FNR| go to the smaller HTER, then the smaller threshold.
    Infinite sweep ends are replaced by equivalent finite thresholds.
    """
    _require_both(scores)
    thr = sweep_thresholds(scores)
    fpr, fnr = _rates(scores, thr)
    gap = np.abs(fpr - fnr)
    hter = (fpr + fnr) / 2.0
    best = np.lexsort((thr, hter, gap))[0]
    t = thr[best]
    if t == -np.inf:
        t = max(float(scores.scores.min()), 0.0)
    elif t == np.inf:
        t = float(np.nextafter(scores.scores.max(), np.inf))
    return Threshold(float(t), provenance), float(hter[best])


def hter_at(scores, threshold):
    """Operating point of ``scores`` at a fixed (possibly transferred) threshold."""
    if len(scores) == 0:
        raise MetricError("empty ScoreSet")
    value = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    fpr, fnr = _rates(scores, np.array([value]))
    return OperatingPoint(value, float(fpr[0]), float(fnr[0]))


def min_hter(scores):
    """Best achievable operating point on ``scores`` (oracle threshold)."""
    _require_both(scores)
    thr = sweep_thresholds(scores)
    fpr, fnr = _rates(scores, thr)
    i = int(np.argmin((fpr + fnr) / 2.0))
    return OperatingPoint(float(thr[i]), float(fpr[i]), float(fnr[i]))


def roc_svg(curves, path=None, size=360, title=""):
    """Minimal SVG plot of one or more ROC curves.

    ``curves`` maps a legend label to a ``RocCurve``.
    """
    pad = 40
    span = size - 2 * pad
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad + span}" x2="{pad + span}" y2="{pad}" stroke="#bbb" stroke-dasharray="4 4"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">client rejection rate</text>',
        f'<text x="12" y="{size / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 12 {size / 2})">imposter detection rate</text>',
    ]
    if title:
        out.append(f'<text x="{size / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>')
    for k, (name, roc) in enumerate(curves.items()):
        pts = " ".join(
            f"{pad + p.fnr * span:.2f},{pad + (1 - p.tpr) * span:.2f}" for p in reversed(roc.points)
        )
        color = colors[k % len(colors)]
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(
            f'<text x="{pad + span - 4}" y="{pad + span - 8 - 14 * k}" text-anchor="end" '
            f'font-size="11" fill="{color}">{name} (AUC {roc.auc:.3f})</text>'
        )
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
