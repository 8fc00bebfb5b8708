"""Scanline region proposals and the proposal -> classifier detector.

Images are uint8 arrays of shape [H, W, 3] (RGB). Proposals come from
vertical scanlines: runs of non-green pixels on each scanline become
spots, spots on neighbouring scanlines with overlapping rows are merged,
and each merged group yields one box. Each box crop is resized and
handed to a classifier.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FormatError, ShapeError
from .pnm import read_pnm
from .tensor import DTYPE


@dataclass
class ProposalConfig:
    spacing: int = 8
    min_run: int = 4
    margin_px: int = 2
    min_box: int = 8
    green_margin: int = 10
    min_brightness: int = 30
    # grow boxes past the scanlines to the blob's real extent
    refine: bool = True


@dataclass(frozen=True)
class Proposal:
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def intersection(self, other: "Proposal") -> int:
        w = min(self.x1, other.x1) - max(self.x0, other.x0) + 1
        h = min(self.y1, other.y1) - max(self.y0, other.y0) + 1
        return max(w, 0) * max(h, 0)

    def iou(self, other: "Proposal") -> float:
        inter = self.intersection(other)
        return inter / (self.area + other.area - inter)


@dataclass(frozen=True)
class Detection:
    proposal: Proposal
    label: int
    confidence: float


@dataclass(frozen=True)
class TimingModel:
    t_prop_ms: float
    t_inf_ms: float
    avg_proposals: float


def total_time(m: TimingModel) -> float:
    """Expected per-frame time: proposal stage plus one inference per proposal."""
    return m.t_prop_ms + m.avg_proposals * m.t_inf_ms


def is_green(rgb, margin: int = 10, min_brightness: int = 30) -> bool:
    r, g, b = (int(v) for v in rgb)
    return g > r + margin and g > b + margin and g > min_brightness


def green_mask(img: np.ndarray, margin: int = 10, min_brightness: int = 30) -> np.ndarray:
    px = np.asarray(img, dtype=np.int16)
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    return (g > r + margin) & (g > b + margin) & (g > min_brightness)


def _runs(col: np.ndarray, min_run: int) -> list[tuple[int, int]]:
    """Maximal True runs longer than ``min_run`` as inclusive (start, end)."""
    padded = np.concatenate(([False], col, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(s, e - 1) for s, e in zip(edges[::2], edges[1::2]) if e - s > min_run]


def _grow(nongreen: np.ndarray, box: list[int], limit: int) -> list[int]:
    """Push each side outward while the adjacent line holds >= 2 non-green pixels."""
    h, w = nongreen.shape
    x0, y0, x1, y1 = box
    for _ in range(limit):
        grew = False
        if x0 > 0 and nongreen[y0:y1 + 1, x0 - 1].sum() >= 2:
            x0 -= 1
            grew = True
        if x1 < w - 1 and nongreen[y0:y1 + 1, x1 + 1].sum() >= 2:
            x1 += 1
            grew = True
        if y0 > 0 and nongreen[y0 - 1, x0:x1 + 1].sum() >= 2:
            y0 -= 1
            grew = True
        if y1 < h - 1 and nongreen[y1 + 1, x0:x1 + 1].sum() >= 2:
            y1 += 1
            grew = True
        if not grew:
            break
    return [x0, y0, x1, y1]


def scan_proposals(img: np.ndarray, cfg: ProposalConfig | None = None) -> list[Proposal]:
    cfg = cfg or ProposalConfig()
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[1] < 1:
        raise ShapeError(f"expected an [H, W, 3] image, got {img.shape}")
    h, w = img.shape[:2]
    nongreen = ~green_mask(img, cfg.green_margin, cfg.min_brightness)
    columns = list(range(0, w, cfg.spacing))
    spots = []  # (scanline index, x, y0, y1)
    for li, x in enumerate(columns):
        spots.extend((li, x, s, e) for s, e in _runs(nongreen[:, x], cfg.min_run))

    parent = list(range(len(spots)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    by_line: dict[int, list[int]] = {}
    for i, spot in enumerate(spots):
        by_line.setdefault(spot[0], []).append(i)
    for i, (li, _, s, e) in enumerate(spots):
        for j in by_line.get(li + 1, ()):
            _, _, s2, e2 = spots[j]
            if s <= e2 and s2 <= e:
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(len(spots)):
        groups.setdefault(find(i), []).append(i)

    proposals = []
    for members in groups.values():
        box = [min(spots[i][1] for i in members), min(spots[i][2] for i in members),
               max(spots[i][1] for i in members), max(spots[i][3] for i in members)]
        if cfg.refine:
            box = _grow(nongreen, box, max(cfg.spacing - 1, 1))
        x0, y0, x1, y1 = (int(v) for v in box)
        m = cfg.margin_px
        p = Proposal(max(x0 - m, 0), max(y0 - m, 0), min(x1 + m, w - 1), min(y1 + m, h - 1))
        if p.width >= cfg.min_box and p.height >= cfg.min_box:
            proposals.append(p)
    proposals.sort(key=lambda p: (p.y0, p.x0))
    return proposals


def crop_resize(img: np.ndarray, p: Proposal, side: int = 24) -> np.ndarray:
    """Bilinear resample of the box to [3, side, side] with values in [0, 1].

    Pixel centres are aligned (half-pixel convention) and samples are
    clamped at the crop edges.
    """
    crop = np.asarray(img[p.y0:p.y1 + 1, p.x0:p.x1 + 1], dtype=np.float64)
    ch, cw = crop.shape[:2]

    def axis(n_in):
        src = (np.arange(side) + 0.5) * (n_in / side) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y_lo, y_hi, fy = axis(ch)
    x_lo, x_hi, fx = axis(cw)
    top = crop[y_lo][:, x_lo] * (1 - fx)[None, :, None] + crop[y_lo][:, x_hi] * fx[None, :, None]
    bot = crop[y_hi][:, x_lo] * (1 - fx)[None, :, None] + crop[y_hi][:, x_hi] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return (out / 255.0).transpose(2, 0, 1).astype(DTYPE)


@dataclass
class DetectConfig:
    proposals: ProposalConfig = field(default_factory=ProposalConfig)
    side: int = 24
    positive_label: int = 1
    threshold: float = 0.5


@dataclass
class DetectTiming:
    t_prop_ms: float
    mean_t_inf_ms: float
    n_proposals: int
    total_ms: float

    def as_dict(self) -> dict:
        return {"t_prop_ms": self.t_prop_ms, "mean_t_inf_ms": self.mean_t_inf_ms,
                "n_proposals": self.n_proposals, "total_ms": self.total_ms}


def detect(img: np.ndarray, classifier, cfg: DetectConfig | None = None):
    """Propose, crop, classify. Returns (detections, timing).

    ``classifier`` is a :class:`~bitconv.netgraph.Model` or any callable
    mapping a [3, side, side] crop to class probabilities.
    """
    cfg = cfg or DetectConfig()
    spec = getattr(classifier, "spec", None)
    if spec is not None and tuple(spec.input_shape) != (3, cfg.side, cfg.side):
        raise ShapeError(f"classifier expects {spec.input_shape}, crops are (3, {cfg.side}, {cfg.side})")
    classify: Callable = classifier.forward if hasattr(classifier, "forward") else classifier

    t_start = time.perf_counter()
    proposals = scan_proposals(img, cfg.proposals)
    t_prop = time.perf_counter() - t_start
    detections, t_inf = [], []
    for p in proposals:
        crop = crop_resize(img, p, cfg.side)
        t0 = time.perf_counter()
        probs = np.asarray(classify(crop)).reshape(-1)
        t_inf.append(time.perf_counter() - t0)
        conf = float(probs[cfg.positive_label])
        if conf >= cfg.threshold:
            detections.append(Detection(p, cfg.positive_label, conf))
    total = time.perf_counter() - t_start
    timing = DetectTiming(t_prop * 1e3, float(np.mean(t_inf)) * 1e3 if t_inf else 0.0,
                          len(proposals), total * 1e3)
    return detections, timing


def load_image(path) -> np.ndarray:
    img = read_pnm(path)
    if img.ndim != 3:
        raise FormatError(f"{path}: detection needs a color (P6) image")
    return img


def match_detections(detections, targets, iou: float = 0.3) -> tuple[int, int]:
    """Greedy one-to-one matching; returns (matched targets, false positives)."""
    free = list(targets)
    matched = 0
    for d in sorted(detections, key=lambda d: -d.confidence):
        best = max(free, key=lambda t: d.proposal.iou(t), default=None)
        if best is not None and d.proposal.iou(best) >= iou:
            free.remove(best)
            matched += 1
    return matched, len(detections) - matched
