"""Synthetic green-field scenes and disk-vs-square crop datasets.

Squares stand in for robots (the positive class), disks for distractors.
Dataset images are produced by running the real proposal stage on a
single-object scene and resizing the proposal crop, so the classifier
sees exactly what the detector will feed it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detect import Proposal, ProposalConfig, crop_resize, scan_proposals
from .training import Dataset

CLASS_NAMES = ["disk", "square"]
SQUARE = 1
DISK = 0

# non-green object colours (RGB)
PALETTE = np.array([
    [235, 235, 235], [200, 200, 210], [120, 120, 130], [40, 40, 45],
    [210, 60, 50], [60, 80, 210], [230, 200, 60], [150, 90, 160],
], dtype=np.float64)


def green_background(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Grass-like texture: mowing stripes, low-frequency shading, pixel noise.

    Every pixel stays well inside the default green rule.
    """
    base = np.array([55.0, 145.0, 50.0]) + rng.uniform(-10, 10, size=3)
    yy, xx = np.mgrid[0:h, 0:w]
    period = rng.uniform(12, 30)
    stripes = 1.0 + 0.08 * np.sign(np.sin(2 * np.pi * (xx + rng.uniform(0, period)) / period))
    shade = 1.0 + 0.1 * np.sin(2 * np.pi * (yy / rng.uniform(40, 90) + rng.uniform()))
    img = base[None, None, :] * (stripes * shade)[..., None]
    img += rng.normal(0, 5, size=(h, w, 3))
    img[..., 1] = np.maximum(img[..., 1], np.maximum(img[..., 0], img[..., 2]) + 25)
    return np.clip(img, 0, 255)


def draw_object(img: np.ndarray, kind: int, cx: float, cy: float, size: float,
                rng: np.random.Generator) -> Proposal:
    """Paint a disk or square of edge/diameter ``size``; returns its true box."""
    h, w = img.shape[:2]
    color = PALETTE[rng.integers(len(PALETTE))] + rng.uniform(-15, 15, size=3)
    # jitter must not tip a colour into green dominance
    color[1] = min(color[1], max(color[0], color[2]))
    yy, xx = np.mgrid[0:h, 0:w]
    half = size / 2
    if kind == SQUARE:
        inside = (np.abs(xx + 0.5 - cx) <= half) & (np.abs(yy + 0.5 - cy) <= half)
    else:
        inside = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= half ** 2
    shading = rng.normal(0, 6, size=(h, w, 1))
    img[inside] = np.clip(color[None, :] + shading[inside], 0, 255)
    ys, xs = np.nonzero(inside)
    return Proposal(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


@dataclass
class Scene:
    image: np.ndarray  # uint8 [H, W, 3]
    boxes: list[Proposal]
    labels: list[int]

    def targets(self, label: int = SQUARE) -> list[Proposal]:
        return [b for b, lab in zip(self.boxes, self.labels) if lab == label]


def _separated(a: Proposal, b: Proposal, gap_x: int, gap_y: int) -> bool:
    return (a.x1 + gap_x < b.x0 or b.x1 + gap_x < a.x0
            or a.y1 + gap_y < b.y0 or b.y1 + gap_y < a.y0)


def make_scene(rng: np.random.Generator, width: int = 160, height: int = 120,
               n_squares: tuple[int, int] = (1, 2), n_disks: tuple[int, int] = (0, 2),
               size_range: tuple[float, float] = (14, 36),
               cfg: ProposalConfig | None = None) -> Scene:
    """A field with planted squares and disks that never touch each other."""
    cfg = cfg or ProposalConfig()
    img = green_background(height, width, rng)
    kinds = [SQUARE] * int(rng.integers(n_squares[0], n_squares[1] + 1))
    kinds += [DISK] * int(rng.integers(n_disks[0], n_disks[1] + 1))
    rng.shuffle(kinds)
    boxes, labels = [], []
    for kind in kinds:
        for _ in range(100):
            size = rng.uniform(*size_range)
            cx = rng.uniform(size / 2 + 2, width - size / 2 - 2)
            cy = rng.uniform(size / 2 + 2, height - size / 2 - 2)
            guess = Proposal(int(cx - size / 2) - 1, int(cy - size / 2) - 1,
                             int(cx + size / 2) + 1, int(cy + size / 2) + 1)
            if all(_separated(guess, b, 2 * cfg.spacing, 2 * cfg.margin_px + 2) for b in boxes):
                boxes.append(draw_object(img, kind, cx, cy, size, rng))
                labels.append(kind)
                break
    return Scene(np.rint(img).astype(np.uint8), boxes, labels)


def make_crop_dataset(n: int, seed: int = 0, side: int = 24,
                      size_range: tuple[float, float] = (14, 36),
                      cfg: ProposalConfig | None = None) -> Dataset:
    """``n`` balanced disk/square crops taken from proposals on single-object scenes."""
    cfg = cfg or ProposalConfig()
    rng = np.random.default_rng(seed)
    images, labels = [], []
    canvas = int(size_range[1]) + 4 * cfg.spacing
    for i in range(n):
        kind = i % 2
        scene = make_scene(rng, canvas, canvas, n_squares=(kind, kind), n_disks=(1 - kind, 1 - kind),
                           size_range=size_range, cfg=cfg)
        truth = scene.boxes[0]
        props = scan_proposals(scene.image, cfg)
        box = max(props, key=truth.iou) if props else truth
        images.append(crop_resize(scene.image, box, side))
        labels.append(kind)
    order = rng.permutation(n)
    return Dataset(np.stack(images)[order], np.array(labels)[order], list(CLASS_NAMES))
