"""Latency/accuracy Pareto search over shrinking network transforms.

The search starts from a base network and repeatedly expands the most
accurate feasible (time below threshold) member of the current front:
each expansion trains and times the candidates produced by the regular
transforms (shrink input, non-overlapping pools, remove a layer, scale
filters). When a candidate loses accuracy against its parent, the two
remedies are tried on it in order: PReLU in the first activation, then
extended fire modules. Budget left over once every front member has been
expanded goes to dominated candidates.
"""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError
from .netgraph import (CONV_KINDS, Model, NetworkSpec, count_params, estimate_macs,
                       format_netspec, with_layers)
from .training import Dataset, TrainConfig, evaluate, train

TIME_BAND = 0.05
REGULAR = ("shrink", "pool", "remove", "scale")
REMEDIES = ("prelu", "extend")


# -- timing ------------------------------------------------------------------

@dataclass(frozen=True)
class Timing:
    median_ms: float
    spread: float  # max / min over the measured reps
    samples: tuple[float, ...]


def summarize(durations_ms: Sequence[float]) -> Timing:
    d = [float(v) for v in durations_ms]
    low = min(d)
    return Timing(statistics.median(d), max(d) / low if low > 0 else math.inf, tuple(d))


def measure_time(net: NetworkSpec | Model, params=None, reps: int = 20, warmup: int = 2,
                 binary: bool = True, clock: Callable[[], float] = time.perf_counter,
                 x: np.ndarray | None = None) -> Timing:
    """Median single-image forward time in milliseconds after ``warmup`` runs."""
    if reps < 5:
        raise ValueError("need at least 5 timing reps")
    model = net if isinstance(net, Model) else Model(net, params, binary=binary)
    if x is None:
        x = np.random.default_rng(0).random(model.spec.input_shape, dtype=np.float32)
    for _ in range(warmup):
        model.forward(x)
    samples = []
    for _ in range(reps):
        t0 = clock()
        model.forward(x)
        samples.append((clock() - t0) * 1e3)
    # a coarse clock can report 0 for very small nets
    samples = [max(s, 1e-6) for s in samples]
    return summarize(samples)


# -- Pareto order ------------------------------------------------------------

@dataclass
class ParetoPoint:
    spec: NetworkSpec
    time_ms: float
    accuracy: float
    lineage: tuple = ()
    id: int = 0
    parent_id: int | None = None

    def __post_init__(self):
        if not self.time_ms > 0:
            raise ValueError("time_ms must be positive")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")

    @property
    def name(self) -> str:
        return f"cand{self.id:03d}"


def time_bucket(t_ms: float, band: float = TIME_BAND) -> int:
    """Log-spaced bucket; times in one bucket differ by less than ``band``."""
    return math.floor(math.log(t_ms) / math.log1p(band))


def dominates(p: ParetoPoint, q: ParetoPoint, band: float = TIME_BAND) -> bool:
    """p is no slower and no less accurate than q, and strictly better in one.

    Times are compared by bucket, so measurement noise under ``band``
    never makes one point strictly faster than another. Bucketing (rather
    than a sliding band) keeps the relation transitive.
    """
    bp, bq = time_bucket(p.time_ms, band), time_bucket(q.time_ms, band)
    if bp > bq or p.accuracy < q.accuracy:
        return False
    return bp < bq or p.accuracy > q.accuracy


def pareto_front(points: Sequence[ParetoPoint], band: float = TIME_BAND) -> list[ParetoPoint]:
    return [p for p in points if not any(dominates(q, p, band) for q in points if q is not p)]


# -- transforms ----------------------------------------------------------------

@dataclass(frozen=True)
class Transform:
    name: str
    layer: int | None = None

    def __str__(self) -> str:
        return self.name if self.layer is None else f"{self.name}@{self.layer}"


@dataclass
class SearchConfig:
    threshold_ms: float = 2.0
    budget: int = 20
    train: TrainConfig = field(default_factory=TrainConfig)
    reps: int = 20
    seed: int = 0
    scale_factor: float = 0.75
    shrink_step: int = 4
    min_side: int = 16
    min_filters: int = 1
    accuracy_drop: float = 0.005
    val_fraction: float = 0.2
    band: float = TIME_BAND
    transforms: tuple[str, ...] = REGULAR + REMEDIES

    def __post_init__(self):
        if self.threshold_ms <= 0 or self.budget < 1:
            raise ValueError("need threshold_ms > 0 and budget >= 1")


def _param_layers(net: NetworkSpec) -> list[int]:
    return [i for i, layer in enumerate(net.layers) if layer.kind in CONV_KINDS + ("fc",)]


def _scaled(n: int, factor: float) -> int:
    return math.ceil(n * factor - 1e-9)


def apply_transform(net: NetworkSpec, t: Transform, cfg: SearchConfig | None = None) -> NetworkSpec | None:
    """Apply one transform; ``None`` when it does not apply or breaks shapes."""
    cfg = cfg or SearchConfig()
    layers = list(net.layers)
    input_shape = net.input_shape
    i = t.layer
    if t.name == "remove":
        params = _param_layers(net)
        conv = [j for j in params if net.layers[j].kind in CONV_KINDS]
        if i not in params or i == params[-1] or (conv and i == conv[0]):
            return None
        drop = [i]
        if i + 1 < len(layers) and layers[i + 1].kind in ("relu", "prelu"):
            drop.append(i + 1)
        layers = [layer for j, layer in enumerate(layers) if j not in drop]
    elif t.name == "scale":
        layer = layers[i]
        f = cfg.scale_factor
        if layer.kind == "conv":
            new = replace(layer, out=_scaled(layer.out, f))
            sizes = [new.out]
        elif layer.kind in ("fire", "extended_fire"):
            new = replace(layer, s=_scaled(layer.s, f), e1=_scaled(layer.e1, f), e3=_scaled(layer.e3, f),
                          e5=_scaled(layer.e5, f) if layer.e5 else 0)
            sizes = [new.s, new.e1, new.e3] + ([new.e5] if new.e5 else [])
        else:
            return None
        if new == layer or min(sizes) < cfg.min_filters:
            return None
        layers[i] = new
    elif t.name == "prelu":
        if layers[i].kind != "relu":
            return None
        layers[i] = replace(layers[i], kind="prelu")
    elif t.name == "extend":
        layer = layers[i]
        if layer.kind != "fire":
            return None
        layers[i] = replace(layer, kind="extended_fire", e5=layer.e3)
    elif t.name == "pool":
        if all(layer.stride == layer.k for layer in layers if layer.kind == "maxpool"):
            return None
        layers = [replace(layer, stride=layer.k) if layer.kind == "maxpool" else layer
                  for layer in layers]
    elif t.name == "shrink":
        c, h, w = input_shape
        nh, nw = max(h - cfg.shrink_step, cfg.min_side), max(w - cfg.shrink_step, cfg.min_side)
        if (nh, nw) == (h, w):
            return None
        input_shape = (c, nh, nw)
    else:
        raise ValueError(f"unknown transform {t.name!r}")
    try:
        return with_layers(net, layers, input_shape)
    except ShapeError:
        return None


def transforms(net: NetworkSpec, cfg: SearchConfig | None = None,
               names: Sequence[str] | None = None) -> list[tuple[Transform, NetworkSpec]]:
    """Every applicable candidate from the transform catalogue."""
    cfg = cfg or SearchConfig()
    names = cfg.transforms if names is None else names
    out = []
    for name in names:
        if name in ("pool", "shrink"):
            targets = [None]
        elif name == "prelu":
            relus = [i for i, layer in enumerate(net.layers) if layer.kind in ("relu", "prelu")]
            targets = relus[:1]
        else:
            targets = range(len(net.layers))
        for i in targets:
            t = Transform(name, i)
            spec = apply_transform(net, t, cfg)
            if spec is not None:
                out.append((t, spec))
    return out


def replay(base: NetworkSpec, lineage: Sequence[Transform], cfg: SearchConfig | None = None) -> NetworkSpec:
    spec = base
    for t in lineage:
        nxt = apply_transform(spec, t, cfg)
        if nxt is None:
            raise ValueError(f"transform {t} does not apply during replay")
        spec = nxt
    return spec


# -- evaluation and search -------------------------------------------------------

_worker_data: dict = {}


def _worker_init(train_set, val_set, train_cfg):
    _worker_data.update(train=train_set, val=val_set, cfg=train_cfg)


def _worker_fit(text: str):
    from .netgraph import parse_netspec
    spec = parse_netspec(text)
    return _fit(spec, _worker_data["train"], _worker_data["val"], _worker_data["cfg"])


def _fit(spec: NetworkSpec, train_set: Dataset, val_set: Dataset, train_cfg: TrainConfig):
    if train_set.shape != spec.input_shape:
        train_set = resize_dataset(train_set, spec.input_shape)
        val_set = resize_dataset(val_set, spec.input_shape)
    params, _ = train(spec, train_set, train_cfg)
    acc, _ = evaluate(spec, params, val_set)
    return params, acc


class TrainAndTime:
    """Trains a candidate on ``train_set``, scores it on ``val_set`` and times it.

    Results are cached by netspec text, so re-evaluating a spec (or sharing
    the evaluator between runs) returns identical numbers. With ``jobs > 1``
    :meth:`prefetch` trains several candidates in worker processes; timing
    always runs here, one candidate at a time.
    """

    def __init__(self, train_set: Dataset, val_set: Dataset, cfg: SearchConfig, jobs: int = 1):
        self.train_set, self.val_set, self.cfg = train_set, val_set, cfg
        self.jobs = max(1, int(jobs))
        self.cache: dict[str, tuple[float, float]] = {}
        self.params: dict[str, list] = {}
        self._fitted: dict[str, tuple[list, float]] = {}

    def prefetch(self, specs: Sequence[NetworkSpec]) -> None:
        todo = []
        for spec in specs:
            key = format_netspec(spec)
            if key not in self.cache and key not in self._fitted and key not in todo:
                todo.append(key)
        if self.jobs < 2 or len(todo) < 2:
            return
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(min(self.jobs, len(todo)), initializer=_worker_init,
                                 initargs=(self.train_set, self.val_set, self.cfg.train)) as pool:
            for key, result in zip(todo, pool.map(_worker_fit, todo)):
                self._fitted[key] = result

    def __call__(self, spec: NetworkSpec) -> tuple[float, float]:
        key = format_netspec(spec)
        if key not in self.cache:
            if key in self._fitted:
                params, acc = self._fitted.pop(key)
            else:
                params, acc = _fit(spec, self.train_set, self.val_set, self.cfg.train)
            timing = measure_time(spec, params, reps=self.cfg.reps)
            self.cache[key] = (timing.median_ms, acc)
            self.params[key] = params
        return self.cache[key]


def resize_dataset(ds: Dataset, shape: tuple[int, int, int]) -> Dataset:
    """Bilinear resize of every image to ``shape`` (used after input shrinking)."""
    c, h, w = shape
    n, c0, h0, w0 = ds.images.shape
    if c != c0:
        raise ShapeError(f"cannot change channel count {c0} -> {c}")

    def axis(n_in, n_out):
        src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        return lo, np.minimum(lo + 1, n_in - 1), (src - lo).astype(np.float32)

    ylo, yhi, fy = axis(h0, h)
    xlo, xhi, fx = axis(w0, w)
    img = ds.images
    rows = img[:, :, ylo] * (1 - fy)[:, None] + img[:, :, yhi] * fy[:, None]
    out = rows[..., xlo] * (1 - fx) + rows[..., xhi] * fx
    return Dataset(out.astype(np.float32), ds.labels.copy(), list(ds.class_names))


@dataclass
class LedgerRow:
    candidate_id: int
    parent_id: int | None
    transform: str
    params: int
    macs: int
    time_ms: float
    accuracy: float
    feasible: bool
    on_front: bool = False


@dataclass
class SearchResult:
    front: list[ParetoPoint]
    ledger: list[LedgerRow]
    points: list[ParetoPoint]


def search(base: NetworkSpec, dataset: Dataset | None, cfg: SearchConfig,
           evaluator: Callable[[NetworkSpec], tuple[float, float]] | None = None,
           val: Dataset | None = None, jobs: int = 1) -> SearchResult:
    """Greedy best-first Pareto search from ``base``.

    Open front members are expanded first; once none are left, leftover
    budget goes to dominated points in the same order.

    ``evaluator`` maps a spec to (time_ms, accuracy); by default each
    candidate is trained on a seeded split of ``dataset`` and timed, with
    up to ``jobs`` candidates training at once.
    """
    if evaluator is None:
        if val is None:
            dataset, val = dataset.split(cfg.val_fraction, cfg.seed)
        evaluator = TrainAndTime(dataset, val, cfg, jobs=jobs)

    points: list[ParetoPoint] = []
    seen: dict[str, ParetoPoint] = {}
    front: list[ParetoPoint] = []
    ledger: list[LedgerRow] = []
    expanded: set[int] = set()

    def evaluate_spec(spec, lineage, parent):
        key = format_netspec(spec)
        if key in seen or len(points) >= cfg.budget:
            return None
        time_ms, acc = evaluator(spec)
        p = ParetoPoint(spec, time_ms, acc, tuple(lineage), len(points),
                        None if parent is None else parent.id)
        points.append(p)
        seen[key] = p
        ledger.append(LedgerRow(p.id, p.parent_id, str(lineage[-1]) if lineage else "base",
                                count_params(spec), estimate_macs(spec), time_ms, acc,
                                time_ms <= cfg.threshold_ms))
        if not any(dominates(q, p, cfg.band) for q in front):
            front[:] = [q for q in front if not dominates(p, q, cfg.band)] + [p]
        return p

    def lost_accuracy(child, parent):
        return child.accuracy < parent.accuracy - cfg.accuracy_drop

    def remedy(child, parent):
        current = child
        if "prelu" in cfg.transforms:
            for t, spec in transforms(child.spec, cfg, ["prelu"]):
                tried = evaluate_spec(spec, child.lineage + (t,), child)
                if tried is not None:
                    if not lost_accuracy(tried, parent):
                        return
                    if tried.accuracy >= current.accuracy:
                        current = tried
        if "extend" in cfg.transforms:
            options = transforms(current.spec, cfg, ["extend"])
            if options:
                t, spec = options[0]
                evaluate_spec(spec, current.lineage + (t,), current)

    evaluate_spec(base, (), None)
    regular = [n for n in cfg.transforms if n in REGULAR]
    while len(points) < cfg.budget:
        open_ = [p for p in front if p.id not in expanded]
        if not open_:
            # front exhausted: keep spending budget on dominated points, since a
            # noisy timing can hide a front member behind a dominated parent
            open_ = [p for p in points if p.id not in expanded]
            if not open_:
                break
        feasible = [p for p in open_ if p.time_ms <= cfg.threshold_ms]
        if feasible:
            parent = max(feasible, key=lambda p: (p.accuracy, -p.time_ms, -p.id))
        else:
            parent = min(open_, key=lambda p: (p.time_ms, p.id))
        expanded.add(parent.id)
        children = transforms(parent.spec, cfg, regular)
        if hasattr(evaluator, "prefetch"):
            fresh = [spec for _, spec in children if format_netspec(spec) not in seen]
            evaluator.prefetch(fresh[:cfg.budget - len(points)])
        for t, spec in children:
            child = evaluate_spec(spec, parent.lineage + (t,), parent)
            if child is not None and lost_accuracy(child, parent):
                remedy(child, parent)
            if len(points) >= cfg.budget:
                break

    final = sorted((p for p in front if p.time_ms <= cfg.threshold_ms), key=lambda p: p.time_ms)
    on_front = {p.id for p in final}
    for row in ledger:
        row.on_front = row.candidate_id in on_front
    return SearchResult(final, ledger, points)


def write_ledger(rows: Sequence[LedgerRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate_id", "parent_id", "transform", "params", "macs",
                    "time_ms", "accuracy", "feasible", "on_front"])
        for r in rows:
            w.writerow([r.candidate_id, "" if r.parent_id is None else r.parent_id, r.transform,
                        r.params, r.macs, f"{r.time_ms:.6f}", f"{r.accuracy:.6f}",
                        int(r.feasible), int(r.on_front)])


def write_front(front: Sequence[ParetoPoint], outdir) -> None:
    """``front.csv`` (name, time ms, accuracy %) plus one netspec per member."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "front.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "time_ms", "accuracy_pct"])
        for p in front:
            w.writerow([p.name, f"{p.time_ms:.6f}", f"{100 * p.accuracy:.2f}"])
            lineage = " ".join(str(t) for t in p.lineage) or "base"
            (outdir / f"{p.name}.net").write_text(f"# lineage: {lineage}\n" + format_netspec(p.spec))
