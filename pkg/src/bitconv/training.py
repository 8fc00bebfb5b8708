"""Full-precision training: backprop, SGD with momentum, datasets.

Training always runs the float path, even for layers flagged binary;
binarization is applied afterwards, at inference time. The forward pass
here is batched (leading N axis) and must agree with
:meth:`bitconv.netgraph.Model.forward` with ``binary=False``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, FormatError, ShapeError
from .kernels import col2im_batch, im2col_batch, out_size
from .netgraph import Model, NetworkSpec, _fire_branches, check_params, init_params
from .pnm import read_pnm
from .tensor import DTYPE


# -- datasets ------------------------------------------------------------

@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    class_names: list[str]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise DatasetError("images must be [N,C,H,W] with one label each")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DatasetError("label outside the class list")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i):
        return self.images[i], int(self.labels[i])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], list(self.class_names))

    def split(self, val_fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Seeded, per-class stratified train/validation split."""
        rng = np.random.default_rng(seed)
        train_idx, val_idx = [], []
        for c in range(len(self.class_names)):
            idx = rng.permutation(np.flatnonzero(self.labels == c))
            n_val = int(round(len(idx) * val_fraction))
            val_idx.extend(idx[:n_val])
            train_idx.extend(idx[n_val:])
        return self.subset(np.sort(train_idx)), self.subset(np.sort(val_idx))


def load_dataset(root) -> Dataset:
    """Read ``root/<class>/*.pgm|*.ppm``; classes ordered by directory name."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"{root}: no class subdirectories")
    images, labels, shape = [], [], None
    for label, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.is_file())
        if not files:
            raise DatasetError(f"{d}: empty class directory")
        for f in files:
            try:
                pix = read_pnm(f)
            except (OSError, FormatError) as exc:
                raise DatasetError(f"unreadable image {f}: {exc}") from None
            img = pix[None] if pix.ndim == 2 else pix.transpose(2, 0, 1)
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise DatasetError(f"{f}: mixed shapes, {img.shape} vs {shape}")
            images.append(img.astype(DTYPE) / DTYPE(255))
            labels.append(label)
    return Dataset(np.stack(images), np.array(labels), [d.name for d in class_dirs])


def save_dataset(ds: Dataset, root) -> None:
    from .pnm import write_pnm

    root = Path(root)
    for name in ds.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    for i, (img, label) in enumerate(zip(ds.images, ds.labels)):
        pix = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
        pix = pix[0] if pix.shape[0] == 1 else pix.transpose(1, 2, 0)
        ext = "pgm" if pix.ndim == 2 else "ppm"
        write_pnm(root / ds.class_names[label] / f"{i:05d}.{ext}", pix)


# -- batched layer kernels ------------------------------------------------

def _conv_fwd(x, w, b, stride, pad):
    k = w.shape[2]
    n, _, h, wd = x.shape
    ho, wo = out_size(h, k, stride, pad), out_size(wd, k, stride, pad)
    cols = im2col_batch(x, k, stride, pad)
    out = np.matmul(w.reshape(w.shape[0], -1), cols) + b[None, :, None]
    return out.reshape(n, w.shape[0], ho, wo), (cols, x.shape, stride, pad)


def _conv_bwd(dout, cache, w):
    cols, shape, stride, pad = cache
    n, o = dout.shape[:2]
    d2 = dout.reshape(n, o, -1)
    dw = np.einsum("nop,nkp->ok", d2, cols).reshape(w.shape)
    db = d2.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(o, -1).T, d2)
    dx = col2im_batch(dcols, shape, w.shape[2], stride, pad)
    return dx, dw, db


def _pool_fwd(x, k, stride):
    n, c, h, w = x.shape
    ho, wo = out_size(h, k, stride, 0), out_size(w, k, stride, 0)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo].reshape(n, c, ho, wo, k * k)
    arg = win.argmax(axis=4)  # first maximum in row-major window order
    out = np.take_along_axis(win, arg[..., None], axis=4)[..., 0]
    return out, (arg, x.shape, k, stride)


def _pool_bwd(dout, cache):
    arg, shape, k, stride = cache
    n, c, ho, wo = arg.shape
    dx = np.zeros(shape, dtype=dout.dtype)
    ni, ci, oy, ox = np.indices(arg.shape)
    iy = oy * stride + arg // k
    ix = ox * stride + arg % k
    np.add.at(dx, (ni, ci, iy, ix), dout)
    return dx


def _fire_fwd(x, layer, group):
    sq, sq_cache = _conv_fwd(x, group[0], group[1], 1, 0)
    sq_act = np.maximum(sq, 0)
    outs, caches = [], []
    for j, (e, k) in enumerate(_fire_branches(layer)):
        y, cache = _conv_fwd(sq_act, group[2 + 2 * j], group[3 + 2 * j], 1, k // 2)
        outs.append(np.maximum(y, 0))
        caches.append(cache)
    out = np.concatenate(outs, axis=1)
    return out, (sq_cache, sq, caches, outs)


def _fire_bwd(dout, cache, layer, group):
    sq_cache, sq, caches, outs = cache
    grads = [None, None]
    d_sq_act = 0
    start = 0
    for j, (e, k) in enumerate(_fire_branches(layer)):
        d = dout[:, start:start + e] * (outs[j] > 0)
        start += e
        dx_j, dw, db = _conv_bwd(d, caches[j], group[2 + 2 * j])
        d_sq_act = d_sq_act + dx_j
        grads += [dw, db]
    d_sq = d_sq_act * (sq > 0)
    dx, grads[0], grads[1] = _conv_bwd(d_sq, sq_cache, group[0])
    return dx, grads


def forward_batch(net: NetworkSpec, params, x: np.ndarray, keep: bool = False):
    """Float forward of a batch; returns final output and, if ``keep``, caches."""
    caches = []
    for layer, group in zip(net.layers, params):
        kind = layer.kind
        cache = None
        if kind == "conv":
            x, cache = _conv_fwd(x, group[0], group[1], layer.stride, layer.pad)
        elif kind in ("fire", "extended_fire"):
            x, cache = _fire_fwd(x, layer, group)
        elif kind == "maxpool":
            x, cache = _pool_fwd(x, layer.k, layer.stride)
        elif kind == "relu":
            cache = x
            x = np.maximum(x, 0)
        elif kind == "prelu":
            cache = x
            x = np.where(x > 0, x, group[0][None, :, None, None] * x)
        elif kind == "fc":
            cache = x.shape, x.reshape(len(x), -1)
            x = (cache[1] @ group[0].T + group[1]).reshape(len(x), -1, 1, 1)
        elif kind == "softmax":
            z = x.reshape(len(x), -1)
            e = np.exp(z - z.max(axis=1, keepdims=True))
            x = (e / e.sum(axis=1, keepdims=True)).reshape(x.shape)
        x = x.astype(DTYPE, copy=False)
        if keep:
            caches.append(cache)
    return (x, caches) if keep else x


def loss_and_grads(net: NetworkSpec, params, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradients."""
    loss, grads, _ = _loss_grads_probs(net, params, x, labels)
    return loss, grads


def _loss_grads_probs(net, params, x, labels):
    if not net.layers or net.layers[-1].kind != "softmax":
        raise ShapeError("training needs a network ending in softmax")
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[1:] != net.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} != declared {net.input_shape}")
    labels = np.asarray(labels).reshape(-1)
    n = len(x)
    probs, caches = forward_batch(net, params, x, keep=True)
    p = probs.reshape(n, -1).astype(np.float64)
    loss = float(-np.mean(np.log(np.maximum(p[np.arange(n), labels], 1e-30))))
    d = p.copy()
    d[np.arange(n), labels] -= 1.0
    dout = (d / n).astype(DTYPE).reshape(probs.shape)
    grads: list[list[np.ndarray]] = [None] * len(net.layers)
    # softmax and cross-entropy are differentiated jointly above
    grads[-1] = []
    for i in range(len(net.layers) - 2, -1, -1):
        layer, group, cache = net.layers[i], params[i], caches[i]
        kind = layer.kind
        if kind == "conv":
            dout, dw, db = _conv_bwd(dout, cache, group[0])
            grads[i] = [dw, db]
        elif kind in ("fire", "extended_fire"):
            dout, grads[i] = _fire_bwd(dout, cache, layer, group)
        elif kind == "maxpool":
            dout = _pool_bwd(dout, cache)
            grads[i] = []
        elif kind == "relu":
            dout = dout * (cache > 0)
            grads[i] = []
        elif kind == "prelu":
            a = group[0][None, :, None, None]
            da = (dout * np.where(cache > 0, 0, cache)).sum(axis=(0, 2, 3))
            dout = dout * np.where(cache > 0, 1, a)
            grads[i] = [da.astype(DTYPE)]
        elif kind == "fc":
            shape, flat = cache
            d2 = dout.reshape(n, -1)
            grads[i] = [d2.T @ flat, d2.sum(axis=0)]
            dout = (d2 @ group[0]).reshape(shape)
        elif kind == "softmax":
            raise ShapeError("softmax is only supported as the final layer in training")
        dout = dout.astype(DTYPE, copy=False)
    grads = [[np.asarray(g, dtype=DTYPE) for g in gs] for gs in grads]
    return loss, grads, p


def backward(net: NetworkSpec, params, x: np.ndarray, label: int):
    """Gradients and loss -log p[label] for a single [C,H,W] image."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 3:
        x = x[None]
    loss, grads = loss_and_grads(net, params, x, np.array([label]))
    return grads, loss


# -- optimisation -----------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 0.02
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("need lr >= 0, epochs >= 1, batch_size >= 1")


def sgd_step(params, grads, velocity, cfg: TrainConfig):
    """v <- momentum * v - lr * g; w <- w + v. Returns new (params, velocity)."""
    new_v = [[DTYPE(cfg.momentum) * v - DTYPE(cfg.lr) * g for v, g in zip(vs, gs)]
             for vs, gs in zip(velocity, grads)]
    new_p = [[w + v for w, v in zip(ws, vs)] for ws, vs in zip(params, new_v)]
    return new_p, new_v


def zeros_like_params(params):
    return [[np.zeros_like(t) for t in group] for group in params]


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float = float("nan")


def train(net: NetworkSpec, dataset: Dataset, cfg: TrainConfig, val: Dataset | None = None,
          params=None):
    """Minibatch SGD. Deterministic given ``cfg.seed``.

    Returns (params, history). ``train_acc`` is the accuracy of the
    predictions made during the epoch, before each batch's update.
    """
    if dataset.shape != net.input_shape:
        raise ShapeError(f"dataset images are {dataset.shape}, network expects {net.input_shape}")
    if len(dataset) == 0:
        raise DatasetError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(net, rng)
    check_params(net, params)
    velocity = zeros_like_params(params)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = dataset.images[idx], dataset.labels[idx]
            loss, grads, probs = _loss_grads_probs(net, params, xb, yb)
            total_loss += loss * len(idx)
            correct += int((probs.argmax(axis=1) == yb).sum())
            params, velocity = sgd_step(params, grads, velocity, cfg)
        log = EpochLog(epoch, total_loss / len(dataset), correct / len(dataset))
        if val is not None and len(val):
            log.val_acc = evaluate(net, params, val, binary=False)[0]
        history.append(log)
    return params, history


def predict(net: NetworkSpec, params, images: np.ndarray, binary: bool = True,
            batch: int = 256) -> np.ndarray:
    """Class-score matrix [N, classes].

    With ``binary`` set and binary layers present, each image goes through
    the deployed single-image path; otherwise the batched float path.
    """
    if binary and any(layer.binary for layer in net.layers):
        model = Model(net, params, binary=True)
        return np.stack([model.forward(img) for img in images])
    outs = [forward_batch(net, params, images[i:i + batch]).reshape(len(images[i:i + batch]), -1)
            for i in range(0, len(images), batch)]
    return np.concatenate(outs) if outs else np.zeros((0, net.classes), dtype=DTYPE)


def evaluate(net: NetworkSpec, params, dataset: Dataset, binary: bool = True):
    """Argmax accuracy (ties go to the lower class) and confusion matrix.

    ``confusion[true, predicted]`` counts items.
    """
    if len(dataset) == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    scores = predict(net, params, dataset.images, binary=binary)
    pred = scores.argmax(axis=1)
    k = max(net.classes, len(dataset.class_names))
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, pred), 1)
    return float((pred == dataset.labels).mean()), confusion


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_acc", "val_acc"])
        for log in history:
            val = "" if math.isnan(log.val_acc) else f"{log.val_acc:.6f}"
            writer.writerow([log.epoch, f"{log.loss:.6f}", f"{log.train_acc:.6f}", val])
