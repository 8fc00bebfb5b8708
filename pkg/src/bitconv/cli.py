"""Command-line entry point: ``bitconv <subcommand> ...``.

Exit codes: 0 success, 2 user error (bad input files, flags, shapes),
3 internal error. Options may also come from a JSON ``--config`` file;
explicit flags win over the file, which wins over built-in defaults.
A config file is a flat object of option names (as spelled after the
dashes, with ``_`` for ``-``), optionally with per-subcommand sections::

    {"seed": 3, "train": {"epochs": 20, "lr": 0.02}}
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import binary as binmod
from .detect import DetectConfig, ProposalConfig, detect, load_image
from .errors import BitconvError
from .netgraph import CONV_KINDS, Model, init_params, parse_netspec, validate_binarization
from .pareto import SearchConfig, TrainAndTime, measure_time, search, summarize, write_front, write_ledger
from .training import TrainConfig, evaluate, load_dataset, save_dataset, train, write_history
from .weightfile import load_weights, save_weights

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 2, 3


class UserError(Exception):
    """Bad invocation that argparse itself cannot catch."""


def _env_seed() -> int:
    raw = os.environ.get("BITCONV_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UserError(f"BITCONV_SEED must be an integer, got {raw!r}") from None


def _on_off(value: str) -> bool:
    return value == "on"


def _read_net(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UserError(f"cannot read netspec {path}: {exc.strerror or exc}") from None
    try:
        net = parse_netspec(text)
    except BitconvError as exc:
        raise UserError(f"{path}: {exc}") from None
    for msg in validate_binarization(net):
        print(f"warning: {path}: {msg}", file=sys.stderr)
    return net


def _read_weights(net, path):
    if not Path(path).is_file():
        raise UserError(f"weights file not found: {path}")
    try:
        return load_weights(net, path)
    except BitconvError as exc:
        raise UserError(f"{path}: {exc}") from None


def _train_config(args) -> TrainConfig:
    if args.lr < 0 or args.epochs < 1 or args.batch_size < 1:
        raise UserError("need lr >= 0, epochs >= 1, batch-size >= 1")
    return TrainConfig(lr=args.lr, momentum=args.momentum, epochs=args.epochs,
                       batch_size=args.batch_size, seed=args.seed)


# -- subcommands -----------------------------------------------------------

def cmd_train(args) -> int:
    net = _read_net(args.netspec)
    data = load_dataset(args.dataset)
    val = None
    if args.val_fraction > 0:
        data, val = data.split(args.val_fraction, args.seed)
    params, history = train(net, data, _train_config(args), val=val)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(net, params, out / "model.weights")
    write_history(history, out / "train.csv")
    last = history[-1]
    print(f"epochs={len(history)} loss={last.loss:.4f} train_acc={last.train_acc:.4f} "
          f"val_acc={last.val_acc:.4f}")
    print(f"wrote {out / 'model.weights'} and {out / 'train.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = _read_net(args.netspec)
    params = _read_weights(net, args.weights)
    data = load_dataset(args.dataset)
    acc, confusion = evaluate(net, params, data, binary=_on_off(args.binary))
    print(f"accuracy,{acc:.6f}")
    print("true\\pred," + ",".join(data.class_names))
    for name, row in zip(data.class_names, confusion):
        print(name + "," + ",".join(str(int(v)) for v in row))
    return EXIT_OK


def _layer_times(model: Model, x: np.ndarray, reps: int, binary: bool):
    """Median time of every layer, each fed its real input activation."""
    inputs = []
    act = x
    for i in range(len(model.spec.layers)):
        inputs.append(act)
        act = model.run_layer(i, act, binary)
    rows = []
    for i, layer in enumerate(model.spec.layers):
        for _ in range(2):
            model.run_layer(i, inputs[i], binary)
        samples = []
        for _ in range(reps):
            t0 = time.perf_counter()
            model.run_layer(i, inputs[i], binary)
            samples.append(max((time.perf_counter() - t0) * 1e3, 1e-6))
        rows.append((i, layer.kind, summarize(samples)))
    return rows


def cmd_bench(args) -> int:
    if args.reps < 5:
        raise UserError("--reps must be at least 5")
    net = _read_net(args.netspec)
    rng = np.random.default_rng(args.seed)
    params = _read_weights(net, args.weights) if args.weights else init_params(net, rng)
    use_binary = _on_off(args.binary)
    model = Model(net, params, binary=use_binary)
    x = rng.standard_normal(net.input_shape).astype(np.float32)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["layer", "kind", "binary", "median_ms", "spread"])
    for i, kind, timing in _layer_times(model, x, args.reps, use_binary):
        flagged = int(use_binary and net.layers[i].binary)
        w.writerow([i, kind, flagged, f"{timing.median_ms:.6f}", f"{timing.spread:.3f}"])
    total = measure_time(model, reps=args.reps, x=x, binary=use_binary)
    w.writerow(["total", "", int(use_binary), f"{total.median_ms:.6f}", f"{total.spread:.3f}"])
    if args.compare:
        eligible = [i for i, layer in enumerate(net.layers) if layer.binary]
        if not eligible:
            print("warning: no binary-flagged layers to compare", file=sys.stderr)
        float_rows = {i: t for i, _, t in _layer_times(model, x, args.reps, False)}
        bin_rows = {i: t for i, _, t in _layer_times(model, x, args.reps, True)}
        w.writerow([])
        w.writerow(["layer", "kind", "float_ms", "binary_ms", "ratio"])
        for i in eligible:
            f_ms, b_ms = float_rows[i].median_ms, bin_rows[i].median_ms
            w.writerow([i, net.layers[i].kind, f"{f_ms:.6f}", f"{b_ms:.6f}", f"{f_ms / b_ms:.3f}"])
    return EXIT_OK


def cmd_search(args) -> int:
    if args.threshold_ms <= 0 or args.budget < 1:
        raise UserError("need --threshold-ms > 0 and --budget >= 1")
    if args.reps < 5:
        raise UserError("--reps must be at least 5")
    base = _read_net(args.netspec)
    data = load_dataset(args.dataset)
    cfg = SearchConfig(threshold_ms=args.threshold_ms, budget=args.budget,
                       train=_train_config(args), reps=args.reps, seed=args.seed,
                       val_fraction=args.val_fraction)
    train_set, val_set = data.split(cfg.val_fraction, cfg.seed)
    evaluator = TrainAndTime(train_set, val_set, cfg, jobs=args.jobs)
    result = search(base, None, cfg, evaluator=evaluator)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ledger(result.ledger, out / "ledger.csv")
    write_front(result.front, out)
    print(f"evaluated {len(result.points)} candidates; front has {len(result.front)} member(s)")
    for p in result.front:
        print(f"{p.name} time_ms={p.time_ms:.4f} accuracy={p.accuracy:.4f}")
    if not result.front:
        print(f"warning: no candidate ran under {args.threshold_ms} ms; front is empty",
              file=sys.stderr)
    return EXIT_OK


def _image_paths(target) -> list[Path]:
    target = Path(target)
    if target.is_dir():
        paths = sorted(p for p in target.iterdir() if p.suffix.lower() == ".ppm")
        if not paths:
            raise UserError(f"no .ppm images in {target}")
        return paths
    if not target.is_file():
        raise UserError(f"image not found: {target}")
    return [target]


def cmd_detect(args) -> int:
    net = _read_net(args.netspec)
    params = _read_weights(net, args.weights)
    model = Model(net, params, binary=_on_off(args.binary))
    side = args.side if args.side is not None else net.input_shape[1]
    cfg = DetectConfig(
        proposals=ProposalConfig(spacing=args.spacing, min_run=args.min_run, margin_px=args.margin,
                                 min_box=args.min_box, green_margin=args.green_margin,
                                 min_brightness=args.min_brightness),
        side=side, positive_label=args.positive_label, threshold=args.threshold)
    paths = _image_paths(args.image)
    for path in paths:
        img = load_image(path)
        detections, timing = detect(img, model, cfg)
        if len(paths) > 1:
            print(f"# {path}")
        for d in detections:
            p = d.proposal
            print(f"{p.x0} {p.y0} {p.x1} {p.y1} {d.label} {d.confidence:.6f}")
        print(json.dumps(timing.as_dict()))
    return EXIT_OK


def cmd_binarize(args) -> int:
    net = _read_net(args.netspec)
    params = _read_weights(net, args.weights)
    model = Model(net, params, binary=False)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["layer", "kind", "conv", "flagged", "filters", "alpha_min", "alpha_mean",
                "alpha_max", "float_bytes", "binary_bytes", "memory_ratio"])
    total_f = total_b = 0
    for i, layer in enumerate(net.layers):
        if layer.kind not in CONV_KINDS:
            continue
        for slot, conv in enumerate(model.convs(i)):
            bank = binmod.binarize_weights(conv)
            f_bytes = conv.weights.astype(np.float32).nbytes
            b_bytes = bank.nbytes
            total_f += f_bytes
            total_b += b_bytes
            a = bank.alpha
            w.writerow([i, layer.kind, slot, int(layer.binary), conv.out_channels,
                        f"{a.min():.6g}", f"{a.mean():.6g}", f"{a.max():.6g}",
                        f_bytes, b_bytes, f"{b_bytes / f_bytes:.5f}"])
    if total_f:
        w.writerow(["total", "", "", "", "", "", "", "", total_f, total_b, f"{total_b / total_f:.5f}"])
    return EXIT_OK


def cmd_synth(args) -> int:
    from .pnm import write_pnm
    from .synth import make_crop_dataset, make_scene

    out = Path(args.out)
    if args.kind == "dataset":
        ds = make_crop_dataset(args.n, seed=args.seed, side=args.side)
        save_dataset(ds, out)
        print(f"wrote {args.n} crops ({', '.join(ds.class_names)}) to {out}")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "x0", "y0", "x1", "y1", "label"])
        for i in range(args.n):
            scene = make_scene(rng)
            name = f"scene{i:04d}.ppm"
            write_pnm(out / name, scene.image)
            for b, label in zip(scene.boxes, scene.labels):
                w.writerow([name, b.x0, b.y0, b.x1, b.y1, label])
    print(f"wrote {args.n} scenes and truth.csv to {out}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--val-fraction", type=float, default=0.2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (default: $BITCONV_SEED or 0)")
    common.add_argument("--config", default=None, help="JSON file of option defaults")

    parser = argparse.ArgumentParser(prog="bitconv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", parents=[common], help="train a network on an image directory")
    p.add_argument("netspec")
    p.add_argument("dataset")
    p.add_argument("--out", default=".", help="directory for model.weights and train.csv")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="accuracy and confusion matrix")
    p.add_argument("netspec")
    p.add_argument("weights")
    p.add_argument("dataset")
    p.add_argument("--binary", choices=("on", "off"), default="on")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="per-layer inference timing")
    p.add_argument("netspec")
    p.add_argument("weights", nargs="?", default=None,
                   help="weights file (random weights when omitted)")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--binary", choices=("on", "off"), default="on")
    p.add_argument("--compare", action="store_true",
                   help="also print float/binary time ratios of binary-flagged layers")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("search", parents=[common], help="latency/accuracy Pareto search")
    p.add_argument("netspec")
    p.add_argument("dataset")
    p.add_argument("--threshold-ms", type=float, default=2.0)
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1, help="candidates trained in parallel")
    p.add_argument("--out", default="search-results")
    _add_train_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("detect", parents=[common], help="detect objects in PPM images")
    p.add_argument("image", help="a .ppm file or a directory of them")
    p.add_argument("netspec")
    p.add_argument("weights")
    p.add_argument("--binary", choices=("on", "off"), default="on")
    p.add_argument("--side", type=int, default=None, help="crop side (default: network input)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--positive-label", type=int, default=1)
    defaults = ProposalConfig()
    p.add_argument("--spacing", type=int, default=defaults.spacing)
    p.add_argument("--min-run", type=int, default=defaults.min_run)
    p.add_argument("--margin", type=int, default=defaults.margin_px)
    p.add_argument("--min-box", type=int, default=defaults.min_box)
    p.add_argument("--green-margin", type=int, default=defaults.green_margin)
    p.add_argument("--min-brightness", type=int, default=defaults.min_brightness)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("binarize", parents=[common], help="binarization report for a weights file")
    p.add_argument("netspec")
    p.add_argument("weights")
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("synth", parents=[common], help="write synthetic datasets or scenes")
    p.add_argument("kind", choices=("dataset", "scenes"))
    p.add_argument("out")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--side", type=int, default=24)
    p.set_defaults(func=cmd_synth)
    return parser


def _config_defaults(parser, argv) -> None:
    """Apply ``--config`` values as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    command = next((a for a in rest if not a.startswith("-")), None)
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if sub is None:
        return
    try:
        data = json.loads(Path(known.config).read_text())
    except OSError as exc:
        raise UserError(f"cannot read config {known.config}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise UserError(f"{known.config}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UserError(f"{known.config}: expected a JSON object")
    commands = parser._subparsers._group_actions[0].choices
    all_dests = {a.dest for p in commands.values() for a in p._actions}
    dests = {a.dest for a in sub._actions}
    values = {}
    for key, value in data.items():
        if isinstance(value, dict):
            if key not in commands:
                raise UserError(f"{known.config}: unknown section {key!r}")
            continue
        key = key.replace("-", "_")
        if key not in all_dests:
            raise UserError(f"{known.config}: unknown option {key!r}")
        if key in dests:
            values[key] = value
    for key, value in data.get(command, {}).items():
        key = key.replace("-", "_")
        if key not in dests:
            raise UserError(f"{known.config}: unknown option {key!r} for {command}")
        values[key] = value
    sub.set_defaults(**values)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        _config_defaults(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        if args.seed is None:
            args.seed = _env_seed()
        return args.func(args)
    except (UserError, BitconvError) as exc:
        print(f"bitconv: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        name = f" {exc.filename}" if getattr(exc, "filename", None) else ""
        print(f"bitconv: error:{name} {exc.strerror or exc}", file=sys.stderr)
        return EXIT_USER
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001
        if os.environ.get("BITCONV_DEBUG"):
            raise
        print(f"bitconv: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
