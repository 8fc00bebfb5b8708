"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""

import time
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

import gradcheck as G
from bitconv.binary import (binarize_weights, binary_gemm, pack_matrix, pack_signs, xnor_conv_forward,
                            xnor_dot)
from bitconv.detect import DetectConfig, TimingModel, detect, match_detections, total_time
from bitconv.errors import FormatError
from bitconv.kernels import ConvParams, gemm
from bitconv.netgraph import Model, format_netspec, init_params, parse_netspec
from bitconv.pareto import (ParetoPoint, SearchConfig, TrainAndTime, dominates, pareto_front, replay,
                            search, transforms)
from bitconv.pnm import decode, encode
from bitconv.synth import make_crop_dataset, make_scene
from bitconv.training import Dataset, TrainConfig, evaluate, train
from bitconv.weightfile import load_weights, save_weights

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# -- 1. xnor exactness --------------------------------------------------------------

def conv64(x, w, b, stride, pad):
    """Float64 convolution through a sliding-window view (independent of the package)."""
    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
    k = w.shape[-1]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("chwij,fcij->fhw", win, w.astype(np.float64)) + b[:, None, None]


def test_1_xnor_exactness(capsys):
    rng = np.random.default_rng(101)
    worst, cases = 0.0, 1000
    for _ in range(cases):
        c, out = int(rng.integers(1, 80)), int(rng.integers(1, 6))
        k = int(rng.choice([1, 3, 5]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
        h, w = int(rng.integers(k, 9)), int(rng.integers(k, 9))
        wts = rng.standard_normal((out, c, k, k)).astype(np.float32)
        bias = rng.standard_normal(out).astype(np.float32)
        bank = binarize_weights(ConvParams(c, out, k, stride, pad, wts, bias))
        x = rng.choice(np.float32([-1, 1]), (1, c, h, w))
        got = xnor_conv_forward(x, bank, input_scaling=False)[0]
        alpha = np.abs(wts.astype(np.float64)).mean(axis=(1, 2, 3))
        ref = conv64(x[0], alpha[:, None, None, None] * np.where(wts >= 0, 1.0, -1.0), bias, stride, pad)
        worst = max(worst, float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1.0))))
    dots_exact = True
    for n in range(1, 1025):
        a, b = rng.choice([-1.0, 1.0], n), rng.choice([-1.0, 1.0], n)
        dots_exact &= xnor_dot(pack_signs(a), pack_signs(b)) == int(a @ b)
    report(capsys, 1, worst <= 1e-4 and dots_exact,
           f"{cases} conv cases max rel err {worst:.2e}; xnor_dot exact for n=1..1024: {dots_exact}")


# -- 2. binarization optimality -------------------------------------------------------

def test_2_alpha_beats_grid(capsys):
    rng = np.random.default_rng(202)
    filters, wins = 100, 0
    for _ in range(filters):
        c, k = int(rng.integers(1, 64)), int(rng.choice([1, 3, 5]))
        w = rng.standard_normal((1, c, k, k)).astype(np.float32)
        bank = binarize_weights(ConvParams(c, 1, k, weights=w))
        wf = w.reshape(-1).astype(np.float64)
        b = np.where(wf >= 0, 1.0, -1.0)
        grid = np.linspace(0, 2 * np.abs(wf).max(), 10_000)
        grid_err = ((wf[None] - grid[:, None] * b[None]) ** 2).sum(axis=1)
        err = ((wf - float(bank.alpha[0]) * b) ** 2).sum()
        wins += err <= grid_err.min() + 1e-9 * grid_err.min()
    report(capsys, 2, wins == filters, f"alpha=mean|W| at least as good as the grid on {wins}/{filters} filters")


# -- 3. speedup and memory --------------------------------------------------------------

def best_of(fn, reps=7):
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def test_3_speedup_and_memory(capsys):
    rng = np.random.default_rng(303)
    m, k, n = 256, 4608, 256
    a = rng.standard_normal((m, k)).astype(np.float32)
    b = rng.standard_normal((k, n)).astype(np.float32)
    pa, pb = pack_matrix(a, "rows"), pack_matrix(b, "cols")
    assert np.array_equal(binary_gemm(pa, pb), np.where(a >= 0, 1, -1) @ np.where(b >= 0, 1, -1))
    t_float = best_of(lambda: gemm(a, b))
    t_bin = best_of(lambda: binary_gemm(pa, pb))
    ratio = t_float / t_bin
    mem_ok = True
    for c, out in [(64, 16), (128, 32), (256, 64), (512, 8)]:
        p = ConvParams(c, out, 3, 1, 1, rng.standard_normal((out, c, 3, 3)).astype(np.float32))
        bank = binarize_weights(p)
        mem_ok &= bank.nbytes == p.weights.nbytes // 32 + 4 * out
    report(capsys, 3, ratio >= 4 and mem_ok,
           f"binary_gemm {m}x{k}x{n}: float {t_float * 1e3:.2f} ms, binary {t_bin * 1e3:.2f} ms, "
           f"ratio {ratio:.1f}x (floor 4x); memory = float/32 + 4 B/filter: {mem_ok}")


# -- 4. gradients ----------------------------------------------------------------------

def test_4_gradients(capsys):
    rng = np.random.default_rng(404)
    nets = [parse_netspec(text) for text in G.KIND_NETS.values()]
    while len(nets) < len(G.KIND_NETS) + 20:
        nets.append(G.random_tiny_net(rng))
    bad = checked = skipped = 0
    per_kind = {}
    for net in nets:
        params, x, labels = G.random_instance(rng, net)
        b, c, s = G.check(net, params, x, labels)
        bad, checked, skipped = bad + b, checked + c, skipped + s
        for layer in net.layers:
            per_kind[layer.kind] = per_kind.get(layer.kind, 0) + c
    kinds = {"conv", "fire", "extended_fire", "maxpool", "relu", "prelu", "fc", "softmax"}
    covered = kinds <= {kind for kind, c in per_kind.items() if c > 0}
    report(capsys, 4, bad == 0 and covered,
           f"{len(nets)} nets, {checked} entries checked, {skipped} skipped at kinks, "
           f"{bad} mismatched; all layer kinds covered: {covered}")


# -- 5. timing arithmetic ------------------------------------------------------------------

def test_5_total_time(capsys):
    got = total_time(TimingModel(0.85, 0.95, 1.5))
    report(capsys, 5, got == 2.275, f"total_time(0.85, 0.95, 1.5) = {got!r} ms")


# -- 6. pareto soundness ----------------------------------------------------------------------

TOY = parse_netspec("input 1x8x8\nconv out=8 k=3\nrelu\nconv out=4 k=3\nrelu\nfc out=2\nsoftmax")


def toy_dataset(n, seed):
    """Bright bar vertical (1) or horizontal (0) in noise."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    x = rng.normal(0.0, 0.6, (n, 1, 8, 8)).astype(np.float32)
    for i, lab in enumerate(labels):
        j = int(rng.integers(1, 7))
        if lab:
            x[i, 0, :, j] += 1.0
        else:
            x[i, 0, j, :] += 1.0
    return Dataset(x, labels, ["horizontal", "vertical"])


def enumerate_space(base, cfg):
    seen = {format_netspec(base): base}
    todo = [base]
    while todo:
        for _, child in transforms(todo.pop(), cfg):
            key = format_netspec(child)
            if key not in seen:
                seen[key] = child
                todo.append(child)
    return list(seen.values())


def test_6_pareto_soundness(capsys):
    threshold = 5.0
    cfg = SearchConfig(threshold_ms=threshold, budget=20, transforms=("remove", "scale"), min_filters=5,
                       reps=15, train=TrainConfig(lr=0.02, epochs=4, seed=0))
    ev = TrainAndTime(toy_dataset(240, 1), toy_dataset(120, 2), cfg)
    res = search(TOY, None, cfg, evaluator=ev)
    space = enumerate_space(TOY, cfg)
    pts = [ParetoPoint(s, *ev(s)) for s in space]
    exhaustive = {format_netspec(p.spec) for p in pareto_front(pts, cfg.band) if p.time_ms <= threshold}
    got = {format_netspec(p.spec) for p in res.front}
    mutual = all(not dominates(p, q, cfg.band) for p in res.front for q in res.front)
    feasible = all(p.time_ms <= threshold for p in res.front)
    replays = all(replay(TOY, p.lineage, cfg) == p.spec for p in res.front)
    ok = len(space) == 6 and got == exhaustive and mutual and feasible and replays
    report(capsys, 6, ok,
           f"space {len(space)} specs, search front {len(got)} == exhaustive {len(exhaustive)}: "
           f"{got == exhaustive}; non-dominated {mutual}, <= threshold {feasible}, replay {replays}")


# -- 7. desk-scale end to end --------------------------------------------------------------------

def test_7_desk_scale(capsys):
    net = parse_netspec((CONFIGS / "desk3.net").read_text())
    t0 = time.perf_counter()
    data = make_crop_dataset(1000, seed=7)
    train_set, val_set = data.split(0.2, seed=7)
    params, _ = train(net, train_set, TrainConfig(lr=0.02, epochs=10, seed=7))
    val_acc, _ = evaluate(net, params, val_set)
    train_s = time.perf_counter() - t0

    model = Model(net, params)
    rng = np.random.default_rng(77)
    hits = targets = false_pos = 0
    scenes = 100
    for _ in range(scenes):
        scene = make_scene(rng)
        dets, _ = detect(scene.image, model, DetectConfig())
        m, fp = match_detections(dets, scene.targets())
        hits, targets, false_pos = hits + m, targets + len(scene.targets()), false_pos + fp
    rate, fp_rate = hits / targets, false_pos / scenes
    ok = val_acc >= 0.95 and train_s < 300 and rate >= 0.95 and fp_rate <= 1.0
    report(capsys, 7, ok,
           f"val acc {val_acc:.3f} in {train_s:.1f} s; detection {hits}/{targets} = {rate:.3f}, "
           f"{fp_rate:.2f} false positives per scene")


# -- 8. format round-trips ---------------------------------------------------------------------------

MALFORMED = [b"", b"P3\n2 2\n255\n" + bytes(12), b"P6\n2 2\n", b"P6\n2\n255\n", b"P6\n0 2\n255\n",
             b"P6\n2 2\n65536\n" + bytes(24), b"P6\n2 2\n255\n" + bytes(11), b"P5\n2 2\n255\n" + bytes(3),
             b"P6\n-2 2\n255\n" + bytes(12), b"P6\n2 2\n0\n" + bytes(12)]


def test_8_format_round_trips(capsys, tmp_path):
    rng = np.random.default_rng(808)
    weights_ok = specs_ok = True
    for path in sorted(CONFIGS.glob("*.net")):
        net = parse_netspec(path.read_text())
        text = format_netspec(net)
        specs_ok &= format_netspec(parse_netspec(text)) == text and parse_netspec(text) == net
        params = init_params(net, rng)
        for group in params:
            for t in group:
                t.reshape(-1)[:3] = np.float32([np.nan, -0.0, 1e-45])[: t.size]
        save_weights(net, params, tmp_path / "w.bin")
        back = load_weights(net, tmp_path / "w.bin")
        weights_ok &= all(a.tobytes() == b.tobytes() for ga, gb in zip(params, back) for a, b in zip(ga, gb))
    img = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    gray = rng.integers(0, 256, (5, 7), dtype=np.uint8)
    pnm_ok = np.array_equal(decode(encode(img)), img) and np.array_equal(decode(encode(gray)), gray)
    rejected = 0
    for data in MALFORMED:
        try:
            decode(data)
        except FormatError:
            rejected += 1
    ok = weights_ok and specs_ok and pnm_ok and rejected == len(MALFORMED)
    report(capsys, 8, ok, f"weights bit-exact {weights_ok}, netspec fixed point {specs_ok}, "
                          f"PNM round-trip {pnm_ok}, malformed headers rejected {rejected}/{len(MALFORMED)}")
