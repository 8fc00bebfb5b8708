import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitconv.detect import (DetectConfig, Detection, Proposal, ProposalConfig, TimingModel,
                            crop_resize, detect, green_mask, is_green, load_image,
                            match_detections, scan_proposals, total_time)
from bitconv.errors import FormatError, ShapeError
from bitconv.netgraph import Model, init_params, parse_netspec
from bitconv.pnm import write_pnm
from bitconv.synth import CLASS_NAMES, SQUARE, make_crop_dataset, make_scene

GREEN = (40, 160, 40)


def field(h=60, w=80):
    img = np.zeros((h, w, 3), np.uint8)
    img[:] = GREEN
    return img


def plant(img, x0, y0, x1, y1, color=(255, 255, 255)):
    img[y0:y1 + 1, x0:x1 + 1] = color
    return Proposal(x0, y0, x1, y1)


def contains(p, q):
    return p.x0 <= q.x0 and p.y0 <= q.y0 and p.x1 >= q.x1 and p.y1 >= q.y1


# -- green rule ----------------------------------------------------------------------

def test_is_green_examples():
    assert is_green((0, 255, 0))
    assert not is_green((200, 200, 200))
    assert not is_green((0, 25, 0), min_brightness=30)


@given(st.tuples(*[st.integers(0, 255)] * 3))
def test_mask_matches_pixel_rule(rgb):
    img = np.array(rgb, np.uint8).reshape(1, 1, 3)
    assert bool(green_mask(img)[0, 0]) == is_green(rgb)


# -- proposals -----------------------------------------------------------------------

def test_all_green_no_proposals():
    assert scan_proposals(field()) == []


def test_single_rectangle_one_proposal():
    img = field()
    truth = plant(img, 30, 10, 49, 49)  # 20 wide, 40 tall
    props = scan_proposals(img)
    assert len(props) == 1 and contains(props[0], truth)


def test_rectangle_contained_without_refine():
    img = field()
    plant(img, 24, 10, 43, 49)
    props = scan_proposals(img, ProposalConfig(refine=False))
    # without refinement the box spans the scanlines that hit the object (24, 32, 40)
    # and the run rows, plus the 2 px margin
    assert props == [Proposal(22, 8, 42, 51)]


def test_two_separated_rectangles():
    img = field(60, 120)
    a = plant(img, 10, 10, 29, 40)
    b = plant(img, 29 + 2 * 8 + 1, 15, 29 + 2 * 8 + 20, 45)
    props = scan_proposals(img)
    assert len(props) == 2
    assert contains(props[0], a) or contains(props[1], a)
    assert contains(props[0], b) or contains(props[1], b)


def test_short_runs_and_small_boxes_dropped():
    img = field()
    plant(img, 16, 10, 16, 13)  # 4 tall: not longer than min_run
    assert scan_proposals(img) == []
    img = field()
    plant(img, 16, 10, 16, 14)  # 5 tall, 1 wide: box 5x9 after margin, below min_box
    assert scan_proposals(img) == []


def test_proposal_needs_rgb():
    with pytest.raises(ShapeError):
        scan_proposals(np.zeros((4, 4), np.uint8))


@given(st.integers(0, 2**16))
def test_proposals_within_bounds(seed):
    r = np.random.default_rng(seed)
    img = r.integers(0, 256, (int(r.integers(8, 40)), int(r.integers(1, 40)), 3), dtype=np.uint8)
    h, w = img.shape[:2]
    for p in scan_proposals(img):
        assert 0 <= p.x0 <= p.x1 < w and 0 <= p.y0 <= p.y1 < h


def test_recall_over_1000_scenes():
    rng = np.random.default_rng(2024)
    cfg = ProposalConfig()
    hits = total = 0
    for _ in range(1000):
        scene = make_scene(rng, 96, 72, n_squares=(1, 2), n_disks=(0, 1))
        props = scan_proposals(scene.image, cfg)
        for box in scene.boxes:
            if box.width > cfg.spacing and box.height > cfg.min_run:
                total += 1
                hits += any(box.intersection(p) > 0 for p in props)
    assert hits / total >= 0.99


# -- crop and resize -------------------------------------------------------------------

def test_crop_identity(rng):
    img = rng.integers(0, 256, (30, 30, 3), dtype=np.uint8)
    out = crop_resize(img, Proposal(3, 4, 26, 27), 24)
    assert np.array_equal(out, (img[4:28, 3:27] / 255.0).transpose(2, 0, 1).astype(np.float32))


@given(st.integers(1, 40), st.integers(1, 40), st.tuples(*[st.integers(0, 255)] * 3))
def test_crop_constant(h, w, rgb):
    img = np.empty((h, w, 3), np.uint8)
    img[:] = rgb
    out = crop_resize(img, Proposal(0, 0, w - 1, h - 1), 24)
    assert np.allclose(out, np.array(rgb, np.float32)[:, None, None] / 255, atol=1e-6)


def test_crop_checkerboard_by_hand():
    img = np.zeros((2, 2, 3), np.uint8)
    img[0, 1] = img[1, 0] = 255
    out = crop_resize(img, Proposal(0, 0, 1, 1), 4)
    # half-pixel centres sample at 0, 0.25, 0.75, 1 along each axis; value = x + y - 2xy
    expected = [[0.0, 0.25, 0.75, 1.0],
                [0.25, 0.375, 0.625, 0.75],
                [0.75, 0.625, 0.375, 0.25],
                [1.0, 0.75, 0.25, 0.0]]
    for c in range(3):
        assert np.allclose(out[c], expected, atol=1e-6)


# -- detection -------------------------------------------------------------------------

def positive_stub(crop):
    return np.array([0.0, 1.0])


def test_zero_proposals_zero_detections():
    dets, timing = detect(field(), positive_stub)
    assert dets == [] and timing.n_proposals == 0 and timing.mean_t_inf_ms == 0.0


def test_unreachable_threshold():
    img = field()
    plant(img, 30, 10, 49, 49)
    dets, timing = detect(img, positive_stub, DetectConfig(threshold=1.01))
    assert dets == [] and timing.n_proposals == 1


def test_oracle_classifier_finds_planted_squares():
    rng = np.random.default_rng(5)
    for _ in range(20):
        scene = make_scene(rng, 120, 90, n_squares=(1, 2), n_disks=(1, 2))
        props = scan_proposals(scene.image)
        # label each proposal from ground truth, in the order detect will ask
        answers = iter([np.array([0.0, 1.0]) if any(p.intersection(t) for t in scene.targets())
                        else np.array([1.0, 0.0]) for p in props])
        dets, _ = detect(scene.image, lambda crop: next(answers))
        expected = [p for p in props if any(p.intersection(t) for t in scene.targets())]
        assert [d.proposal for d in dets] == expected


def test_timing_report_has_no_negative_overhead():
    img = field(60, 120)
    plant(img, 10, 10, 29, 40)
    plant(img, 60, 10, 79, 40)
    _, t = detect(img, positive_stub)
    assert t.n_proposals == 2
    assert t.total_ms >= t.t_prop_ms + t.n_proposals * t.mean_t_inf_ms


def test_detect_rejects_wrong_input_size(rng):
    net = parse_netspec("input 3x16x16\nfc out=2\nsoftmax")
    with pytest.raises(ShapeError):
        detect(field(), Model(net, init_params(net, rng)), DetectConfig(side=24))


def test_detect_with_model(rng):
    net = parse_netspec("input 3x24x24\nfc out=2\nsoftmax")
    params = init_params(net, rng)
    params[0][0][:] = 0
    params[0][1][:] = [0.0, 5.0]
    img = field()
    plant(img, 30, 10, 49, 49)
    dets, _ = detect(img, Model(net, params))
    assert len(dets) == 1 and dets[0].label == 1 and dets[0].confidence > 0.99


def test_load_image_needs_color(tmp_path):
    write_pnm(tmp_path / "g.pgm", np.zeros((4, 4), np.uint8))
    with pytest.raises(FormatError):
        load_image(tmp_path / "g.pgm")


def test_match_detections():
    t = [Proposal(0, 0, 9, 9), Proposal(20, 20, 29, 29)]
    d = [Detection(Proposal(0, 0, 9, 9), 1, 0.9), Detection(Proposal(1, 1, 9, 9), 1, 0.8),
         Detection(Proposal(50, 50, 59, 59), 1, 0.7)]
    assert match_detections(d, t) == (1, 2)


# -- timing model ----------------------------------------------------------------------

def test_total_time_table_values():
    assert total_time(TimingModel(0.85, 0.95, 1.5)) == 2.275
    assert total_time(TimingModel(0.85, 1.05, 1.5)) == pytest.approx(2.425)
    assert total_time(TimingModel(3.25, 123.0, 0)) == 3.25


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_total_time_linear(a, b, c, d):
    base = total_time(TimingModel(a, b, c))
    assert total_time(TimingModel(a + d, b, c)) == pytest.approx(base + d)
    assert total_time(TimingModel(a, b + d, c)) == pytest.approx(base + c * d)
    assert total_time(TimingModel(a, b, c + d)) == pytest.approx(base + b * d)


# -- synthetic data --------------------------------------------------------------------

def test_scene_objects_are_non_green_and_separate():
    rng = np.random.default_rng(1)
    for _ in range(20):
        scene = make_scene(rng)
        mask = green_mask(scene.image)
        for box in scene.boxes:
            cx, cy = (box.x0 + box.x1) // 2, (box.y0 + box.y1) // 2
            assert not mask[cy, cx]
        for i, a in enumerate(scene.boxes):
            for b in scene.boxes[i + 1:]:
                assert a.intersection(b) == 0
        background = np.ones(mask.shape, bool)
        for box in scene.boxes:
            background[box.y0:box.y1 + 1, box.x0:box.x1 + 1] = False
        assert mask[background].all()
        assert SQUARE in scene.labels


def test_crop_dataset_is_balanced_and_seeded():
    a = make_crop_dataset(20, seed=3)
    b = make_crop_dataset(20, seed=3)
    assert a.shape == (3, 24, 24) and a.class_names == CLASS_NAMES
    assert np.bincount(a.labels).tolist() == [10, 10]
    assert np.array_equal(a.images, b.images)
    assert a.images.min() >= 0 and a.images.max() <= 1
