import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitconv.netgraph import count_params, format_netspec, init_params, parse_netspec
from bitconv.pareto import (ParetoPoint, SearchConfig, Transform, apply_transform, dominates,
                            measure_time, pareto_front, replay, resize_dataset, search, summarize,
                            transforms, write_front, write_ledger)
from bitconv.training import Dataset

TINY = parse_netspec("input 1x4x4\nsoftmax")
TOY = parse_netspec("input 1x8x8\nconv out=8 k=3\nrelu\nconv out=4 k=3\nrelu\nfc out=2\nsoftmax")
TOY_CFG = dict(transforms=("remove", "scale"), min_filters=5)


def pt(t, a, **kw):
    return ParetoPoint(TINY, t, a, **kw)


# -- dominance ------------------------------------------------------------------------

def test_dominates_examples():
    assert dominates(pt(1, 0.9), pt(2, 0.8))
    assert not dominates(pt(1, 0.8), pt(2, 0.9))
    p = pt(1, 0.9)
    assert not dominates(p, p)


def test_noise_band_makes_near_ties_non_strict():
    assert not dominates(pt(1.0, 0.9), pt(1.01, 0.9))
    assert dominates(pt(1.0, 0.91), pt(1.01, 0.9))


def test_point_invariants():
    with pytest.raises(ValueError):
        pt(0.0, 0.5)
    with pytest.raises(ValueError):
        pt(1.0, 1.5)


points_st = st.lists(st.tuples(st.floats(0.01, 10), st.sampled_from([0.5, 0.6, 0.7, 0.8, 0.9, 1.0])),
                     min_size=1, max_size=12)


@given(points_st)
def test_dominance_is_strict_partial_order(raw):
    ps = [pt(t, a) for t, a in raw]
    for p in ps:
        assert not dominates(p, p)
    for p, q in itertools.product(ps, ps):
        assert not (dominates(p, q) and dominates(q, p))
    for p, q, r in itertools.product(ps, ps, ps):
        if dominates(p, q) and dominates(q, r):
            assert dominates(p, r)


@given(points_st)
def test_front_is_non_dominated_and_covers(raw):
    ps = [pt(t, a) for t, a in raw]
    front = pareto_front(ps)
    assert 1 <= len(front) <= len(ps)
    for p in front:
        assert not any(dominates(q, p) for q in ps)
    for p in ps:
        assert p in front or any(dominates(q, p) for q in front)


# -- timing -----------------------------------------------------------------------------

def test_median_of_injected_durations():
    assert summarize([1, 2, 100]).median_ms == 2
    assert summarize([1, 2, 100]).spread == 100


def test_measure_time_uses_median_after_warmup():
    # (start, stop) pairs in seconds: 1, 2, 100, 3, 5 ms; warm-up runs are not clocked
    ticks = iter([0, 0.001, 1, 1.002, 2, 2.1, 3, 3.003, 4, 4.005])
    timing = measure_time(TINY, [[]], reps=5, clock=lambda: next(ticks))
    assert timing.median_ms == pytest.approx(3.0)
    assert len(timing.samples) == 5


def test_measure_time_positive_finite():
    timing = measure_time(TINY, [[]], reps=5)
    assert 0 < timing.median_ms < float("inf")


def test_measure_time_needs_reps():
    with pytest.raises(ValueError):
        measure_time(TINY, [[]], reps=4)


def test_measure_time_monotone_in_filters():
    rng = np.random.default_rng(0)
    times = []
    # two stacked convs so the gemm, not im2col, dominates
    for out in (64, 128):
        net = parse_netspec(f"input 64x16x16\nconv out={out} k=3\nconv out={out} k=3\nfc out=2")
        times.append(min(measure_time(net, init_params(net, rng), reps=10).median_ms
                         for _ in range(3)))
    assert times[1] > times[0]


# -- transforms ------------------------------------------------------------------------

def test_pool_transform_makes_windows_disjoint():
    net = parse_netspec("input 1x8x8\nconv out=4 k=3\nmaxpool k=2 s=1\nfc out=2")
    out = apply_transform(net, Transform("pool"))
    assert out.layers[1].stride == 2
    assert apply_transform(out, Transform("pool")) is None


def test_scale_rounds_up():
    net = parse_netspec("input 1x8x8\nconv out=8 k=3\nconv out=4 k=3\nfc out=2")
    assert apply_transform(net, Transform("scale", 0)).layers[0].out == 6
    assert apply_transform(net, Transform("scale", 1)).layers[1].out == 3


def test_scale_stops_at_one():
    net = parse_netspec("input 1x8x8\nconv out=1 k=3\nfc out=2")
    assert apply_transform(net, Transform("scale", 0)) is None


def test_remove_keeps_only_conv_and_head():
    net = parse_netspec("input 1x8x8\nconv out=4 k=3\nrelu\nfc out=2\nsoftmax")
    assert [t for t, _ in transforms(net, names=["remove"])] == []


def test_remove_drops_following_activation():
    net = parse_netspec("input 1x8x8\nconv out=4 k=3\nrelu\nconv out=4 k=3\nprelu\nfc out=2")
    out = apply_transform(net, Transform("remove", 2))
    assert [layer.kind for layer in out.layers] == ["conv", "relu", "fc"]


def test_prelu_targets_first_activation():
    net = parse_netspec("input 1x8x8\nconv out=4 k=3\nrelu\nconv out=4 k=3\nrelu\nfc out=2")
    (t, out), = transforms(net, names=["prelu"])
    assert t == Transform("prelu", 1)
    assert [layer.kind for layer in out.layers][1:4] == ["prelu", "conv", "relu"]


def test_extend_copies_e3():
    net = parse_netspec("input 4x8x8\nfire s=2 e1=3 e3=5\nfc out=2")
    out = apply_transform(net, Transform("extend", 0))
    assert out.layers[0].kind == "extended_fire" and out.layers[0].e5 == 5


def test_shrink_input_with_floor():
    net = parse_netspec("input 1x24x24\nconv out=2 k=3\nfc out=2")
    out = apply_transform(net, Transform("shrink"))
    assert out.input_shape == (1, 20, 20)
    again = apply_transform(apply_transform(out, Transform("shrink")), Transform("shrink"))
    assert again is None or again.input_shape == (1, 16, 16)
    floor = parse_netspec("input 1x16x16\nconv out=2 k=3\nfc out=2")
    assert apply_transform(floor, Transform("shrink")) is None


def test_every_transform_output_validates():
    base = parse_netspec("input 3x24x24\nconv out=8 k=3\nrelu\nmaxpool k=3 s=1\n"
                         "fire s=4 e1=4 e3=4\nmaxpool k=2 s=2\nfire s=4 e1=4 e3=4\nfc out=2\nsoftmax")
    cands = transforms(base)
    assert {t.name for t, _ in cands} >= {"shrink", "pool", "remove", "scale", "prelu", "extend"}
    for t, spec in cands:
        assert parse_netspec(format_netspec(spec)) == spec
        if t.name in ("remove", "scale"):
            assert count_params(spec) < count_params(base)


# -- search ----------------------------------------------------------------------------

def stub_evaluator(table=None):
    """Time from the MAC count; accuracy from a table keyed by netspec (default 1.0)."""
    from bitconv.netgraph import estimate_macs

    def ev(spec):
        return 1e-4 * estimate_macs(spec) + 0.01, (table or {}).get(format_netspec(spec), 1.0)
    return ev


def test_budget_one_feasible_base():
    res = search(TOY, None, SearchConfig(threshold_ms=1e9, budget=1), evaluator=stub_evaluator())
    assert len(res.points) == 1 and [p.spec for p in res.front] == [TOY]


def test_budget_one_infeasible_base():
    res = search(TOY, None, SearchConfig(threshold_ms=1e-6, budget=1), evaluator=stub_evaluator())
    assert res.front == [] and len(res.ledger) == 1 and not res.ledger[0].feasible


def enumerate_space(base, cfg):
    seen = {format_netspec(base): base}
    todo = [base]
    while todo:
        spec = todo.pop()
        for _, child in transforms(spec, cfg):
            key = format_netspec(child)
            if key not in seen:
                seen[key] = child
                todo.append(child)
    return list(seen.values())


def exhaustive_front(specs, evaluator, cfg):
    pts = [ParetoPoint(s, *evaluator(s)) for s in specs]
    return {format_netspec(p.spec) for p in pareto_front(pts, cfg.band) if p.time_ms <= cfg.threshold_ms}


def test_toy_space_has_six_specs():
    specs = enumerate_space(TOY, SearchConfig(**TOY_CFG))
    assert len(specs) == 6


@given(st.lists(st.sampled_from([0.5, 0.75, 0.9, 1.0]), min_size=6, max_size=6),
       st.floats(0.5, 10.0))
def test_search_postconditions(accs, threshold):
    cfg = SearchConfig(threshold_ms=threshold, budget=10, **TOY_CFG)
    specs = enumerate_space(TOY, cfg)
    table = {format_netspec(s): a for s, a in zip(specs, accs)}
    res = search(TOY, None, cfg, evaluator=stub_evaluator(table))
    assert len(res.front) <= len(res.points) <= cfg.budget
    for p in res.front:
        assert p.time_ms <= threshold
        assert not any(dominates(q, p) for q in res.front)
        assert not any(dominates(q, p) for q in res.points)
        assert replay(TOY, p.lineage, cfg) == p.spec
    # incremental front equals the batch front over everything evaluated
    batch = {p.id for p in pareto_front(res.points) if p.time_ms <= threshold}
    assert {p.id for p in res.front} == batch
    assert [r.candidate_id for r in res.ledger] == list(range(len(res.points)))


def test_toy_search_matches_exhaustive_with_stub():
    cfg = SearchConfig(threshold_ms=1e9, budget=10, **TOY_CFG)
    ev = stub_evaluator()
    res = search(TOY, None, cfg, evaluator=ev)
    got = {format_netspec(p.spec) for p in res.front}
    assert got == exhaustive_front(enumerate_space(TOY, cfg), ev, cfg)


def test_front_member_behind_dominated_parent_is_found():
    # the only parents of the fastest spec are made slow, so they are dominated
    # before expansion; leftover budget must still reach it
    cfg = SearchConfig(threshold_ms=1e9, budget=10, **TOY_CFG)
    specs = {" ".join(str(layer.out) for layer in s.layers if layer.kind == "conv"): s
             for s in enumerate_space(TOY, cfg)}
    slow = {format_netspec(specs["6"]), format_netspec(specs["5 4"])}
    fastest = format_netspec(specs["5"])
    base_ev = stub_evaluator()

    def ev(spec):
        t, a = base_ev(spec)
        key = format_netspec(spec)
        return (50.0 if key in slow else 0.001 if key == fastest else t), a
    res = search(TOY, None, cfg, evaluator=ev)
    assert fastest in {format_netspec(p.spec) for p in res.front}
    assert {format_netspec(p.spec) for p in res.front} == exhaustive_front(list(specs.values()), ev, cfg)


def test_remedy_runs_after_accuracy_loss():
    base = parse_netspec("input 2x8x8\nconv out=4 k=3\nrelu\nfire s=2 e1=2 e3=2\nfc out=2\nsoftmax")
    cfg = SearchConfig(threshold_ms=1e9, budget=30, transforms=("scale", "prelu", "extend"))

    def ev(spec):
        kinds = [layer.kind for layer in spec.layers]
        acc = 1.0 if spec == base else 0.8 + 0.05 * ("prelu" in kinds) + 0.05 * ("extended_fire" in kinds)
        return 1.0, acc
    res = search(base, None, cfg, evaluator=ev)
    names = [r.transform.split("@")[0] for r in res.ledger]
    assert "prelu" in names and "extend" in names
    # remedies come right after the child that lost accuracy, prelu first
    i = names.index("scale")
    assert names[i + 1:i + 3] == ["prelu", "extend"]


def test_ledger_and_front_files(tmp_path):
    cfg = SearchConfig(threshold_ms=1e9, budget=4, **TOY_CFG)
    res = search(TOY, None, cfg, evaluator=stub_evaluator())
    write_ledger(res.ledger, tmp_path / "ledger.csv")
    write_front(res.front, tmp_path / "out")
    head = (tmp_path / "ledger.csv").read_text().splitlines()[0]
    assert head == "candidate_id,parent_id,transform,params,macs,time_ms,accuracy,feasible,on_front"
    assert (tmp_path / "out" / "front.csv").read_text().startswith("name,time_ms,accuracy_pct")
    for p in res.front:
        text = (tmp_path / "out" / f"{p.name}.net").read_text()
        assert parse_netspec(text) == p.spec


def test_resize_dataset():
    ds = Dataset(np.full((2, 1, 8, 8), 0.5, np.float32), [0, 1], ["a", "b"])
    out = resize_dataset(ds, (1, 4, 4))
    assert out.images.shape == (2, 1, 4, 4) and np.allclose(out.images, 0.5)


def test_search_config_invariants():
    with pytest.raises(ValueError):
        SearchConfig(threshold_ms=0)
    with pytest.raises(ValueError):
        SearchConfig(budget=0)
