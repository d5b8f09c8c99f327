import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellfuse.eco import (bce, deployment_netlist, eco_finetune, eco_predict, eco_rank, format_candidates,
                          make_eco_sample, reachable, recall_at_support)
from cellfuse.errors import DataError
from cellfuse.generate import chain_netlist, random_netlist
from cellfuse.netlist import format_netlist, parse_netlist_text, pm_to_aig
from cellfuse.nn import ParamStore
from cellfuse.pipeline import TrainConfig

from helpers import ancestors

SMALL = dict(dim=32, blocks=1, heads=4, enc_heads=2, micro_batch=2, n_patterns=2000, max_nodes=64,
             fusion_variant="linear")


def test_bce_at_half():
    assert bce(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert bce(0.5, 0) == pytest.approx(-math.log(0.5), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_labels_match_closure_oracle(lib, seed):
    net = random_netlist(lib, 4, 14, seed=seed)
    s = make_eco_sample(net, seed, lib)
    tfi = ancestors(net, s.p)
    assert set(s.driven_labels) == set(range(len(net))) - {s.p}
    assert all(v == int(i in tfi) for i, v in s.driven_labels.items())
    assert s.p in s.removed and s.removed <= s.cone.members


def test_chain_example(lib):
    net = chain_netlist(lib, 4)
    p = net.gates[1]
    s = make_eco_sample(net, 0, lib, p=p)
    want = {i: int(i < p) for i in range(len(net)) if i != p}
    assert s.driven_labels == want


def test_disjoint_component_is_negative(lib):
    net = parse_netlist_text("INPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(x)\nOUTPUT(y)\n"
                             "x = cell(nand2_1, a, b)\ny = cell(inv_1, c)\n", lib)
    s = make_eco_sample(net, 0, lib, p="x")
    by_name = {net.names[i]: v for i, v in s.driven_labels.items()}
    assert by_name == {"a": 1, "b": 1, "c": 0, "y": 0}


def test_fanout_relation(lib):
    net = chain_netlist(lib, 4)
    p = net.gates[1]
    s = make_eco_sample(net, 0, lib, relation="fanout", p=p)
    assert {i for i, v in s.driven_labels.items() if v} == reachable(net, p, "fanout") == set(range(p + 1, len(net)))
    with pytest.raises(ValueError):
        make_eco_sample(net, 0, lib, relation="sideways")


def test_labels_invariant_to_renumbering(lib):
    net = random_netlist(lib, 4, 12, seed=5)
    lines = format_netlist(net).splitlines()
    head = [ln for ln in lines if ln.startswith(("INPUT", "OUTPUT"))]
    body = [ln for ln in lines if ln not in head]
    random.Random(0).shuffle(body)
    shuffled = parse_netlist_text("\n".join(head + body) + "\n", lib)
    root = net.names[net.gates[-3]]
    a = make_eco_sample(net, 0, lib, p=root)
    b = make_eco_sample(shuffled, 0, lib, p=root)
    assert ({net.names[i]: v for i, v in a.driven_labels.items()}
            == {shuffled.names[i]: v for i, v in b.driven_labels.items()})


def test_recall_at_support():
    labels = {0: 1, 1: 0, 2: 1, 3: 0}
    assert recall_at_support({0: 0.9, 1: 0.1, 2: 0.8, 3: 0.2}, labels) == 1.0
    assert recall_at_support({0: 0.9, 1: 0.95, 2: 0.1, 3: 0.2}, labels) == 0.5
    assert recall_at_support({1: 0.3, 3: 0.4}, labels) is None


def test_deployment_netlist_has_placeholder(lib):
    net = random_netlist(lib, 4, 12, seed=1)
    target = net.names[net.gates[-1]]
    dep = deployment_netlist(net, target)
    assert dep.kinds[dep.index[target]] == "PI"
    new = deployment_netlist(net, "brand_new")
    assert len(new) == len(net) + 1 and new.kinds[-1] == "PI"


@pytest.fixture(scope="module")
def cfg():
    return TrainConfig(lr=1e-3, epochs=2, batch=2, **SMALL)


def test_rank_sorted_bounded_and_deterministic(lib, cfg):
    net = random_netlist(lib, 4, 12, seed=2)
    target = net.names[net.gates[-2]]
    golden = pm_to_aig(net, lib)
    store = ParamStore(0)
    rows = eco_rank(net, golden, target, store, cfg, lib, seed=1)
    dep = deployment_netlist(net, target)
    assert {r[0] for r in rows} == set(dep.names) - {target}
    assert all(0.0 <= p <= 1.0 for _, p in rows)
    assert rows == sorted(rows, key=lambda r: (-r[1], r[0]))
    assert rows == eco_rank(net, golden, target, store, cfg, lib, seed=1)
    assert eco_rank(net, golden, target, store, cfg, lib, top_k=3, seed=1) == rows[:3]
    text = format_candidates(rows[:2])
    assert text.splitlines()[0] == "node_id,probability" and len(text.splitlines()) == 3


def test_rank_errors(lib, cfg):
    net = random_netlist(lib, 4, 12, seed=2)
    golden = pm_to_aig(net, lib)
    with pytest.raises(DataError, match="unknown target"):
        eco_rank(net, golden, "nowhere", ParamStore(0), cfg, lib)
    with pytest.raises(DataError, match="top_k"):
        eco_rank(net, golden, net.names[-1], ParamStore(0), cfg, lib, top_k=0)


def test_finetune_runs_and_predicts(lib, cfg):
    samples = [make_eco_sample(random_netlist(lib, 4, 10, seed=s), s, lib, name=f"e{s}") for s in range(3)]
    res = eco_finetune(samples, ParamStore(0), cfg, lib)
    assert len(res.history) == 2 and all(np.isfinite(h["loss"]) for h in res.history)
    probs = eco_predict(res.store, cfg, samples[0], lib)
    assert set(probs) == set(samples[0].candidates)
    assert all(0.0 <= q <= 1.0 for q in probs.values())
    with pytest.raises(DataError):
        eco_finetune([], ParamStore(0), cfg, lib)
