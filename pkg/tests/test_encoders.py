import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from cellfuse.encoders import (AGGREGATORS, EncoderConfig, encode, encode_aig, encode_pm, merge_plans, prepare,
                               encode_plan, pi_structural_init, readout_prob)
from cellfuse.errors import NetlistError
from cellfuse.generate import random_netlist
from cellfuse.netlist import PI, PmNetlist, parse_netlist_text, pm_to_aig
from cellfuse.nn import ParamStore

from helpers import ancestors


def _pm(text, lib):
    return parse_netlist_text(text, lib)


def _by_name(circuit, emb):
    return {circuit.names[i]: (emb.hs[i].detach().numpy(), emb.hf[i].detach().numpy()) for i in range(len(circuit))}


def test_single_pi_is_its_initialisation(lib):
    net = PmNetlist(["a"], [PI], [()], [0])
    store = ParamStore(0)
    emb = encode_pm(net, lib, store, EncoderConfig(), pass_seed=5)
    assert np.array_equal(emb.hs[0].numpy(), pi_structural_init(["a"], 5)[0])
    assert torch.equal(emb.hf[0], store["pm.enc.pi_hf"])
    # no aggregation parameters were created
    assert not any(".attn" in n or ".update" in n for n in store.names())


def test_isomorphic_netlists_match_node_for_node(lib):
    a = _pm("INPUT(x)\nINPUT(y)\nINPUT(z)\nOUTPUT(o)\nt = cell(nand2_1, x, y)\no = cell(mux2_1, t, y, z)\n", lib)
    b = _pm("INPUT(z)\nINPUT(x)\nINPUT(y)\nOUTPUT(o)\no = cell(mux2_1, u, y, z)\nu = cell(nand2_1, x, y)\n", lib)
    rename = {"u": "t"}
    for agg in AGGREGATORS:
        cfg = EncoderConfig(agg)
        store = ParamStore(1)
        ea, eb = _by_name(a, encode_pm(a, lib, store, cfg, 3)), _by_name(b, encode_pm(b, lib, store, cfg, 3))
        for name, (hs, hf) in eb.items():
            hs2, hf2 = ea[rename.get(name, name)]
            np.testing.assert_allclose(hs, hs2, atol=1e-6)
            np.testing.assert_allclose(hf, hf2, atol=1e-6)


def _swap_pair(lib, cell, pins_a, pins_b):
    head = "INPUT(p)\nINPUT(q)\nINPUT(r)\nOUTPUT(o)\n"
    return (_pm(head + f"o = cell({cell}, {', '.join(pins_a)})\n", lib),
            _pm(head + f"o = cell({cell}, {', '.join(pins_b)})\n", lib))


@pytest.mark.parametrize("agg", ["attention", "dg2"])
def test_symmetric_attention_ignores_fanin_order_without_pins(lib, agg):
    a, b = _swap_pair(lib, "mux2_1", ["p", "q", "r"], ["r", "p", "q"])
    store = ParamStore(2)
    off = EncoderConfig(agg, pin_encoding=False)
    ha = encode_pm(a, lib, store, off, 0).hf[a.index["o"]]
    hb = encode_pm(b, lib, store, off, 0).hf[b.index["o"]]
    torch.testing.assert_close(ha, hb, atol=1e-6, rtol=0)
    on = EncoderConfig(agg, pin_encoding=True)
    ha = encode_pm(a, lib, store, on, 0).hf[a.index["o"]]
    hb = encode_pm(b, lib, store, on, 0).hf[b.index["o"]]
    assert (ha - hb).abs().max() > 1e-4


def test_pins_unused_for_symmetric_cells(lib):
    a, b = _swap_pair(lib, "and3_1", ["p", "q", "r"], ["q", "r", "p"])
    store = ParamStore(2)
    cfg = EncoderConfig("dg2", pin_encoding=True)
    torch.testing.assert_close(encode_pm(a, lib, store, cfg, 0).hf[3], encode_pm(b, lib, store, cfg, 0).hf[3],
                               atol=1e-6, rtol=0)


def test_conv_sum_is_permutation_invariant(lib):
    a, b = _swap_pair(lib, "a21oi_1", ["p", "q", "r"], ["r", "q", "p"])
    store = ParamStore(4)
    cfg = EncoderConfig("conv_sum", pin_encoding=True)
    torch.testing.assert_close(encode_pm(a, lib, store, cfg, 0).hf[3], encode_pm(b, lib, store, cfg, 0).hf[3],
                               atol=1e-6, rtol=0)


def test_aig_single_and_aggregates_two_predecessors(lib):
    aig = pm_to_aig(_pm("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = cell(and2_1, a, b)\n", lib), lib)
    plan = prepare(aig)
    assert len(plan.levels) == 1
    assert plan.levels[0].mask.sum() == 2
    assert plan.feats.shape == (3, 3)


def test_not_chain_has_three_sequential_levels(lib):
    from cellfuse.netlist import Aig, NOT
    aig = Aig(["a", "n1", "n2", "n3"], [PI, NOT, NOT, NOT], [(), (0,), (1,), (2,)], [3])
    plan = prepare(aig)
    assert [lv.ids.tolist() for lv in plan.levels] == [[1], [2], [3]]
    emb = encode_aig(aig, ParamStore(0), EncoderConfig())
    assert torch.isfinite(emb.hf).all()


def test_encode_aig_rejects_pm(lib):
    with pytest.raises(NetlistError):
        encode_aig(_pm("INPUT(a)\nOUTPUT(y)\ny = cell(inv_1, a)\n", lib), ParamStore(0), EncoderConfig())


def test_merged_duplicate_leaves_aig_embeddings_unchanged(lib):
    base = "INPUT(a)\nINPUT(b)\nOUTPUT(y)\nt = cell(nand2_1, a, b)\ny = cell(xor2_1, t, b)\n"
    dup = base + "OUTPUT(y2)\nt2 = cell(nand2_1, b, a)\ny2 = cell(inv_1, t2)\n"
    single = pm_to_aig(_pm(base + "OUTPUT(y2)\ny2 = cell(inv_1, t)\n", lib), lib)
    merged = pm_to_aig(_pm(dup, lib), lib)
    assert len(single) == len(merged)
    store = ParamStore(3)
    e1, e2 = encode_aig(single, store, EncoderConfig()), encode_aig(merged, store, EncoderConfig())
    assert torch.equal(e1.hf, e2.hf) and torch.equal(e1.hs, e2.hs)


def test_readout_range_and_zero_head():
    store = ParamStore(0)
    hf = torch.randn(50, 128) * 10
    p = readout_prob(store, hf)
    assert ((p >= 0) & (p <= 1)).all()
    for n in store.names():
        store.set(n, np.zeros(store[n].shape))
    assert torch.equal(readout_prob(store, hf), torch.full((50,), 0.5))


def test_unknown_cell_and_missing_library(lib, mini_lib):
    net = _pm("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = cell(mux2_1, a, b, a)\n", lib)
    with pytest.raises(NetlistError, match="unknown cell"):
        prepare(net, mini_lib)
    with pytest.raises(ValueError, match="library"):
        prepare(net, None)


def test_merge_plans_matches_separate_encoding(lib):
    nets = [random_netlist(lib, 4, 10, seed=s) for s in range(3)]
    store = ParamStore(7)
    cfg = EncoderConfig("dg2")
    plans = [prepare(n, lib) for n in nets]
    merged = encode_plan(store, merge_plans(plans), cfg, "pm.enc", [10, 11, 12])
    start = 0
    for k, (net, plan) in enumerate(zip(nets, plans)):
        alone = encode_plan(store, plan, cfg, "pm.enc", 10 + k)
        part = merged.slice(start, plan.n)
        torch.testing.assert_close(part.hf, alone.hf, atol=1e-5, rtol=0)
        torch.testing.assert_close(part.hs, alone.hs, atol=1e-5, rtol=0)
        start += plan.n


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), agg=st.sampled_from(AGGREGATORS), data=st.data())
def test_embedding_depends_only_on_fanin(lib, seed, agg, data):
    net = random_netlist(lib, 4, 14, seed=seed)
    node = data.draw(st.sampled_from(net.gates))
    outside = [i for i in net.gates if i != node and i not in ancestors(net, node)]
    if not outside:
        return
    victim = data.draw(st.sampled_from(outside))
    arity = len(net.fanins[victim])
    others = [c for c in lib.names if lib[c].arity == arity and c != net.kinds[victim]]
    kinds = list(net.kinds)
    kinds[victim] = others[0]
    mutated = PmNetlist(net.names, kinds, net.fanins, net.outputs)
    store = ParamStore(seed)
    cfg = EncoderConfig(agg)
    e1, e2 = encode_pm(net, lib, store, cfg, seed), encode_pm(mutated, lib, store, cfg, seed)
    assert torch.equal(e1.hf[node], e2.hf[node]) and torch.equal(e1.hs[node], e2.hs[node])
    assert torch.isfinite(e1.hf).all() and torch.isfinite(e1.hs).all()


def test_stage1_overfit_one_tiny_circuit(lib):
    from cellfuse.pipeline import TrainConfig, samples_in_memory, train_stage1
    from cellfuse.pipeline.train import items_of
    from cellfuse.model import stage1_predict
    net = _pm("INPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(y)\nt = cell(nand2_1, a, b)\nu = cell(xor2_1, t, c)\n"
              "y = cell(mux2_1, u, a, c)\n", lib)
    cfg = TrainConfig(lr=1e-3, epochs=150, batch=1, max_nodes=64)
    samples = samples_in_memory([("tiny", net)], lib, cfg)
    res = train_stage1(samples, cfg, lib, eval_every=0)
    (pm_prob, _), = stage1_predict(res.store, cfg.model(), items_of(samples, lib), [123])
    assert np.abs(pm_prob - samples[0].labels_pm.prob).max() < 0.05
