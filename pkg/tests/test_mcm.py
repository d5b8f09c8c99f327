from collections import deque

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from cellfuse.encoders import EncoderConfig, Embedding, encode_aig, encode_pm
from cellfuse.errors import DataError
from cellfuse.generate import random_netlist
from cellfuse.mcm import (MASK_TOKEN, MaskPlan, assemble_tokens, fuse, loss_stage2, mcm_l1, metric_pe,
                          metric_re, n_selected, plan_masks, prob_l1)
from cellfuse.netlist import pm_to_aig
from cellfuse.nn import ParamStore, adam_step

GRID_THETA = (0.01, 0.05, 0.10, 0.20)
GRID_SIZES = (20, 100, 1000)
# round(theta * n), clamped to 1
EXPECTED = {20: (1, 1, 2, 4), 100: (1, 5, 10, 20), 1000: (10, 50, 100, 200)}


def _graph(lib, size, seed=0):
    return random_netlist(lib, 8, size - 8, seed=seed)


def _khop_oracle(circuit, p, k):
    seen, frontier = {p}, {p}
    for _ in range(k):
        frontier = {j for i in frontier for j in circuit.fanins[i]} - seen
        seen |= frontier
    return seen


def test_selected_count_worked_example():
    assert n_selected(0.05, 100) == 5


def test_selected_clamp():
    assert n_selected(0.001, 100) == 1


@pytest.mark.parametrize("k", [4, 6])
@pytest.mark.parametrize("size", GRID_SIZES)
def test_plan_grid(lib, size, k):
    net = _graph(lib, size)
    assert len(net) == size
    for theta, want in zip(GRID_THETA, EXPECTED[size]):
        plan = plan_masks(net, theta, k, seed=size + k)
        assert len(plan.selected) == len(set(plan.selected)) == want
        union = set()
        for p in plan.selected:
            union |= _khop_oracle(net, p, k)
        assert plan.masked == union
        assert set(plan.selected) <= plan.masked


def test_plan_deterministic_and_seed_sensitive(lib):
    net = _graph(lib, 100)
    assert plan_masks(net, 0.1, 4, 3) == plan_masks(net, 0.1, 4, 3)
    assert any(plan_masks(net, 0.1, 4, 3).selected != plan_masks(net, 0.1, 4, s).selected for s in range(4, 9))


def test_plan_errors(lib):
    from cellfuse.netlist import PmNetlist
    with pytest.raises(DataError):
        plan_masks(PmNetlist([], [], [], []), 0.05, 4, 0)
    with pytest.raises(ValueError):
        plan_masks(_graph(lib, 20), 0.0, 4, 0)
    with pytest.raises(ValueError):
        plan_masks(_graph(lib, 20), 0.1, 0, 0)


def _embs(lib, seed=0):
    net = random_netlist(lib, 4, 12, seed=seed)
    aig = pm_to_aig(net, lib)
    store = ParamStore(seed)
    cfg = EncoderConfig()
    return net, aig, store, encode_pm(net, lib, store, cfg, seed), encode_aig(aig, store, cfg, seed)


def test_empty_plan_is_plain_concatenation(lib):
    net, aig, store, pm, ae = _embs(lib)
    seq = assemble_tokens(ae, pm, MaskPlan.empty(), store)
    assert torch.equal(seq.tokens, torch.cat([ae.H, pm.H]))
    assert len(seq) == len(net) + len(aig) and not seq.masked.any()
    assert (seq.view_tags[:len(aig)] == 0).all() and (seq.view_tags[len(aig):] == 1).all()


def test_all_masked_pm_view(lib):
    net, aig, store, pm, ae = _embs(lib)
    seq = assemble_tokens(ae, pm, MaskPlan.from_nodes(range(len(net))), store)
    hm = store[MASK_TOKEN]
    assert all(torch.equal(row, hm) for row in seq.view("pm")[:, 128:])
    assert torch.equal(seq.view("pm")[:, :128], pm.hs)
    assert torch.equal(seq.view("aig"), ae.H)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), theta=st.sampled_from(GRID_THETA), k=st.integers(1, 6),
       view=st.sampled_from(["pm", "aig"]))
def test_assemble_touches_only_masked_hf(lib, seed, theta, k, view):
    net, aig, store, pm, ae = _embs(lib, seed)
    plan = plan_masks(net if view == "pm" else aig, theta, k, seed, view)
    seq = assemble_tokens(ae, pm, plan, store)
    tgt, other = (pm, ae) if view == "pm" else (ae, pm)
    ids = plan.masked_ids
    rest = np.setdiff1d(np.arange(len(tgt)), ids)
    toks = seq.view(view)
    assert torch.equal(toks[:, :128], tgt.hs)
    assert torch.equal(toks[rest], tgt.H[rest])
    assert all(torch.equal(toks[i, 128:], store[MASK_TOKEN]) for i in ids)
    assert torch.equal(seq.view("aig" if view == "pm" else "pm"), other.H)
    assert seq.masked.sum() == len(ids)


def test_plan_graph_mismatch(lib):
    net, aig, store, pm, ae = _embs(lib)
    with pytest.raises(DataError):
        assemble_tokens(ae, pm, MaskPlan.from_nodes([len(net) + 3]), store)


def test_fuse_identity_with_zero_residuals(lib):
    net, aig, store, pm, ae = _embs(lib)
    seq = assemble_tokens(ae, pm, plan_masks(net, 0.1, 2, 0), store)
    fuse(seq, store, blocks=2, heads=8)
    for n in store.names():
        if ".attn.o." in n or ".ff.1." in n:
            store.set(n, np.zeros(store[n].shape))
    out = fuse(seq, store, blocks=2, heads=8)
    assert len(out) == len(seq)
    assert torch.equal(out.tokens, seq.tokens)


def test_stage1_constant_predictor_l1():
    assert float(prob_l1(torch.full((2,), 0.5, dtype=torch.float64), [0.25, 0.75])) == 0.25


def test_mcm_l1_two_masked_nodes_scalar_recomputation():
    rng = np.random.default_rng(0)
    n, d = 5, 4
    target = Embedding(torch.from_numpy(rng.normal(size=(n, d))), torch.from_numpy(rng.normal(size=(n, d))))
    refined_tokens = torch.from_numpy(rng.normal(size=(n, 2 * d)))
    from cellfuse.mcm import TokenSequence
    seq = TokenSequence(refined_tokens, np.ones(n, np.int8), np.arange(n), np.zeros(n, bool), 0, n)
    plan = MaskPlan.from_nodes([1, 3])
    total = 0.0
    for i in (1, 3):
        row = 0.0
        full = list(target.hs[i].tolist()) + list(target.hf[i].tolist())
        for c in range(2 * d):
            row += abs(float(refined_tokens[i, c]) - full[c])
        total += row / (2 * d)
    assert abs(float(mcm_l1(seq, target, plan)) - total / 2) < 1e-6


def test_loss_stage2_weights(lib):
    net, aig, store, pm, ae = _embs(lib)
    plan = plan_masks(net, 0.2, 2, 1)
    seq = assemble_tokens(ae, pm, plan, store)
    labels = {"pm": np.full(len(net), 0.3), "aig": np.full(len(aig), 0.6)}
    # refined = target on masked nodes and no prob term -> zero loss
    perfect = seq.with_tokens(torch.cat([ae.H, pm.H]))
    assert float(loss_stage2(perfect, pm, labels, plan, store, {"w_prob": 0, "w_mcm": 1}).detach()) == 0.0
    out = fuse(seq, store, blocks=1)
    only_prob = loss_stage2(out, pm, labels, plan, store, {"w_prob": 1, "w_mcm": 0})
    both = loss_stage2(out, pm, labels, plan, store, {"w_prob": 1, "w_mcm": 1})
    assert float((both - only_prob).detach()) == pytest.approx(float(mcm_l1(out, pm, plan).detach()), abs=1e-6)


def test_mask_token_gradient_nonzero(lib):
    net, aig, store, pm, ae = _embs(lib)
    plan = plan_masks(net, 0.1, 2, 2)
    out = fuse(assemble_tokens(ae.detach(), pm.detach(), plan, store), store, blocks=1)
    loss = loss_stage2(out, pm.detach(), {"pm": np.zeros(len(net)), "aig": np.zeros(len(aig))}, plan, store)
    g = store.grads_of(loss)
    assert g[MASK_TOKEN].abs().sum() > 0


def test_refined_masked_hf_moves_away_from_hm_after_a_step(lib):
    net, aig, store, pm, ae = _embs(lib)
    plan = plan_masks(net, 0.1, 2, 2)
    labels = {"pm": np.zeros(len(net)), "aig": np.zeros(len(aig))}
    out = fuse(assemble_tokens(ae.detach(), pm.detach(), plan, store), store, blocks=1)
    adam_step(store, store.grads_of(loss_stage2(out, pm.detach(), labels, plan, store)), lr=1e-3)
    out = fuse(assemble_tokens(ae.detach(), pm.detach(), plan, store), store, blocks=1)
    i = plan.masked_ids[0]
    assert not torch.allclose(out.view("pm")[i, 128:], store[MASK_TOKEN])


def test_pe_examples():
    assert abs(metric_pe({0: 0.4, 1: 0.35}, {0: 0.5, 1: 0.25}) - 0.1) < 1e-9
    assert metric_pe({0: 0.2, 1: 0.9}, {0: 0.2, 1: 0.9}) == 0.0
    assert metric_pe([0.1, 0.7], [0.3, 0.2]) == metric_pe([0.3, 0.2], [0.1, 0.7])
    with pytest.raises(DataError):
        metric_pe({0: 0.1}, {1: 0.1})


def test_re_examples():
    t = np.random.default_rng(1).normal(size=(3, 128))
    assert metric_re(t, t, [0, 2]) == 0.0
    shifted = t.copy()
    shifted[1] += 0.01
    assert abs(metric_re(shifted, t, MaskPlan.from_nodes([1])) - 0.01) < 1e-9
    r = np.random.default_rng(2).normal(size=(3, 128))
    assert metric_re(r, t, [2, 0, 1]) == metric_re(r, t, [0, 1, 2])
    with pytest.raises(DataError):
        metric_re(r, t, [])
