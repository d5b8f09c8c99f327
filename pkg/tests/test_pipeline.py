import json

import numpy as np
import pytest

from cellfuse.errors import CheckpointError, DataError
from cellfuse.nn import load_checkpoint
from cellfuse.nn.params import init_array
from cellfuse.pipeline import (REPORT_KEYS, TrainConfig, build_dataset, config_from_dict, evaluate,
                               generate_sources, load_config, load_dataset, resolve_config, samples_in_memory,
                               save_result, split_of, train_stage1, train_stage2)
from cellfuse.pipeline.config import parse_overrides
from cellfuse.pipeline.dataset import derive_seed

SMALL = dict(dim=32, blocks=1, heads=4, enc_heads=2, micro_batch=2, n_patterns=2000, max_nodes=64)


@pytest.fixture(scope="module")
def toy(lib):
    sources = generate_sources(lib, 4, 11, max_cells=12)
    return sources, samples_in_memory(sources, lib, TrainConfig(**SMALL))


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.theta, cfg.k, cfg.w_prob, cfg.w_mcm) == (0.05, 4, 1.0, 1.0)
    assert (cfg.lr, cfg.batch, cfg.epochs, cfg.n_patterns, cfg.max_nodes) == (1e-4, 128, 60, 15000, 4096)


def test_config_errors(tmp_path):
    with pytest.raises(DataError, match="unknown config key"):
        config_from_dict({"thetta": 0.1})
    with pytest.raises(DataError, match="max_nodes"):
        TrainConfig(max_nodes=5000)
    with pytest.raises(DataError, match="integer"):
        config_from_dict({"k": "four"})
    bad = tmp_path / "c.json"
    bad.write_text('{\n  "k": 4,\n  oops\n}\n')
    with pytest.raises(DataError, match=r"c\.json:3:3"):
        load_config(bad)
    with pytest.raises(DataError, match="key=value"):
        parse_overrides(["theta"])


def test_config_layering(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"k": 6, "theta": 0.2, "lr": 0.01}))
    cfg = resolve_config(path, ["theta=0.05"], k=5)
    assert (cfg.k, cfg.theta, cfg.lr) == (5, 0.05, 0.01)
    assert resolve_config(path, ["k=4"], k=5).k == 4


def test_cosine_schedule():
    cfg = TrainConfig(lr=1.0, lr_schedule="cosine")
    assert cfg.lr_at(0, 10) == 1.0 and cfg.lr_at(5, 10) == pytest.approx(0.5)
    assert TrainConfig(lr=0.3).lr_at(7, 10) == 0.3
    with pytest.raises(DataError):
        TrainConfig(lr_schedule="step")


def test_split_is_stable():
    assert split_of("toy_0003") == split_of("toy_0003")
    fracs = np.mean([split_of(f"c{i}") == "val" for i in range(2000)])
    assert 0.15 < fracs < 0.25
    assert derive_seed(1, "a") == derive_seed(1, "a") != derive_seed(1, "b")


def test_dataset_determinism_and_reload(lib, tmp_path, toy):
    sources, in_mem = toy
    cfg = TrainConfig(**SMALL)
    bad = tmp_path / "bad.bench"
    bad.write_text("INPUT(a)\ny = cell(nope, a)\n")
    m1 = build_dataset([bad], lib, cfg, tmp_path / "d1", sources=sources)
    build_dataset([bad], lib, cfg, tmp_path / "d2", sources=sources)
    files1 = sorted(p.relative_to(tmp_path / "d1") for p in (tmp_path / "d1").rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(tmp_path / "d2") for p in (tmp_path / "d2").rglob("*") if p.is_file())
    assert files1 == files2
    for rel in files1:
        assert (tmp_path / "d1" / rel).read_bytes() == (tmp_path / "d2" / rel).read_bytes()
    assert len(m1["skipped_inputs"]) == 1 and "nope" in m1["skipped_inputs"][0]["error"]
    loaded = load_dataset(tmp_path / "d1", lib)
    assert [s.name for s in loaded] == [s.name for s in in_mem]
    for a, b in zip(loaded, in_mem):
        assert a.pm.signature() == b.pm.signature() and a.aig.names == b.aig.names
        assert np.array_equal(a.labels_pm.prob, b.labels_pm.prob)
        assert np.array_equal(a.labels_aig.prob, b.labels_aig.prob)


def test_no_surviving_samples(lib, tmp_path):
    with pytest.raises(DataError, match="no samples"):
        build_dataset([], lib, TrainConfig(**SMALL), tmp_path / "empty")


def test_zero_lr_leaves_parameters_at_init(lib, toy):
    _, samples = toy
    res = train_stage1(samples, TrainConfig(lr=0.0, epochs=2, batch=2, **SMALL), lib, eval_every=0)
    store = res.store
    for name in store.names():
        p = store[name]
        init = {"pm.enc.pi_hf": "normal", "aig.enc.pi_hf": "normal", "pm.enc.pin": "normal",
                "aig.enc.pin": "normal"}.get(name)
        if init is None:
            continue
        assert np.array_equal(store.numpy(name), init_array(store.seed, name, tuple(p.shape), init).astype(np.float32))
    again = train_stage1(samples, TrainConfig(lr=0.0, epochs=1, batch=4, **SMALL), lib, eval_every=0).store
    for name in store.names():
        assert np.array_equal(store.numpy(name), again.numpy(name))


def test_resume_matches_uninterrupted(lib, tmp_path, toy):
    _, samples = toy
    full = train_stage1(samples, TrainConfig(lr=1e-3, epochs=4, batch=2, **SMALL), lib, eval_every=0)
    half = train_stage1(samples, TrainConfig(lr=1e-3, epochs=2, batch=2, **SMALL), lib, eval_every=0)
    ck = tmp_path / "half.ckpt"
    save_result(half, ck, best=False)
    resumed = train_stage1(samples, TrainConfig(lr=1e-3, epochs=4, batch=2, **SMALL), lib, resume=str(ck),
                           eval_every=0)
    for name in full.store.names():
        assert np.array_equal(full.store.numpy(name), resumed.store.numpy(name)), name


def test_threads_are_bit_identical(lib, toy):
    _, samples = toy
    cfg = TrainConfig(lr=1e-3, epochs=2, batch=4, **SMALL)
    a = train_stage1(samples, cfg, lib, threads=1, eval_every=0).store
    b = train_stage1(samples, cfg, lib, threads=3, eval_every=0).store
    assert a.state_dict().keys() == b.state_dict().keys()
    assert all(np.array_equal(a.numpy(n), b.numpy(n)) for n in a.names())


def test_stage2_freezes_other_view_and_checks_lineage(lib, tmp_path, toy):
    _, samples = toy
    s1 = train_stage1(samples, TrainConfig(lr=1e-3, epochs=1, batch=4, **SMALL), lib, eval_every=0)
    ck = tmp_path / "s1.ckpt"
    save_result(s1, ck)
    before = load_checkpoint(ck)[0].subset_bytes(["aig."])
    cfg2 = TrainConfig(stage=2, lr=1e-3, epochs=2, batch=4, **SMALL)
    s2 = train_stage2(samples, str(ck), cfg2, lib, eval_every=0)
    assert s2.store.subset_bytes(["aig."]) == before
    assert s2.store.subset_bytes(["pm.enc."]) != load_checkpoint(ck)[0].subset_bytes(["pm.enc."])
    ck2 = tmp_path / "s2.ckpt"
    save_result(s2, ck2)
    with pytest.raises(CheckpointError, match="stage-1"):
        train_stage2(samples, str(ck2), cfg2, lib, eval_every=0)
    with pytest.raises(CheckpointError, match="mismatch"):
        train_stage2(samples, str(ck), TrainConfig(stage=2, aggregator="conv_sum", **dict(SMALL)), lib)
    rep = evaluate(samples, s2.store, cfg2, lib, 2)
    assert tuple(rep) == REPORT_KEYS and rep["re"] is not None and rep["n_masked"] > 0
    rep1 = evaluate(samples, s1.store, TrainConfig(**SMALL), lib, 1)
    assert rep1["re"] is None and rep1["n_nodes"] == sum(len(s.pm) for s in samples)
