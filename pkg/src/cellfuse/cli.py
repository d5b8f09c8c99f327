"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Logs go to stderr as one JSON object per line; artifacts are written only
to the paths given with ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import CellfuseError, DataError, NumericalError

log = logging.getLogger("cellfuse.cli")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class JsonFormatter(logging.Formatter):
    def format(self, record):
        doc = {"event": record.getMessage(), "level": record.levelname.lower(), "logger": record.name}
        doc.update(getattr(record, "fields", None) or {})
        return json.dumps(doc, sort_keys=True, default=str)


def _setup_logging(level: str) -> None:
    root = logging.getLogger("cellfuse")
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper()))
    root.propagate = False


def _event(msg: str, **fields) -> None:
    log.info(msg, extra={"fields": fields})


# ---------------------------------------------------------------- helpers

def _lib(args):
    from .library import default_library_path, load_library
    return load_library(args.lib or default_library_path())


def _read_circuit(path, lib):
    from .netlist import parse_aiger, parse_netlist
    path = Path(path)
    return parse_aiger(path) if path.suffix in (".aag", ".aig") else parse_netlist(path, lib)


def _config(args, base=None, **explicit):
    from .pipeline import resolve_config
    cfg = resolve_config(getattr(args, "config", None), getattr(args, "override", None), base=base, **explicit)
    _event("resolved config", config=cfg.to_dict(), seed=cfg.seed)
    return cfg


def _ckpt_config(meta):
    from .pipeline import config_from_dict
    doc = dict(meta.get("config", {}))
    doc["stage"] = 1
    return config_from_dict(doc) if doc else None


def _sources(args, lib, cfg):
    """PM netlists from files plus ``--generate N`` toy circuits."""
    from .pipeline import generate_sources
    out = [(Path(p).stem, _read_circuit(p, lib)) for p in args.netlists or ()]
    if args.generate:
        out += generate_sources(lib, args.generate, cfg.seed)
    if not out:
        raise UsageError("give netlist files or --generate N")
    return out


def _write_json(path, doc) -> None:
    from .fileio import atomic_write_text
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _add_common(p, config=True, lib=True):
    if lib:
        p.add_argument("--lib", help="cell library JSON (default: bundled toy library)")
    if config:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--override", nargs="+", default=[], metavar="KEY=VALUE",
                       help="config overrides, applied last")


# ---------------------------------------------------------------- commands

def cmd_convert(args):
    from .netlist import format_aiger, parse_netlist, pm_to_aig
    from .sim import check_equivalence
    from .fileio import atomic_write_text
    lib = _lib(args)
    net = parse_netlist(args.netlist, lib)
    aig = pm_to_aig(net, lib)
    verdict = None
    if args.check != "none":
        eq = check_equivalence(net, aig, lib, args.check, args.patterns, args.seed)
        verdict = eq.summary()
        _event("equivalence", **verdict)
        if not eq:
            raise DataError(f"{args.netlist}: converted AIG differs at output {eq.failing_output}")
    atomic_write_text(args.out, format_aiger(aig))
    _event("wrote aig", path=args.out, and_nodes=sum(k == "AND" for k in aig.kinds), nodes=len(aig))
    print(json.dumps({"out": args.out, "equivalence": verdict}, sort_keys=True))


def cmd_simulate(args):
    from .sim import simulate_exhaustive, simulate_random
    lib = _lib(args)
    circuit = _read_circuit(args.netlist, lib)
    if args.exhaustive:
        res = simulate_exhaustive(circuit, lib)
    else:
        res = simulate_random(circuit, lib, args.patterns, args.seed, threads=args.threads)
    res.save(args.out)
    _event("wrote labels", path=args.out, nodes=len(circuit), patterns=res.patterns_used, seed=res.seed)


def cmd_dataset(args):
    from .pipeline import build_dataset
    lib = _lib(args)
    cfg = _config(args, seed=args.seed)
    files = list(args.netlists or ())
    if not files and not args.generate:
        raise UsageError("give netlist files or --generate N")
    sources = []
    if args.generate:
        from .pipeline import generate_sources
        sources = generate_sources(lib, args.generate, cfg.seed)
    m = build_dataset(files, lib, cfg, args.out, args.samples_per_source, sources)
    _event("wrote dataset", path=args.out, samples=len(m["samples"]), rejected=m["rejected"], splits=m["splits"])


def _load_split(data, lib, split):
    from .pipeline import load_dataset
    return list(load_dataset(data, lib, None if split == "all" else split))


def cmd_train(args):
    from .nn import load_checkpoint
    from .pipeline import save_result, train_stage1, train_stage2
    lib = _lib(args)
    cfg = _config(args, stage=args.stage)
    train = _load_split(args.data, lib, "train")
    val = _load_split(args.data, lib, "val")
    if not train:
        raise DataError(f"{args.data}: no training samples")
    if cfg.stage == 1:
        if args.init:
            raise UsageError("--init is only used with --stage 2")
        res = train_stage1(train, cfg, lib, val, args.threads, args.resume, args.eval_every)
    else:
        if not args.init and not args.resume:
            raise UsageError("stage 2 needs --init <stage-1 checkpoint> (or --resume)")
        if args.init:
            load_checkpoint(args.init)  # fail early with a data error on a bad file
        res = train_stage2(train, args.init, cfg, lib, val, args.threads, args.eval_every, args.resume)
    save_result(res, args.out, best=not args.last)
    _event("wrote checkpoint", path=args.out, stage=cfg.stage, best_epoch=res.best_epoch,
           best_metric=res.best_metric)
    if args.metrics:
        _write_json(args.metrics, {"history": res.history, "best_epoch": res.best_epoch,
                                   "best_metric": res.best_metric})


def cmd_eval(args):
    from .nn import load_checkpoint
    from .pipeline import evaluate
    from .pipeline.train import check_compatible
    lib = _lib(args)
    store, meta = load_checkpoint(args.ckpt)
    cfg = _config(args, base=_ckpt_config(meta))
    check_compatible(meta, cfg)
    stage = args.stage or int(meta.get("stage", 1))
    samples = _load_split(args.data, lib, args.split)
    if not samples:
        raise DataError(f"{args.data}: split {args.split!r} is empty")
    report = evaluate(samples, store, cfg, lib, stage, args.seed)
    _write_json(args.out, report)
    _event("wrote report", path=args.out, **report)


def _eco_cfg(args, meta=None):
    from .pipeline import config_from_dict
    base = _ckpt_config(meta or {}) or config_from_dict({})
    # Linear-attention fusion is the task default; file and overrides can still change it.
    base = config_from_dict({"fusion_variant": "linear"}, base)
    return _config(args, base=base)


def _eco_samples(args, lib, cfg):
    from .eco import make_eco_sample
    out = []
    for name, net in _sources(args, lib, cfg):
        for j in range(args.samples_per_netlist):
            from .pipeline.dataset import derive_seed
            out.append(make_eco_sample(net, derive_seed(cfg.seed, "eco", name, j), lib, args.relation,
                                       name=f"{name}_{j:03d}"))
    return out


def cmd_eco_make_sample(args):
    from .eco import make_eco_sample
    lib = _lib(args)
    net = _read_circuit(args.netlist, lib)
    s = make_eco_sample(net, args.seed, lib, args.relation, p=args.p)
    names = net.names
    _write_json(args.out, {"p": names[s.p], "relation": s.relation, "seed": args.seed,
                           "cone": sorted(names[i] for i in s.cone.members),
                           "removed": sorted(names[i] for i in s.removed),
                           "labels": {names[i]: v for i, v in sorted(s.driven_labels.items())}})
    _event("wrote eco sample", path=args.out, p=names[s.p], support=sum(s.driven_labels.values()))


def cmd_eco_finetune(args):
    from .eco import eco_finetune
    from .nn import load_checkpoint, save_checkpoint
    from .pipeline.train import check_compatible
    lib = _lib(args)
    store, meta = load_checkpoint(args.ckpt)
    cfg = _eco_cfg(args, meta)
    check_compatible(meta, cfg)
    samples = _eco_samples(args, lib, cfg)
    res = eco_finetune(samples, store, cfg, lib, args.threads)
    save_checkpoint(args.out, res.store, res.meta)
    _event("wrote checkpoint", path=args.out, samples=len(samples), final=res.history[-1] if res.history else None)


def cmd_eco_rank(args):
    from .eco import eco_rank, write_candidates
    from .netlist import parse_aiger
    from .nn import load_checkpoint
    from .pipeline.train import check_compatible
    lib = _lib(args)
    store, meta = load_checkpoint(args.ckpt)
    cfg = _eco_cfg(args, meta)
    check_compatible(meta, cfg)
    original = _read_circuit(args.original, lib)
    rows = eco_rank(original, parse_aiger(args.golden), args.target, store, cfg, lib, args.top_k, args.seed)
    write_candidates(args.out, rows)
    _event("wrote candidates", path=args.out, rows=len(rows))


def cmd_map_finetune(args):
    from .mapping import make_map_samples, map_finetune
    from .nn import load_checkpoint, save_checkpoint
    from .pipeline.train import check_compatible
    from .pipeline.dataset import derive_seed
    lib = _lib(args)
    store, meta = load_checkpoint(args.ckpt)
    cfg = _config(args, base=_ckpt_config(meta))
    check_compatible(meta, cfg)
    samples, skipped = [], 0
    for name, net in _sources(args, lib, cfg):
        got = make_map_samples(net, lib, args.n_samples, args.max_nodes, derive_seed(cfg.seed, "map", name))
        samples += got.samples
        skipped += got.skipped
    _event("map samples", samples=len(samples), skipped=skipped)
    res = map_finetune(samples, store, cfg, list(lib.names), args.pooling, args.threads)
    save_checkpoint(args.out, res.store, res.meta)
    _event("wrote checkpoint", path=args.out, final=res.history[-1] if res.history else None)


def cmd_map_predict(args):
    from .mapping import map_predict, write_predictions
    from .netlist import parse_aiger
    from .nn import load_checkpoint
    store, meta = load_checkpoint(args.ckpt)
    if "classes" not in meta:
        raise DataError(f"{args.ckpt}: not a mapping checkpoint (no class list)")
    cfg = _config(args, base=_ckpt_config(meta))
    aig = parse_aiger(args.aig)
    try:
        roots = [ln.strip() for ln in Path(args.roots).read_text(encoding="utf-8").splitlines() if ln.strip()]
    except OSError as exc:
        raise DataError(f"{args.roots}: {exc.strerror}") from None
    preds = map_predict(aig, roots, store, cfg, meta["classes"], args.pooling or meta.get("pooling", "mean"),
                        args.max_nodes, args.seed)
    write_predictions(args.out, preds)
    _event("wrote predictions", path=args.out, roots=len(preds))


def cmd_gradcheck(args):
    from .generate import random_netlist
    from .pipeline.dataset import make_sample
    from .pipeline.train import stage2_grad_check
    lib = _lib(args)
    cfg = _config(args, stage=2)
    if args.netlist:
        net = _read_circuit(args.netlist, lib)
    else:
        net = random_netlist(lib, 4, 12, seed=cfg.seed)
    if len(net) > 20:
        raise DataError(f"gradcheck expects a circuit of at most 20 nodes, got {len(net)}")
    sample, reason = make_sample("gradcheck", "gradcheck", net, lib, cfg.max_nodes, cfg.n_patterns, cfg.seed)
    if sample is None:
        raise DataError(f"cannot build a sample: {reason}")
    rep = stage2_grad_check(sample, cfg, lib, args.samples, args.eps, args.tol, args.seed)
    doc = rep.summary()
    if args.out:
        _write_json(args.out, doc)
    _event("gradcheck", **doc)
    if not rep.passed:
        raise NumericalError(f"gradient check failed: {rep.summary()}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = Parser(prog="cellfuse", description="Multiview circuit representation learning toolkit.")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    ap.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("convert", help="PM netlist to AIGER with an equivalence check")
    p.add_argument("--netlist", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--check", choices=["exhaustive", "random", "none"], default="exhaustive")
    p.add_argument("--patterns", type=int, default=100_000, help="patterns for --check random")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("simulate", help="logic-1 probabilities of every node")
    p.add_argument("--netlist", required=True, help=".bench PM netlist or .aag AIG")
    p.add_argument("--out", required=True)
    p.add_argument("--patterns", type=int, default=15_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exhaustive", action="store_true")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="extract, convert, verify and label training samples")
    p.add_argument("netlists", nargs="*")
    p.add_argument("--generate", type=int, default=0, metavar="N", help="add N random toy circuits")
    p.add_argument("--samples-per-source", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="stage-1 or stage-2 pretraining")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--stage", type=int, choices=[1, 2])
    p.add_argument("--init", help="stage-1 checkpoint to start stage 2 from")
    p.add_argument("--resume", help="continue from a checkpoint of the same stage")
    p.add_argument("--eval-every", type=int, default=1, help="epochs between validation passes (0: never)")
    p.add_argument("--last", action="store_true", help="save the last epoch instead of the best")
    p.add_argument("--metrics", help="write the per-epoch history as JSON")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PE/RE report for a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", type=int, choices=[1, 2])
    p.add_argument("--split", choices=["train", "val", "all"], default="val")
    p.add_argument("--seed", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    eco = sub.add_parser("eco", help="functional-ECO tasks")
    esub = eco.add_subparsers(dest="eco_command", metavar="ACTION", parser_class=Parser)
    esub.required = True
    p = esub.add_parser("make-sample", help="patch root, cone and driven labels for one netlist")
    p.add_argument("--netlist", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", help="patch root name (default: drawn from the seed)")
    p.add_argument("--relation", choices=["fanin", "fanout"], default="fanin")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_eco_make_sample)
    p = esub.add_parser("finetune", help="finetune a pretrained checkpoint on ECO samples")
    p.add_argument("netlists", nargs="*")
    p.add_argument("--generate", type=int, default=0, metavar="N")
    p.add_argument("--samples-per-netlist", type=int, default=1)
    p.add_argument("--relation", choices=["fanin", "fanout"], default="fanin")
    p.add_argument("--ckpt", required=True, help="pretrained checkpoint")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eco_finetune)
    p = esub.add_parser("rank", help="rank candidate driving signals for a patch target")
    p.add_argument("--original", required=True, help="original PM netlist")
    p.add_argument("--golden", required=True, help="golden AIG (.aag)")
    p.add_argument("--target", required=True, help="patch target signal name")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="candidate CSV")
    p.add_argument("--top-k", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_eco_rank)

    mp = sub.add_parser("map", help="technology-mapping assist")
    msub = mp.add_subparsers(dest="map_command", metavar="ACTION", parser_class=Parser)
    msub.required = True
    p = msub.add_parser("finetune", help="train the cell-type head over AIG cones")
    p.add_argument("netlists", nargs="*")
    p.add_argument("--generate", type=int, default=0, metavar="N")
    p.add_argument("--n-samples", type=int, default=200, help="cells sampled per netlist")
    p.add_argument("--max-nodes", type=int, default=4096)
    p.add_argument("--pooling", choices=["mean", "root", "max"], default="mean")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_map_finetune)
    p = msub.add_parser("predict", help="per-root cell-type distributions")
    p.add_argument("--aig", required=True)
    p.add_argument("--roots", required=True, help="file with one root name per line")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-nodes", type=int, default=4096)
    p.add_argument("--pooling", choices=["mean", "root", "max"])
    p.add_argument("--seed", type=int, default=0)
    _add_common(p, lib=False)
    p.set_defaults(func=cmd_map_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of the stage-2 loss")
    p.add_argument("--netlist", help="circuit of at most 20 nodes (default: a generated one)")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.log_level)
    if args.threads < 1:
        print("cellfuse: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    _event("start", command=" ".join(x for x in (args.command, getattr(args, "eco_command", None),
                                                getattr(args, "map_command", None)) if x),
           threads=args.threads)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"cellfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        log.error("numerical failure", extra={"fields": {"error": str(exc)}})
        return EXIT_NUMERICAL
    except (CellfuseError, OSError) as exc:
        log.error("data error", extra={"fields": {"error": str(exc)}})
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
