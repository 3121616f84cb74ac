"""Command-line interface: generate-data, ingest, train, evaluate, predict, explain.

Exit codes: 0 success, 2 usage/config/data errors, 3 numeric failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import diffcore as dc
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .export import explain_sample, write_matrix
from .graphdata import (VOCAB, ConfigError, DataError, SyntheticConfig, build_sample,
                        generate_synthetic, partition, read_dataset, read_events, read_profiles,
                        split_dataset, write_dataset)
from .model import prepare
from .trainer import TrainConfig, evaluate, predict_prepared, train

log = logging.getLogger("dyngraph2seq")

POOLING_FLAGS = {"max": "max_pool", "attention": "node_attention"}
SPLIT_NAMES = ("train", "validation", "test")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir, command, cfg, seed, inputs, outputs):
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    with open(Path(out_dir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_config(path):
    """Read the JSON config; sections ``data``, ``split`` and ``train`` are all optional."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read config {path}: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - {"data", "split", "train"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    return cfg


def dataset_path(path):
    p = Path(path)
    return p / "dataset.jsonl" if p.is_dir() else p


def load_dataset(path):
    p = dataset_path(path)
    if not p.exists():
        raise UsageError(f"dataset not found: {p}")
    return read_dataset(p)


def split_config(cfg):
    sc = cfg.get("split", {})
    unknown = set(sc) - {"ratios", "seed"}
    if unknown:
        raise ConfigError(f"unknown split field(s): {sorted(unknown)}")
    ratios = tuple(sc.get("ratios", (0.70, 0.10, 0.20)))
    if len(ratios) != 3:
        raise ConfigError("split.ratios must have three entries")
    return ratios, int(sc.get("seed", 0))


def assign_splits(samples, ratios, seed):
    parts = split_dataset(samples, ratios, seed)
    return {s.user_id: name for name, part in zip(SPLIT_NAMES, parts) for s in part}


def train_config_from(cfg, args):
    tc = dict(cfg.get("train", {}))
    if getattr(args, "mode", None):
        tc["mode"] = args.mode
    if getattr(args, "pooling", None):
        tc["pooling"] = POOLING_FLAGS[args.pooling]
    if getattr(args, "graph_attention", None):
        tc["graph_attention"] = args.graph_attention == "on"
    if getattr(args, "seed", None) is not None:
        tc["seed"] = args.seed
    try:
        return TrainConfig.from_dict(tc)
    except TypeError as err:
        raise ConfigError(str(err)) from None


def check_compat(samples, mcfg):
    N, D = samples[0].snapshots[0].num_nodes, samples[0].snapshots[0].num_features
    if N != mcfg.num_nodes or (mcfg.mode != "sequence_only" and D != mcfg.in_features):
        raise DataError(f"dataset has N={N}, D={D}; checkpoint expects "
                        f"N={mcfg.num_nodes}, D={mcfg.in_features}")


# ------------------------------------------------------------------ commands


def cmd_generate_data(args):
    cfg = load_config(args.config)
    data = dict(cfg.get("data", {}))
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        syn = SyntheticConfig.from_dict(data)
    except TypeError as err:
        raise ConfigError(str(err)) from None
    ds = generate_synthetic(syn)
    ratios, split_seed = split_config(cfg)
    splits = (assign_splits(ds.samples, ratios, split_seed)
              if len(ds.samples) >= 3 else {s.user_id: "train" for s in ds.samples})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "dataset.jsonl", ds.samples, splits)
    with open(out / "ground_truth.json", "w") as fh:
        json.dump({"stage_to_subforum": {VOCAB.tokens[s]: f for s, f in ds.stage_to_subforum.items()},
                   "profiles": [[float(x) for x in p.topic_vector] for p in ds.profiles]},
                  fh, indent=1)
    write_manifest(out, "generate-data", cfg, syn.seed, {"config": args.config},
                   [out / "dataset.jsonl", out / "ground_truth.json"])
    print(f"wrote {len(ds.samples)} samples to {out / 'dataset.jsonl'}")


def cmd_ingest(args):
    cfg = load_config(args.config)
    profiles = read_profiles(args.profiles)
    events = read_events(args.events)
    targets = {}
    with open(args.targets) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                targets[str(rec["user_id"])] = rec["stages"]
    samples = []
    for uid in sorted(events):
        if uid not in targets:
            log.warning("user %s has events but no stage history; skipped", uid)
            continue
        samples.append(build_sample(uid, events[uid], profiles, targets[uid], args.window_seconds))
    if not samples:
        raise DataError("no users with both events and stage histories")
    ratios, split_seed = split_config(cfg)
    splits = assign_splits(samples, ratios, split_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "dataset.jsonl", samples, splits)
    write_manifest(out, "ingest", cfg, split_seed,
                   {"events": args.events, "profiles": args.profiles, "targets": args.targets},
                   [out / "dataset.jsonl"])
    print(f"wrote {len(samples)} samples to {out / 'dataset.jsonl'}")


def cmd_train(args):
    cfg = load_config(args.config)
    tcfg = train_config_from(cfg, args)
    samples, splits = load_dataset(args.dataset)
    tr, va, _ = partition(samples, splits)
    if not tr or not va:
        raise DataError("dataset needs non-empty train and validation splits")
    init = None
    if args.resume:
        init, mcfg, _ = load_checkpoint(args.resume)
        check_compat(samples, mcfg)
    result = train(tr, va, tcfg, init_store=init)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.json", result.best, result.model_config, tcfg)
    save_checkpoint(out / "last.json", result.last, result.model_config, tcfg, with_optimizer=True)
    with open(out / "runlog.jsonl", "w") as fh:
        for rec in result.log.records():
            fh.write(json.dumps(rec) + "\n")
    manifest_cfg = {**cfg, "train": tcfg.to_dict()}
    m = write_manifest(out, "train", manifest_cfg, tcfg.seed,
                       {"config": args.config, "dataset": args.dataset, "resume": args.resume},
                       [out / "model.json", out / "last.json", out / "runlog.jsonl"])
    m["mode"] = tcfg.mode
    with open(out / "manifest.json", "w") as fh:
        json.dump(m, fh, indent=2, sort_keys=True)
    print(f"trained {result.log.epochs} epochs in {result.log.wall_clock_seconds:.1f}s; "
          f"best validation BLEU-1 {max(result.log.val_bleu1):.2f} at epoch {result.log.best_epoch + 1}")


def cmd_evaluate(args):
    cfg = load_config(args.config)
    samples, splits = load_dataset(args.dataset)
    tr, va, te = partition(samples, splits)
    seeds = list(range(args.seed or 0, (args.seed or 0) + args.runs))
    if args.checkpoint:
        store, mcfg, _ = load_checkpoint(args.checkpoint)
        check_compat(samples, mcfg)
        target = {"train": tr, "validation": va, "test": te}[args.split]
        if not target:
            raise DataError(f"empty {args.split} split")
        report = evaluate(target, args.runs, seeds, checkpoint=(store, mcfg))
        label = mcfg.mode
    else:
        tcfg = train_config_from(cfg, args)
        resplit = None
        if args.resample_splits:
            ratios, _ = split_config(cfg)
            resplit = lambda seed: split_dataset(samples, ratios, seed)  # noqa: E731
        elif not te:
            raise DataError("empty test split")
        report = evaluate(te, args.runs, seeds, train_samples=tr, val_samples=va,
                          config=tcfg, resplit=resplit)
        label = tcfg.mode
    table = report.table(label)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = report.to_dict()
        doc["label"] = label
        with open(out / "report.json", "w") as fh:
            json.dump(doc, fh, indent=2)
        with open(out / "report.txt", "w") as fh:
            fh.write(table + "\n")
        write_manifest(out, "evaluate", cfg, seeds[0],
                       {"dataset": args.dataset, "checkpoint": args.checkpoint, "config": args.config},
                       [out / "report.json", out / "report.txt"])


def cmd_predict(args):
    store, mcfg, _ = load_checkpoint(args.checkpoint)
    samples, splits = load_dataset(args.dataset)
    check_compat(samples, mcfg)
    if args.split != "all":
        samples = [s for s in samples if splits.get(s.user_id) == args.split]
    prep = [prepare(s, mcfg.mode, mcfg) for s in samples]
    results = predict_prepared(prep, store, mcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for s, r in zip(samples, results):
            fh.write(json.dumps({"user_id": s.user_id, "predicted": VOCAB.decode(r.tokens),
                                 "target": VOCAB.decode(s.target)}) + "\n")
    print(f"wrote {len(results)} predictions to {out}")


def cmd_explain(args):
    store, mcfg, _ = load_checkpoint(args.checkpoint)
    samples, _ = load_dataset(args.dataset)
    check_compat(samples, mcfg)
    match = [s for s in samples if s.user_id == args.sample]
    if not match:
        raise UsageError(f"unknown sample id {args.sample!r}")
    info = explain_sample(match[0], store, mcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if info["beta"] is not None:
        write_matrix(out / "beta.csv", "beta", info["beta"], "timestep", "token", info["tokens"])
        written.append(out / "beta.csv")
    if info["alpha"] is not None:
        write_matrix(out / "alpha.csv", "alpha", info["alpha"], "timestep", "node")
        path = out / "attended_nodes.csv"
        with open(path, "w") as fh:
            fh.write(f"# attended rows=timestep:{len(info['attended'])} cols=field:2 labels=node|alpha\n")
            for node, weight in info["attended"]:
                fh.write(f"{int(node)},{float(weight)!r}\n")
        written += [out / "alpha.csv", path]
    with open(out / "tokens.json", "w") as fh:
        json.dump({"user_id": args.sample, "tokens": info["tokens"]}, fh)
    written.append(out / "tokens.json")
    write_manifest(out, "explain", {}, None,
                   {"checkpoint": args.checkpoint, "dataset": args.dataset, "sample": args.sample},
                   written)
    print(f"decoded {' '.join(info['tokens']) or '(empty)'}; wrote {len(written)} files to {out}")


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="dyngraph2seq", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def model_flags(sp):
        sp.add_argument("--mode", choices=["dynamic", "static_aggregate", "sequence_only"])
        sp.add_argument("--pooling", choices=sorted(POOLING_FLAGS))
        sp.add_argument("--graph-attention", choices=["on", "off"])

    g = sub.add_parser("generate-data", help="write a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate_data)

    i = sub.add_parser("ingest", help="build a dataset from event logs")
    i.add_argument("--events", required=True)
    i.add_argument("--profiles", required=True)
    i.add_argument("--targets", required=True)
    i.add_argument("--window-seconds", type=int, default=2_592_000)
    i.add_argument("--config")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_ingest)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint (with optimizer state) to continue from")
    model_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="mean ± SD test metrics over runs")
    e.add_argument("--config")
    e.add_argument("--dataset", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--runs", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--split", choices=SPLIT_NAMES, default="test")
    e.add_argument("--resample-splits", action="store_true")
    e.add_argument("--out")
    model_flags(e)
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="greedy-decode samples")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--split", choices=SPLIT_NAMES + ("all",), default="all")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    x = sub.add_parser("explain", help="export attention weights for one sample")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--dataset", required=True)
    x.add_argument("--sample", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_explain)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (dc.TrainingError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (UsageError, ConfigError, DataError, CheckpointError, dc.DimensionError,
            OSError, KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
