"""Command-line surface: ingest, preprocess, graph export, train, eval,
gradcheck, info, toydata, and the ablation harness."""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import train as tt
from .features import BRANCHES
from .graph import LAYOUTS, STRATEGIES, build_adjacency, export_adjacency
from .model import ModelConfig, build_model, count_params, estimate_flops, tiny_config
from .skeleton_io import (DatasetManifest, ManifestEntry, parse_ntu_skeleton,
                          parse_sbu, read_canonical, resample_temporal,
                          to_sequence, write_canonical, write_feature_cache)
from .toydata import make_toy_dataset

NTU_NAME = re.compile(r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})", re.IGNORECASE)


def load_model_config(spec: str) -> ModelConfig:
    if spec == "default":
        return ModelConfig()
    if spec == "tiny":
        return tiny_config()
    return ModelConfig.from_json(Path(spec).read_text())


def _emit(record: dict):
    print(json.dumps(record), flush=True)


def cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    label_map = None
    if args.label_map:
        label_map = {int(k): int(v) for k, v in
                     json.loads(Path(args.label_map).read_text()).items()}
    entries = []
    for raw in args.inputs:
        path = Path(raw)
        if args.format == "ntu":
            match = NTU_NAME.search(path.stem)
            if not match:
                print(f"skip {path}: name lacks SxxxCxxxPxxxRxxxAxxx fields", file=sys.stderr)
                continue
            setup, camera, subject, _, action = (int(g) for g in match.groups())
            label = label_map[action] if label_map else action - 1
            seq = to_sequence(parse_ntu_skeleton(path.read_text()), label=label,
                              sample_id=path.stem, subject_id=subject,
                              camera_id=camera, setup_id=setup)
        else:
            # SBU layout: <pair>/<category>/<run>/<file>; category is 2 levels up
            parents = [p.name for p in path.parents]
            category = parents[1] if len(parents) > 1 and parents[1].isdigit() else None
            label = int(category) - 1 if category else 0
            if label_map:
                label = label_map.get(label + 1, label)
            sample_id = "_".join(path.parts[-4:-1]) or path.stem
            seq = parse_sbu(path.read_text(), label=label, sample_id=sample_id)
        target = out / f"{seq.sample_id}.2pgc"
        target.write_bytes(write_canonical(seq))
        entries.append(ManifestEntry(sample_id=seq.sample_id, path=str(target),
                                     label=seq.label, subject_id=seq.subject_id,
                                     camera_id=seq.camera_id, setup_id=seq.setup_id))
    if not entries:
        print("no samples ingested", file=sys.stderr)
        return 1
    num_classes = args.num_classes or max(e.label for e in entries) + 1
    joint_count = 25 if args.format == "ntu" else 15
    manifest = DatasetManifest(entries=entries, num_classes=num_classes,
                               joint_count=joint_count)
    manifest.validate()
    manifest.save(out / "manifest.json")
    print(f"ingested {len(entries)} samples -> {out / 'manifest.json'}")
    return 0


def cmd_preprocess(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    config = ModelConfig(num_classes=manifest.num_classes,
                         layout="ntu" if manifest.joint_count == 25 else "sbu",
                         strategy="physical", mode=args.mode, frames=args.frames)
    branches = args.branches.split(",")
    unknown = set(branches) - set(BRANCHES)
    if unknown:
        print(f"unknown branches {sorted(unknown)}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    groups = tt.prepare_groups(manifest, config, mirror=args.mirror, training=False)
    index = []
    for entry, group in zip(manifest.entries, groups):
        for g_idx, graph in enumerate(group):
            for tag in branches:
                blob = write_feature_cache(graph.streams[tag], tag, label=graph.label,
                                           subject_id=entry.subject_id,
                                           camera_id=entry.camera_id,
                                           setup_id=entry.setup_id)
                name = f"{entry.sample_id}.g{g_idx}.{tag}.2pgb"
                (out / name).write_bytes(blob)
                index.append({"sample_id": entry.sample_id, "graph": g_idx,
                              "branch": tag, "path": name, "label": graph.label})
    (out / "index.json").write_text(json.dumps(
        {"mode": args.mode, "frames": args.frames, "records": index}, indent=2))
    print(f"wrote {len(index)} branch files -> {out}")
    return 0


def cmd_graph(args) -> int:
    topology = LAYOUTS[args.layout]
    sequence = None
    if args.sample:
        sequence = read_canonical(Path(args.sample).read_bytes())
        sequence = resample_temporal(sequence, args.frames)
    adj = build_adjacency(args.strategy, topology, two_person=not args.single,
                          sequence=sequence,
                          interactive_all_pairs=args.interactive_all_pairs)
    export_adjacency(adj, args.export)
    print(f"{args.strategy}: V={adj.V} K={adj.K} edges={int(np.count_nonzero(adj.A) // 2)}"
          f" -> {args.export}")
    return 0


def _train_config_from(args) -> tt.TrainConfig:
    config = tt.TrainConfig.from_json(Path(args.train_config).read_text()) \
        if args.train_config else tt.TrainConfig()
    if args.epochs is not None:
        config.epochs = args.epochs
        config.warmup_epochs = min(config.warmup_epochs, max(0, args.epochs - 1))
    if args.seed is not None:
        config.seed = args.seed
    if args.batch_size is not None:
        config.batch_size = args.batch_size
    if args.base_lr is not None:
        config.base_lr = args.base_lr
    return config


def cmd_train(args) -> int:
    model_config = load_model_config(args.config)
    train_config = _train_config_from(args)
    train_manifest = DatasetManifest.load(args.train_split)
    val_manifest = DatasetManifest.load(args.val_split) if args.val_split else None
    result = tt.train(train_manifest, model_config, train_config,
                      val_manifest=val_manifest, mirror=args.mirror,
                      out_dir=args.out, emit=_emit)
    _emit({"best_epoch": result.best_epoch, "best_top1": result.best_top1})
    return 0


def cmd_eval(args) -> int:
    model_config = load_model_config(args.config)
    model = build_model(model_config, seed=0)
    model.load_checkpoint(Path(args.checkpoint).read_bytes())
    manifest = DatasetManifest.load(args.split)
    report = tt.evaluate(model, manifest, model_config)
    _emit({"split": args.split, "top1": report.top1, "count": report.count,
           "per_class": report.per_class.tolist()})
    if args.confusion:
        _emit({"confusion": report.confusion.tolist()})
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import CASES, run_gradcheck_battery

    cases = args.cases.split(",") if args.cases else None
    if cases and (unknown := set(cases) - set(CASES)):
        print(f"unknown cases {sorted(unknown)}; have {sorted(CASES)}", file=sys.stderr)
        return 1
    reports = run_gradcheck_battery(tol=args.tol, h=args.h, cases=cases)
    ok = True
    for name, report in reports.items():
        worst = max(report.errors.values())
        status = "PASS" if report.passed else "FAIL"
        print(f"{status}  {name:18s} max rel err {worst:.3e} (tol {report.tol:g})")
        ok &= report.passed
    return 0 if ok else 1


def cmd_info(args) -> int:
    model_config = load_model_config(args.config)
    model = build_model(model_config, seed=0)
    params = count_params(model)
    flops = estimate_flops(model)
    print(f"config: {args.config}  mode={model_config.mode}  "
          f"strategy={model_config.strategy}  V={model.vertices}")
    print(f"parameters: {params:,}")
    print(f"flops (2*MACs, {model_config.graphs_per_sample} graph(s)/sample): "
          f"{flops:,} ({flops / 1e9:.2f}G)")
    return 0


def cmd_toydata(args) -> int:
    manifest = make_toy_dataset(args.seed, classes=args.classes,
                                samples_per_class=args.samples_per_class,
                                out_dir=args.out, frames=args.frames,
                                prefix=args.prefix)
    print(f"wrote {len(manifest.entries)} samples -> {Path(args.out) / 'manifest.json'}")
    return 0


SCALE_MODES = ("baseline", "mutual", "randomswap", "symmetry")
LABELINGS = ("fc", "onlypairwise", "pairwise", "physical", "interactive", "geometric")


def cmd_ablate(args) -> int:
    base = load_model_config(args.config)
    train_manifest = DatasetManifest.load(args.train_split)
    val_manifest = DatasetManifest.load(args.val_split)
    variants = ([("mode", m) for m in SCALE_MODES] if args.axis == "scale"
                else [("strategy", s) for s in LABELINGS])
    for field_name, value in variants:
        scores = []
        for seed in range(args.seeds):
            cfg = ModelConfig(**{**json.loads(base.to_json()), field_name: value})
            train_config = tt.TrainConfig(epochs=args.epochs,
                                          warmup_epochs=min(5, args.epochs - 1),
                                          batch_size=args.batch_size, seed=seed,
                                          base_lr=args.base_lr)
            result = tt.train(train_manifest, cfg, train_config,
                              val_manifest=val_manifest)
            scores.append(result.best_top1)
        _emit({"axis": args.axis, field_name: value, "seeds": args.seeds,
               "mean": float(np.mean(scores)), "std": float(np.std(scores)),
               "scores": scores})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="twogcn",
                                     description="Two-person GCN interaction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw capture files into canonical samples")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--format", choices=("ntu", "sbu"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--label-map", default=None, help="JSON {raw action id: class index}")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="cache branch features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--branches", default="J,B,JM,BM")
    p.add_argument("--mode", choices=SCALE_MODES, default="mutual")
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--mirror", choices=("off", "reflect", "copy"), default="off")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("graph", help="build and export an adjacency stack")
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--layout", choices=tuple(LAYOUTS), default="ntu")
    p.add_argument("--single", action="store_true", help="single-person graph")
    p.add_argument("--sample", default=None, help="canonical file (geometric labeling)")
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--interactive-all-pairs", action="store_true")
    p.add_argument("--export", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default="default", help="default | tiny | config.json")
    p.add_argument("--train-config", default=None)
    p.add_argument("--train-split", required=True)
    p.add_argument("--val-split", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--base-lr", type=float, default=None)
    p.add_argument("--mirror", choices=("off", "reflect", "copy"), default="off")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", default="default")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--confusion", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every layer")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--cases", default=None, help="comma list (default: all)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("info", help="parameter count and FLOP estimate")
    p.add_argument("--config", default="default")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("toydata", help="generate the synthetic interaction set")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples-per-class", type=int, default=32)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--prefix", default="toy")
    p.set_defaults(func=cmd_toydata)

    p = sub.add_parser("ablate", help="graph-scale / labeling sweeps, mean±std over seeds")
    p.add_argument("--axis", choices=("scale", "labeling"), required=True)
    p.add_argument("--config", default="tiny")
    p.add_argument("--train-split", required=True)
    p.add_argument("--val-split", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--base-lr", type=float, default=0.1)
    p.set_defaults(func=cmd_ablate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
