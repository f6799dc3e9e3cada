"""Command-line entry point: synthetic data generation, training,
evaluation, and hyper-parameter sweeps.

Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import angular, descriptor, lightfield, protocol, selection
from .angular import DivergenceError, TrainConfig, TrainError
from .descriptor import DescriptorError
from .lightfield import ContainerError, CropBox, SyntheticSceneSpec
from .protocol import CANONICAL_TAGS, ManifestError
from .selection import SelectionError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


class ConfigError(Exception):
    pass


def read_config_file(path):
    """Line-based `key = value` config; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _resolve(args, file_values, key, cast, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_values:
        try:
            return cast(file_values[key])
        except ValueError as exc:
            raise ConfigError(f"config key {key}: {exc}") from exc
    return default


def make_backend(spec_str):
    """Backend spec strings: `rand:DIM:SIZE`, `toy:DIM:SIZE`, `embed:PATH`."""
    parts = spec_str.split(":")
    kind = parts[0]
    try:
        if kind == "rand":
            dim, size = int(parts[1]), int(parts[2])
            return descriptor.RandomProjectionBackend(size, size, dim, seed=1)
        if kind == "toy":
            dim, size = int(parts[1]), int(parts[2])
            return descriptor.ToyCnnBackend(size, size, dim, seed=1)
        if kind == "embed":
            return descriptor.EmbeddingFileBackend(":".join(parts[1:]))
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"bad backend spec {spec_str!r}: {exc}") from exc
    raise ConfigError(f"unknown backend kind {kind!r} in {spec_str!r}")


def write_run_json(out_dir, settings):
    with open(Path(out_dir) / "run.json", "w") as fh:
        json.dump(settings, fh, indent=1, sort_keys=True)


def cmd_synth(args):
    if args.subjects < 1 or args.variations < 1:
        raise ConfigError("subjects and variations must be >= 1")
    if args.variations > len(CANONICAL_TAGS):
        raise ConfigError(f"at most {len(CANONICAL_TAGS)} variations available")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tags = CANONICAL_TAGS[: args.variations]
    grid = args.grid
    size = args.view_size
    subject_ids = [f"subj{idx:03d}" for idx in range(args.subjects)]
    records = []
    for s_idx, sid in enumerate(subject_ids):
        if args.paired_patterns:
            pattern = s_idx // 2
            disparity = args.disparity * (1.0 if s_idx % 2 == 0 else -1.0)
        else:
            pattern = s_idx
            disparity = args.disparity
        for session in (1, 2):
            for t_idx, tag in enumerate(tags):
                image_id = f"{sid}/s{session}/{tag}"
                spec = SyntheticSceneSpec(
                    subject_seed=args.seed * 1000003 + s_idx,
                    base_pattern=args.seed * 7919 + pattern,
                    disparity_px_per_view=disparity,
                    noise_sigma=args.noise,
                    noise_seed=session * 100 + t_idx,
                )
                array = lightfield.synth_lightfield(
                    spec, grid, grid, size, size, image_id=image_id
                )
                rel = Path("containers") / sid / f"s{session}" / tag
                lightfield.save_sa_container(array, out / rel)
                records.append(protocol.ManifestRecord(
                    subject=sid, session=session, tag=tag,
                    crop=(0, 0, size, size),
                    sa_container=str(rel),
                ))
    manifest = protocol.DatasetManifest(subject_ids=subject_ids, records=records)
    protocol.save_manifest(out / "manifest.json", manifest)
    write_run_json(out, {
        "command": "synth", "subjects": args.subjects,
        "variations": args.variations, "grid": grid, "view_size": size,
        "disparity": args.disparity, "noise": args.noise,
        "paired_patterns": bool(args.paired_patterns), "seed": args.seed,
    })
    print(f"wrote {len(records)} containers + manifest under {out}")
    return EXIT_OK


def _load_common(args):
    file_values = read_config_file(args.config) if args.config else {}
    cfg = {
        "manifest": _resolve(args, file_values, "manifest", str, None),
        "topology": _resolve(args, file_values, "topology", str, "mid-hv-fuse"),
        "backend": _resolve(args, file_values, "backend", str, "rand:64:32"),
        "hidden": _resolve(args, file_values, "hidden", int, 256),
        "batches": _resolve(args, file_values, "batches", int, 3),
        "epochs": _resolve(args, file_values, "epochs", int, 130),
        "lr": _resolve(args, file_values, "lr", float, 1e-3),
        "protocol": _resolve(args, file_values, "protocol", int, 2),
        "seed": _resolve(args, file_values, "seed", int, 0),
        "workers": _resolve(args, file_values, "workers", int, 1),
        "out": _resolve(args, file_values, "out", str, "out"),
    }
    if cfg["manifest"] is None:
        raise ConfigError("a manifest path is required (--manifest)")
    if cfg["protocol"] not in (1, 2):
        raise ConfigError(f"protocol must be 1 or 2, got {cfg['protocol']}")
    topology = selection.parse_topology(cfg["topology"])
    backend = make_backend(cfg["backend"])
    manifest = protocol.load_manifest(cfg["manifest"])
    return cfg, topology, backend, manifest


def _branch_datasets(records, topology, backend, class_index, workers, grid=None,
                     timer=None):
    """Per-branch (sequences, labels) built in manifest record order."""
    branch_seqs = None
    labels = []
    for rec in records:
        branches = protocol.record_branch_descriptions(
            rec, topology, backend, workers=workers, grid=grid, timer=timer
        )
        if branch_seqs is None:
            branch_seqs = [[] for _ in branches]
        for b_idx, stack in enumerate(branches):
            branch_seqs[b_idx].append(stack)
        labels.append(class_index[rec.subject])
    return branch_seqs, labels


def _train_models(cfg, topology, backend, manifest, grid=None):
    split = protocol.get_split(manifest, cfg["protocol"])
    class_index = manifest.subject_index()
    branch_seqs, labels = _branch_datasets(
        split.train, topology, backend, class_index, cfg["workers"], grid=grid
    )
    models, loss_curves = [], []
    for b_idx, seqs in enumerate(branch_seqs):
        tconf = TrainConfig(
            hidden_dim=cfg["hidden"], num_batches=cfg["batches"],
            epochs=cfg["epochs"], learning_rate=cfg["lr"],
            seed=cfg["seed"] + b_idx,
        )
        model, losses = angular.train(seqs, labels, len(class_index), tconf)
        models.append(model)
        loss_curves.append(losses)
    return models, loss_curves, split, class_index


def _branch_names(n):
    return [""] if n == 1 else ["_h", "_v"][:n]


def cmd_train(args):
    cfg, topology, backend, manifest = _load_common(args)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    models, loss_curves, _, class_index = _train_models(
        cfg, topology, backend, manifest
    )
    names = _branch_names(len(models))
    model_paths = []
    for model, suffix in zip(models, names):
        mpath = out / f"model{suffix}.lflm"
        angular.save_model(mpath, model)
        model_paths.append(str(mpath))
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch"] + [f"loss{s or '_0'}" for s in names])
        for epoch, row in enumerate(zip(*loss_curves)):
            w.writerow([epoch] + [f"{v:.10g}" for v in row])
    with open(out / "classes.json", "w") as fh:
        json.dump(
            {str(i): sid for sid, i in class_index.items()}, fh, sort_keys=True
        )
    write_run_json(out, {"command": "train", **cfg, "models": model_paths})
    print(f"trained {len(models)} model(s) -> {', '.join(model_paths)}")
    return EXIT_OK


def _grid_from_manifest(split, cfg_views):
    for rec in split.test + split.train:
        if rec.sa_container:
            return None  # derived per record from the container
    mask = lightfield.default_vignette_mask(cfg_views, cfg_views)
    return (cfg_views, cfg_views, mask)


def cmd_eval(args):
    cfg, topology, backend, manifest = _load_common(args)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    split = protocol.get_split(manifest, cfg["protocol"])
    records = split.validation if args.part == "val" else split.test
    class_index = manifest.subject_index()
    paths = [Path(p) for p in args.model]
    for p in paths:
        if not p.is_file():
            raise ManifestError(f"model file not found: {p}")
    branch_models = [angular.load_model(p) for p in paths]
    model = (branch_models[0] if len(branch_models) == 1
             else angular.MultiBranchModel(branch_models))
    for m in branch_models:
        if m.class_count != len(class_index):
            raise ManifestError(
                f"model has {m.class_count} classes, manifest has {len(class_index)}"
            )
    grid = _grid_from_manifest(split, args.views)
    timer = protocol.PhaseTimer()
    result = protocol.evaluate(
        model, records, topology, backend, class_index,
        workers=cfg["workers"], grid=grid,
        use_last_cell=args.last_cell, timer=timer,
    )
    protocol.write_task_table_csv(out / "task_table.csv", result)
    with open(out / "task_table.txt", "w") as fh:
        fh.write(protocol.format_task_table(result) + "\n")
    with open(out / "rank_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "accuracy"])
        for k, acc in enumerate(result.rank_curve, 1):
            w.writerow([k, f"{acc:.6f}"])
    from .classify import write_prediction_dump
    write_prediction_dump(out / "predictions.csv", result.predictions)
    if grid is None:
        first = records[0]
        arr = lightfield.load_sa_container(first.sa_container)
        views_u, views_v, mask = arr.views_u, arr.views_v, arr.valid_mask
    else:
        views_u, views_v, mask = grid
    report = protocol.timing_report(
        timer, len(records), topology, branch_models[0].hidden_dim,
        views_u, views_v, mask,
    )
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "total_s", "per_image_s"])
        for phase, total in report.phase_totals.items():
            w.writerow([phase, f"{total:.6f}", f"{total / report.image_count:.6f}"])
        w.writerow(["description_elements", report.description_elements, ""])
        w.writerow(["description_bytes", report.description_bytes, ""])
    write_run_json(out, {"command": "eval", **cfg, "part": args.part})
    print(protocol.format_task_table(result))
    print(f"rank-1 average: {100 * result.average:.2f}%")
    return EXIT_OK


def cmd_sweep(args):
    cfg, topology, backend, manifest = _load_common(args)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    hidden_grid = [int(h) for h in args.hidden_grid.split(",")]
    batches_grid = [int(b) for b in args.batches_grid.split(",")]
    epochs_grid = [int(e) for e in args.epochs_grid.split(",")]
    class_index = manifest.subject_index()
    rows = []
    for hidden in hidden_grid:
        for batches in batches_grid:
            for epochs in epochs_grid:
                point = dict(cfg, hidden=hidden, batches=batches, epochs=epochs)
                try:
                    models, _, split, _ = _train_models(
                        point, topology, backend, manifest
                    )
                    model = (models[0] if len(models) == 1
                             else angular.MultiBranchModel(models))
                    result = protocol.evaluate(
                        model, split.validation, topology, backend, class_index,
                        workers=cfg["workers"],
                        grid=_grid_from_manifest(split, args.views),
                    )
                    rows.append((hidden, batches, epochs,
                                 f"{result.rank_curve[0]:.6f}", ""))
                except (TrainError, ManifestError, ContainerError) as exc:
                    rows.append((hidden, batches, epochs, "", str(exc)))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hidden", "batches", "epochs", "val_rank1", "error"])
        w.writerows(rows)
    write_run_json(out, {
        "command": "sweep", **cfg,
        "hidden_grid": hidden_grid, "batches_grid": batches_grid,
        "epochs_grid": epochs_grid,
    })
    print(f"wrote {len(rows)} sweep rows -> {out / 'sweep.csv'}")
    return EXIT_OK


def _add_common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--manifest")
    p.add_argument("--topology", choices=sorted(selection.TOPOLOGY_NAMES))
    p.add_argument("--backend", help="rand:DIM:SIZE | toy:DIM:SIZE | embed:PATH")
    p.add_argument("--hidden", type=int)
    p.add_argument("--batches", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--protocol", type=int, choices=(1, 2))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="lfrecog",
        description="Spatio-angular light-field recognition pipeline",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--variations", type=int, default=len(CANONICAL_TAGS))
    p.add_argument("--grid", type=int, default=9)
    p.add_argument("--view-size", type=int, default=32)
    p.add_argument("--disparity", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=6.0)
    p.add_argument("--paired-patterns", action="store_true",
                   help="consecutive subject pairs share texture, differ in disparity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the angular model(s)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained model(s)")
    _add_common(p)
    p.add_argument("--model", action="append", required=True,
                   help="model file; repeat for fusion branches")
    p.add_argument("--part", choices=("val", "test"), default="test")
    p.add_argument("--views", type=int, default=15,
                   help="grid side for embedding-backed manifests")
    p.add_argument("--last-cell", action="store_true",
                   help="use only the final cell's scores (ablation)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="hyper-parameter sweep on the validation set")
    _add_common(p)
    p.add_argument("--hidden-grid", default="32,64,128,256,512")
    p.add_argument("--batches-grid", default="3")
    p.add_argument("--epochs-grid", default="50")
    p.add_argument("--views", type=int, default=15)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SelectionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ManifestError, ContainerError, DescriptorError, TrainError,
            OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
