"""Command-line pipeline driver.

One executable, eight subcommands: mesh and patch-table generation,
resampling, synthetic cohorts, MPP pretraining, supervised training,
prediction, and attention maps. Exit codes: 0 success, 2 config error,
3 data error, 4 numeric failure.

BLAS libraries read their thread-count environment variables when numpy is
imported, so --threads is applied by peeking at argv before any numeric
import; every handler imports lazily. --threads 1 makes runs bitwise
reproducible.
"""

import argparse
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _pin_threads(argv) -> None:
    value = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif arg.startswith("--threads="):
            value = arg.split("=", 1)[1]
    if value is None:
        return
    try:
        n = int(value)
    except ValueError:
        return  # argparse reports the bad value
    if n >= 1:
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def _snapshot(path, mapping: dict) -> None:
    """Resolved key=value snapshot for a non-training subcommand."""
    from .training.runconfig import format_value

    lines = [f"{key} = {format_value(value)}" for key, value in mapping.items()
             if value is not None]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _config_overrides(args) -> dict:
    """CLI flags that override config-file keys."""
    overrides = {}
    if getattr(args, "manifest", None) is not None:
        overrides["manifest"] = args.manifest
    if getattr(args, "out_dir", None) is not None:
        overrides["out_dir"] = args.out_dir
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "freeze_backbone", False):
        overrides["freeze_backbone"] = "true"
    return overrides


def _require(mapping: dict, key: str, what: str):
    value = mapping.get(key)
    if value is None:
        from .errors import DataError

        raise DataError(f"{what} lacks {key!r}")
    return value


def cmd_icosphere(args) -> int:
    from .geometry import build_icosphere, write_smesh

    mesh = build_icosphere(args.order)
    write_smesh(args.out, mesh)
    _snapshot(str(args.out) + ".cfg",
              {"command": "icosphere", "order": args.order, "out": str(args.out)})
    print(f"wrote {args.out}: order {mesh.order}, "
          f"{mesh.n_vertices} vertices, {mesh.n_faces} faces")
    return 0


def cmd_patch_table(args) -> int:
    from .geometry import build_patch_table, write_sptbl

    table = build_patch_table(args.high, args.low)
    write_sptbl(args.out, table)
    _snapshot(str(args.out) + ".cfg",
              {"command": "patch-table", "high": args.high, "low": args.low,
               "out": str(args.out)})
    print(f"wrote {args.out}: {table.n_patches} patches x "
          f"{table.verts_per_patch} vertices (orders {args.high}/{args.low})")
    return 0


def cmd_resample(args) -> int:
    import numpy as np

    from .errors import DataError
    from .geometry import (
        build_icosphere,
        read_smesh,
        read_ssig,
        resample_barycentric,
        vertex_count,
        write_ssig,
    )

    signal = read_ssig(args.in_path)
    src = read_smesh(args.src)
    dst = read_smesh(args.dst)
    if signal.n_vertices != src.n_vertices:
        raise DataError(f"signal has {signal.n_vertices} vertices, "
                        f"source mesh {src.n_vertices}")

    # Hierarchical location needs the canonical icosphere, not just any mesh
    # with a plausible header.
    canonical = None
    if 0 <= dst.order <= 8 and vertex_count(dst.order) == dst.n_vertices:
        canonical = build_icosphere(dst.order)
    if canonical is None or not np.allclose(dst.vertices, canonical.vertices, atol=1e-9):
        raise DataError(f"target mesh {args.dst} is not a canonical icosphere")

    out = resample_barycentric(signal, src, canonical)
    write_ssig(args.out, out)
    _snapshot(str(args.out) + ".cfg",
              {"command": "resample", "in": str(args.in_path), "src": str(args.src),
               "dst": str(args.dst), "out": str(args.out)})
    print(f"wrote {args.out}: {out.n_vertices} vertices x {out.n_channels} channels")
    return 0


def cmd_synth(args) -> int:
    from dataclasses import replace

    from .data import generate_synthetic
    from .training.runconfig import load_synth_spec

    spec = load_synth_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    manifest = generate_synthetic(spec, args.out)
    _snapshot(os.path.join(args.out, "resolved.cfg"), spec.to_dict())
    print(f"wrote {manifest}: {spec.subjects} subjects, "
          f"{spec.channels} channels, seed {spec.seed}")
    return 0


def _load_run_data(run):
    from .errors import ConfigError
    from .data import load_dataset
    from .geometry import build_patch_table

    if run.manifest is None:
        raise ConfigError("config needs manifest = <path> (or --manifest)")
    if run.out_dir is None:
        raise ConfigError("config needs out_dir = <path> (or --out-dir)")
    table = build_patch_table(run.high_order, run.patch_order)
    data = load_dataset(run.manifest, table)
    return data, table


def _data_dims(data):
    split = data.split("train")
    return split.tokens.shape[1], split.tokens.shape[2]  # (seq_len, patch_dim)


def cmd_pretrain(args) -> int:
    from .errors import ConfigError
    from .model import SiTModel
    from .training import MppCorruption, pretrain_mpp
    from .training.runconfig import load_run_config, write_snapshot

    run = load_run_config(args.config, overrides=_config_overrides(args))
    if run.task != "mpp":
        raise ConfigError(f"pretrain needs task = mpp in the config, got {run.task!r}")
    data, table = _load_run_data(run)
    seq_len, patch_dim = _data_dims(data)
    model = SiTModel(run.model_config(patch_dim, seq_len), seed=run.seed)

    result = pretrain_mpp(
        data, model, run.optimizer_config(), MppCorruption(mask_prob=run.mask_prob),
        seed=run.seed, out_dir=run.out_dir, max_seconds=run.max_seconds,
        eval_batch_size=run.eval_batch_size,
        checkpoint_extra={"patch": [run.high_order, run.patch_order]},
    )
    write_snapshot(os.path.join(run.out_dir, "resolved.cfg"), run,
                   extra={"command": "pretrain"})
    print(f"pretrained {result.epochs_run} epochs; best val MSE "
          f"{result.best_val_metric:.6f} at epoch {result.best_epoch}; "
          f"checkpoint {result.checkpoint_path}")
    return 0


def cmd_train(args) -> int:
    from dataclasses import replace

    from .autodiff import load_checkpoint
    from .errors import ConfigError, DataError
    from .model import SiTConfig, SiTModel
    from .training import train
    from .training.runconfig import load_run_config, write_snapshot

    if args.drop_mpp and args.from_ckpt is None:
        raise ConfigError("--drop-mpp only makes sense together with --from")
    run = load_run_config(args.config, overrides=_config_overrides(args),
                          finetune=args.from_ckpt is not None)
    if run.task not in ("pma", "ga"):
        raise ConfigError(f"train needs task = pma or ga, got {run.task!r}")
    data, table = _load_run_data(run)
    seq_len, patch_dim = _data_dims(data)

    if args.from_ckpt is not None:
        # Architecture comes from the checkpoint; config model keys are
        # ignored except dropout_p.
        tensors, meta = load_checkpoint(args.from_ckpt)
        cfg = SiTConfig.from_dict(_require(meta, "model", "checkpoint"))
        if run.dropout_p is not None:
            cfg = replace(cfg, dropout_p=run.dropout_p)
        if cfg.seq_len != seq_len or cfg.patch_dim != patch_dim:
            raise DataError(
                f"checkpoint expects sequences [{cfg.seq_len} x {cfg.patch_dim}], "
                f"data provides [{seq_len} x {patch_dim}]"
            )
        model = SiTModel(cfg, seed=run.seed)
        model_tensors = {k: v for k, v in tensors.items()
                         if not k.startswith("confound.")}
        if args.drop_mpp:
            dropped = ("mask_token", "mpp_head.w", "mpp_head.b")
            model_tensors = {k: v for k, v in model_tensors.items()
                             if k not in dropped}
        model.load_state(model_tensors, strict=not args.drop_mpp)
    else:
        model = SiTModel(run.model_config(patch_dim, seq_len), seed=run.seed)

    result = train(
        data, model, run.optimizer_config(), task=run.task, seed=run.seed,
        deconfound=run.deconfound, freeze_backbone=run.freeze_backbone,
        out_dir=run.out_dir, max_seconds=run.max_seconds,
        eval_batch_size=run.eval_batch_size,
        checkpoint_extra={"patch": [run.high_order, run.patch_order]},
    )
    write_snapshot(os.path.join(run.out_dir, "resolved.cfg"), run,
                   extra={"command": "train",
                          "from_checkpoint": args.from_ckpt or "none",
                          "drop_mpp": args.drop_mpp})
    print(f"trained {result.epochs_run} epochs; best val MAE "
          f"{result.best_val_metric:.4f} at epoch {result.best_epoch}; "
          f"checkpoint {result.checkpoint_path}")
    return 0


def _load_inference_model(ckpt_path):
    """(model, confound_or_None, stats, table, meta) from a checkpoint."""
    from .autodiff import load_checkpoint
    from .data import NormStats
    from .geometry import build_patch_table
    from .model import SiTConfig, SiTModel
    from .training import ConfoundEncoder

    tensors, meta = load_checkpoint(ckpt_path)
    cfg = SiTConfig.from_dict(_require(meta, "model", "checkpoint"))
    model = SiTModel(cfg, seed=0)
    model.load_state({k: v for k, v in tensors.items()
                      if not k.startswith("confound.")})
    confound = None
    if meta.get("deconfound"):
        confound = ConfoundEncoder(cfg.hidden)
        confound.load_state(tensors)
    stats = NormStats.from_lists(_require(meta, "norm", "checkpoint"))
    high, low = meta.get("patch", (6, 2))
    table = build_patch_table(int(high), int(low))
    return model, confound, stats, table, meta


def cmd_predict(args) -> int:
    import csv

    import numpy as np

    from .data import load_example, read_manifest
    from .errors import ConfigError, DataError
    from .training import predict_rows

    if args.batch_size < 1:
        raise ConfigError(f"--batch-size must be >= 1, got {args.batch_size}")
    model, confound, stats, table, meta = _load_inference_model(args.ckpt)
    rows = read_manifest(args.manifest)
    sequences = [load_example(row, table, stats)[0] for row in rows]
    tokens = np.stack([seq.tokens for seq in sequences])
    if tokens.shape[1:] != (model.config.seq_len, model.config.patch_dim):
        raise DataError(
            f"manifest tokens {tokens.shape[1:]} do not match the checkpoint "
            f"model [{model.config.seq_len} x {model.config.patch_dim}]"
        )
    preds = predict_rows(model, tokens,
                         scan_ages=[row.scan_age for row in rows],
                         confound=confound, batch_size=args.batch_size)

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("subject", "hemi", "split", "scan_age",
                         "birth_age", "prediction"))
        for row, pred in zip(rows, preds):
            writer.writerow((row.subject, row.hemi, row.split,
                             f"{row.scan_age:.6f}", f"{row.birth_age:.6f}",
                             f"{pred:.6f}"))
    _snapshot(str(args.out) + ".cfg",
              {"command": "predict", "ckpt": str(args.ckpt),
               "manifest": str(args.manifest), "task": meta.get("task", ""),
               "out": str(args.out)})
    print(f"wrote {args.out}: {len(rows)} predictions "
          f"(task {meta.get('task', '?')})")
    return 0


def cmd_attention(args) -> int:
    import numpy as np

    from .attention import (
        VertexAttentionMap,
        average_maps,
        flat_map_png,
        last_layer_row,
        patches_to_vertices,
        rollout,
        save_attention_ssig,
        threshold_map,
    )
    from .data import load_example, read_manifest
    from .errors import ConfigError, DataError
    from .model import AttentionRecord, forward_regress

    model, confound, stats, table, meta = _load_inference_model(args.ckpt)
    rows = read_manifest(args.manifest)
    if args.example is not None:
        subject, _, hemi = args.example.partition(":")
        rows = [r for r in rows
                if r.subject == subject and (not hemi or r.hemi == hemi)]
        if not rows:
            raise DataError(f"no manifest row matches {args.example!r}")
    else:
        rows = [r for r in rows if r.split == args.average]
        if not rows:
            raise DataError(f"manifest has no rows in split {args.average!r}")

    cfg = model.config
    layer_range = (0, cfg.layers - 1) if args.rollout else (cfg.layers - 1, cfg.layers - 1)
    propagate = rollout if args.rollout else last_layer_row
    maps = []
    for row in rows:
        seq, (scan_age, _) = load_example(row, table, stats)
        record = AttentionRecord(cfg.layers, cfg.heads)
        extras = None
        if confound is not None:
            extras = [confound.encode([scan_age], training=False)]
        forward_regress(seq.tokens, model, extra_tokens=extras,
                        training=False, record=record)
        per_head = np.stack([
            patches_to_vertices(
                propagate(record, h, table.n_patches).reshape(table.n_patches),
                table,
            )
            for h in range(cfg.heads)
        ])
        maps.append(VertexAttentionMap(values=per_head, layer_range=layer_range,
                                       subject=row.subject,
                                       task=meta.get("task", "")))
    vmap = maps[0] if len(maps) == 1 else average_maps(maps)
    if args.threshold is not None:
        if not 0.0 <= args.threshold < 1.0:
            raise ConfigError(f"--threshold must be in [0, 1), got {args.threshold}")
        vmap = VertexAttentionMap(values=threshold_map(vmap.values, args.threshold),
                                  layer_range=vmap.layer_range,
                                  subject=vmap.subject, task=vmap.task)

    save_attention_ssig(args.out, vmap)
    if args.png:
        png_path = os.path.splitext(str(args.out))[0] + ".png"
        if flat_map_png(png_path, vmap.values.mean(axis=0), table.high_order):
            print(f"wrote {png_path}")
    _snapshot(str(args.out) + ".cfg",
              {"command": "attention", "ckpt": str(args.ckpt),
               "manifest": str(args.manifest), "example": args.example,
               "average": args.average, "rollout": args.rollout,
               "threshold": args.threshold, "out": str(args.out)})
    mode = "rollout" if args.rollout else "last-layer"
    print(f"wrote {args.out}: {vmap.values.shape[0]} head maps ({mode}, "
          f"{len(rows)} example{'s' if len(rows) != 1 else ''})")
    return 0


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=None,
                        help="override every RNG seed for this run")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP threads (1 = bitwise deterministic); "
                             "default uses all cores")
    return parser


def build_parser() -> argparse.ArgumentParser:
    from .training.runconfig import known_keys

    parser = argparse.ArgumentParser(
        prog="sit",
        description="Surface transformer pipeline: icospheric meshes, patch "
                    "tokens, masked-patch pretraining, phenotype regression, "
                    "attention maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    config_epilog = ("config file keys (one 'key = value' per line): "
                     + ", ".join(known_keys()))

    p = _add_common(sub.add_parser(
        "icosphere", help="write an icospheric mesh (SMESH)"))
    p.add_argument("--order", type=int, required=True,
                   help="subdivision order, 0..8")
    p.add_argument("-o", "--out", required=True, help="output .smesh path")
    p.set_defaults(handler=cmd_icosphere)

    p = _add_common(sub.add_parser(
        "patch-table", help="write a triangular patch table (SPTBL)"))
    p.add_argument("--high", type=int, default=6,
                   help="mesh order the signal lives on (default 6)")
    p.add_argument("--low", type=int, default=2,
                   help="order whose faces become patches (default 2)")
    p.add_argument("-o", "--out", required=True, help="output .sptbl path")
    p.set_defaults(handler=cmd_patch_table)

    p = _add_common(sub.add_parser(
        "resample", help="barycentric resampling between spherical meshes"))
    p.add_argument("--in", dest="in_path", required=True,
                   help="input signal (.ssig) on the source mesh")
    p.add_argument("--src", required=True, help="source mesh (.smesh)")
    p.add_argument("--dst", required=True,
                   help="target mesh (.smesh); must be a canonical icosphere")
    p.add_argument("-o", "--out", required=True, help="output .ssig path")
    p.set_defaults(handler=cmd_resample)

    p = _add_common(sub.add_parser(
        "synth", help="generate a synthetic cohort with a known age signal"))
    p.add_argument("--spec", required=True,
                   help="key=value spec (subjects required; age range, "
                        "channels, noise, preterm fraction optional)")
    p.add_argument("-o", "--out", required=True, help="output dataset directory")
    p.set_defaults(handler=cmd_synth)

    p = _add_common(sub.add_parser(
        "pretrain", help="masked-patch-prediction pretraining",
        epilog=config_epilog))
    p.add_argument("--config", required=True,
                   help="key=value run config with task = mpp")
    p.add_argument("--manifest", default=None, help="override config manifest")
    p.add_argument("--out-dir", default=None, help="override config out_dir")
    p.set_defaults(handler=cmd_pretrain)

    p = _add_common(sub.add_parser(
        "train", help="supervised phenotype regression (task pma or ga)",
        epilog=config_epilog))
    p.add_argument("--config", required=True, help="key=value run config")
    p.add_argument("--from", dest="from_ckpt", default=None, metavar="CKPT",
                   help="fine-tune from this checkpoint (architecture and "
                        "normalization come from it; defaults switch to the "
                        "fine-tuning learning rate)")
    p.add_argument("--freeze-backbone", action="store_true",
                   help="train only the regression head")
    p.add_argument("--drop-mpp", action="store_true",
                   help="with --from: reinitialize the mask token and "
                        "reconstruction head instead of loading them")
    p.add_argument("--manifest", default=None, help="override config manifest")
    p.add_argument("--out-dir", default=None, help="override config out_dir")
    p.set_defaults(handler=cmd_train)

    p = _add_common(sub.add_parser(
        "predict", help="write per-row predictions for a manifest"))
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--manifest", required=True, help="manifest CSV to score")
    p.add_argument("--batch-size", type=int, default=64,
                   help="inference batch size (no effect on values)")
    p.add_argument("-o", "--out", required=True, help="output predictions CSV")
    p.set_defaults(handler=cmd_predict)

    p = _add_common(sub.add_parser(
        "attention", help="regression-token attention maps on the sphere; "
                          "right-hemisphere rows are mirrored into the "
                          "left-hemisphere frame before patching, so maps "
                          "share that frame"))
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--manifest", required=True, help="manifest CSV with examples")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--example", default=None, metavar="SUBJECT[:HEMI]",
                       help="map for one subject (averaged over matching rows)")
    group.add_argument("--average", default=None, metavar="SPLIT",
                       help="group-average map over a split (train/val/test)")
    p.add_argument("--rollout", action="store_true",
                   help="propagate attention through all layers "
                        "(default: last-layer attention row only)")
    p.add_argument("--threshold", type=float, default=None, metavar="Q",
                   help="zero vertices below the Q-quantile per head")
    p.add_argument("--png", action="store_true",
                   help="also write a longitude-latitude PNG of the head mean "
                        "(best effort; needs matplotlib)")
    p.add_argument("-o", "--out", required=True, help="output .ssig path")
    p.set_defaults(handler=cmd_attention)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads(argv)
    args = build_parser().parse_args(argv)

    from .errors import ConfigError, DataError, NumericError, StateError

    if args.threads is not None and args.threads < 1:
        print("sit: config error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.handler(args)
    except (ConfigError, StateError) as exc:
        print(f"sit: config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"sit: data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"sit: numeric failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"sit: data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
