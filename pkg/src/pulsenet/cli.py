"""Command-line interface.

Exit codes:
    0  success
    1  unexpected error
    2  usage or configuration error
    3  file format or interchange error
    4  numeric error (non-finite loss)
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, data, interop, network, optimize
from . import tensor as T
from .config import RunConfig, format_config, load_config, parse_config, with_overrides
from .errors import (ArgumentError, DiscretizationError, ExportError, FormatError,
                     NumericError, SpecError, UnsupportedNodeError, UnsupportedTopologyError)
from .surrogate import by_name

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3, 4
METRIC_COLUMNS = ("epoch", "loss", "train_acc", "wall_ms")


def _load_run(args) -> RunConfig:
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=getattr(args, "seed", None),
                         unroll=getattr(args, "unroll", None),
                         epochs=getattr(args, "epochs", None))
    bs = getattr(args, "batch_size", None)
    if bs is not None and args.command == "train":
        cfg = with_overrides(cfg, batch_size=bs[0])
    return cfg


def _load_data(path_or_none, cfg: RunConfig) -> data.PackedDataset:
    path = path_or_none or cfg.data
    if not path:
        raise SpecError("no dataset given (use --data or set data = ... in the config)")
    return data.read_container(path)


def cmd_synth(args) -> int:
    ds = data.synth_rate_coded(args.classes, args.n, args.T, args.inputs, T.key(args.seed),
                               args.rate_lo, args.rate_hi)
    data.write_container(args.out, data.pack_dataset(ds))
    print(f"wrote {args.n} examples ({args.classes} classes, T={args.T}, "
          f"{args.inputs} inputs) to {args.out}")
    return EXIT_OK


def cmd_rasterize(args) -> int:
    sensor = tuple(int(s) for s in args.sensor.split(","))
    bins = tuple(int(s) for s in args.bins.split(",")) if args.bins else None
    samples = {}
    with open(args.events, newline="") as fh:
        reader = csv.DictReader(fh)
        axes = [c for c in ("x", "y") if c in (reader.fieldnames or [])][:len(sensor)]
        if not {"sample", "label", "t"} <= set(reader.fieldnames or []) or len(axes) != len(sensor):
            raise FormatError(f"{args.events}: need columns sample,label,t and one coordinate "
                              f"column per sensor axis")
        for row in reader:
            s = samples.setdefault(int(row["sample"]), {"label": int(row["label"]), "ev": []})
            s["ev"].append((float(row["t"]), [int(row[a]) for a in axes], int(row.get("p") or 0)))
    xs, ys = [], []
    for key in sorted(samples):
        ev = samples[key]["ev"]
        stream = data.EventStream(np.array([e[0] for e in ev]), np.array([e[1] for e in ev]),
                                  sensor, np.array([e[2] for e in ev]),
                                  duration=args.duration)
        xs.append(data.rasterize(stream, args.T, bins, polarity=args.polarity))
        ys.append(samples[key]["label"])
    ds = data.RasterDataset(np.stack(xs), np.array(ys, dtype=np.int32))
    data.write_container(args.out, data.pack_dataset(ds))
    print(f"rasterized {len(ys)} recordings to {args.out} (T={args.T})")
    return EXIT_OK


def cmd_pack(args) -> int:
    x = np.load(args.raster)
    y = np.load(args.labels)
    data.write_container(args.out, data.pack_dataset(data.RasterDataset(x, y)))
    print(f"packed {x.shape} -> {args.out}")
    return EXIT_OK


def write_metrics(path, metrics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            w.writerow([m["epoch"], repr(m["loss"]), repr(m["acc"]), f"{m['wall_ms']:.3f}"])


def cmd_train(args) -> int:
    cfg = _load_run(args)
    ds = _load_data(args.data, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def log(row):
        if not args.quiet:
            print(f"epoch {row['epoch']:4d}  loss {row['loss']:.5f}  "
                  f"acc {row['acc']:.4f}  {row['wall_ms']:.0f} ms")

    params, metrics = optimize.train(cfg.spec, cfg.train, ds, on_epoch=log)
    text = format_config(cfg)
    optimize.save_checkpoint(out / "checkpoint.npz", params, None, text)
    write_metrics(out / "metrics.csv", metrics)
    (out / "config.txt").write_text(text)
    print(f"checkpoint: {out / 'checkpoint.npz'}")
    return EXIT_OK


def _checkpoint_run(path):
    params, _, text = optimize.load_checkpoint(path)
    return parse_config(text), params


def cmd_eval(args) -> int:
    cfg, params = _checkpoint_run(args.checkpoint)
    ds = _load_data(args.data, cfg)
    acc = optimize.evaluate(cfg.spec, params, ds, unroll=args.unroll or cfg.train.unroll)
    print(f"accuracy {acc:.6f}")
    return EXIT_OK


def _max_trace_diff(spec_a, params_a, spec_b, params_b, seed, shape_T=32, batch=4):
    rng = T.key(seed)
    x = T.bernoulli(rng, 0.3, (batch, shape_T) + tuple(spec_a.input_shape))
    a, _ = network.apply(spec_a, params_a, x)
    b, _ = network.apply(spec_b, params_b, x)
    return float(np.abs(a - b).max())


def cmd_export(args) -> int:
    cfg, params = _checkpoint_run(args.checkpoint)
    doc = interop.export_graph(cfg.spec, params, args.dt or cfg.dt)
    interop.write_graph(args.out, doc)
    spec2, params2 = interop.import_graph(interop.read_graph(args.out))
    diff = _max_trace_diff(cfg.spec, params, spec2, params2, args.seed or 0)
    print(f"wrote {args.out} ({len(doc.nodes)} nodes); reimport max trace diff {diff:.3g}")
    return EXIT_OK


def cmd_import(args) -> int:
    doc = interop.read_graph(args.graph)
    act = by_name(args.activation) if args.activation else None
    spec, params = interop.import_graph(doc, args.dt, act)
    cfg = RunConfig(spec, dt=float(doc.metadata.get("dt", 1.0)))
    if args.config:
        base = load_config(args.config)
        cfg = replace(base, spec=spec)
    optimize.save_checkpoint(args.out, params, None, format_config(cfg))
    msg = f"imported {len(doc.nodes)} nodes into {args.out}"
    if args.reference:
        ref_cfg, ref_params = _checkpoint_run(args.reference)
        diff = _max_trace_diff(ref_cfg.spec, ref_params, spec, params, args.seed or 0)
        msg += f"; max trace diff vs reference {diff:.3g}"
    print(msg)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_run(args)
    batch_sizes = tuple(args.batch_size) if args.batch_size else cfg.batch_sizes
    unrolls = (args.unroll,) if args.unroll else cfg.unrolls
    warmup = cfg.warmup if args.warmup is None else args.warmup
    trials = cfg.trials if args.trials is None else args.trials
    if args.data or cfg.data:
        ds = _load_data(args.data, cfg)
    else:
        if len(cfg.spec.input_shape) != 1:
            raise SpecError("synthetic bench data needs a flat input shape; pass --data")
        classes = network.resolve(cfg.spec)[-1].out_shape[0]
        ds = data.pack_dataset(data.synth_rate_coded(
            classes, 2 * max(batch_sizes), args.T, cfg.spec.input_shape[0],
            T.key(cfg.train.seed)))
    rows = bench.run_bench(cfg.spec, cfg.train, ds, batch_sizes, unrolls, warmup, trials)
    print(f"{warmup} warm-up run(s), {trials} measured trial(s), {cfg.train.epochs} epoch(s) each")
    print(bench.format_report(rows))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pulsenet", description="Spiking network training engine")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic rate-coded dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--n", type=int, default=600)
    s.add_argument("--T", type=int, default=64)
    s.add_argument("--inputs", type=int, default=32)
    s.add_argument("--rate-lo", type=float, default=0.02)
    s.add_argument("--rate-hi", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("rasterize", help="bin an event CSV into a packed container")
    s.add_argument("--events", required=True, help="CSV with sample,label,t[,x][,y][,p]")
    s.add_argument("--sensor", required=True, help="sensor extents, e.g. 700 or 34,34")
    s.add_argument("--bins", default=None)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--duration", type=float, default=None, help="recording length in µs")
    s.add_argument("--polarity", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("pack", help="pack a dense .npy raster [N,T,...] with labels")
    s.add_argument("--raster", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pack)

    s = sub.add_parser("train", help="train from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--unroll", type=int, default=None)
    s.add_argument("--batch-size", type=int, nargs=1, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="integral accuracy of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--unroll", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="warm-up + measured training trials")
    s.add_argument("--config", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--out", default=None, help="optional CSV report")
    s.add_argument("--trials", type=int, default=None)
    s.add_argument("--warmup", type=int, default=None)
    s.add_argument("--batch-size", type=int, nargs="+", default=None)
    s.add_argument("--unroll", type=int, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--T", type=int, default=64, help="timesteps for synthetic bench data")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("export", help="write a checkpoint as an interchange graph")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("import", help="load an interchange graph into a checkpoint")
    s.add_argument("--graph", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--activation", default=None)
    s.add_argument("--config", default=None, help="training settings for the checkpoint")
    s.add_argument("--reference", default=None, help="checkpoint to compare dynamics against")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_import)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpecError, ArgumentError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, UnsupportedNodeError, UnsupportedTopologyError,
            DiscretizationError, ExportError) as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
