"""``laminar`` command line: train, lr-find, show-batch, predict, export-info.

Exit codes: 0 ok, 2 config error, 3 data error, 4 training error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import traceback
from pathlib import Path

from . import errors as E
from .learner import load_learner, read_manifest
from .recipes import learner_for, load_config, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4

DATA_ERRORS = (E.UnknownDataset, E.ChecksumMismatch, E.NetworkError, E.EmptyItems, E.EmptyTrainSplit,
               E.GetterError, E.TransformError, E.CollateError, E.EmptySource, E.LabelNotFound,
               E.ArchiveError, E.VersionMismatch, E.EmptySetupSample, E.IndexOutOfRange, OSError)


def _overrides(args) -> dict:
    keys = ("dataset", "optimizer", "epochs", "batch_size", "lr_max", "pct_start", "wd", "seed",
            "output_dir")
    out = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "model", None):
        out["model"] = [int(v) for v in args.model.split(",")]
    return out


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    learn = train(cfg)
    print(learn.recorder.metrics_table())
    return EXIT_OK


def cmd_lr_find(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    learn = learner_for(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    suggestion, _ = learn.lr_find(num_it=args.num_it, csv_path=out / "lr_find.csv")
    print(f"suggested lr: {suggestion:.3g}")
    return EXIT_OK


def cmd_show_batch(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    learn = learner_for(cfg)
    out_dir = Path(cfg.output_dir) / "show_batch"
    learn.dls.show_batch(max_n=args.n, out=sys.stdout, out_dir=out_dir)
    return EXIT_OK


def _read_items(path: Path) -> list:
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as f:
            return list(csv.DictReader(f))
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text())
        return data if isinstance(data, list) else [data]
    return [path]


def cmd_predict(args) -> int:
    learn = load_learner(args.archive)
    for item in _read_items(Path(args.item)):
        label, probs, raw = learn.predict(item)
        if probs is None:
            print(f"{label}\t" + " ".join(f"{v:.6g}" for v in raw.data.reshape(-1)))
        else:
            print(f"{label}\t" + " ".join(f"{p:.6f}" for p in probs.data))
    return EXIT_OK


def cmd_export_info(args) -> int:
    print(json.dumps(read_manifest(args.archive), indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="laminar", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", nargs="?", help="JSON run config")
        sp.add_argument("--dataset")
        sp.add_argument("--model", help="comma-separated layer sizes, e.g. 2,16,2")
        sp.add_argument("--optimizer")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--lr-max", dest="lr_max", type=float)
        sp.add_argument("--pct-start", dest="pct_start", type=float)
        sp.add_argument("--wd", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output-dir", dest="output_dir")
        return sp

    with_config(sub.add_parser("train", help="fit_one_cycle and export")).set_defaults(fn=cmd_train)
    lf = with_config(sub.add_parser("lr-find", help="learning-rate range test"))
    lf.add_argument("--num-it", dest="num_it", type=int, default=100)
    lf.set_defaults(fn=cmd_lr_find)
    sb = with_config(sub.add_parser("show-batch", help="render decoded samples"))
    sb.add_argument("-n", type=int, default=4)
    sb.set_defaults(fn=cmd_show_batch)
    pr = sub.add_parser("predict", help="predict with an exported model")
    pr.add_argument("archive")
    pr.add_argument("item", help="CSV of records, JSON record(s), or an image file")
    pr.set_defaults(fn=cmd_predict)
    ei = sub.add_parser("export-info", help="print an export manifest")
    ei.add_argument("archive")
    ei.set_defaults(fn=cmd_export_info)
    return p


def _origin(exc: BaseException) -> str:
    tb = exc.__traceback__
    name = "laminar"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("laminar"):
            name = mod
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except E.ConfigError as e:
        code, kind, err = EXIT_CONFIG, "config error", e
    except DATA_ERRORS as e:
        code, kind, err = EXIT_DATA, "data error", e
    except Exception as e:  # noqa: BLE001 - everything else is a training failure
        code, kind, err = EXIT_TRAIN, "training error", e
        if args.verbose:
            traceback.print_exc()
    print(f"laminar: {kind} in {_origin(err)}: {type(err).__name__}: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
