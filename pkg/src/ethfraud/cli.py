"""ethfraud command line: one subcommand per pipeline stage.

Every command that writes artifacts also writes a JSON run manifest next to
them (``<file>.manifest.json`` for a file, ``manifest.json`` in a directory).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .dataset import read_feature_table, stratified_split, write_feature_table
from .evaluation import (REFERENCE_GRIDS, evaluate, grid_search, params_dict, select_config, CRITERIA,
                         write_confusion, write_grid_report, write_metrics_report)
from .features import build_feature_table
from .ingest import ClientConfig, EtherscanClient, load_labels, load_transactions_file, normalize_address, \
    unique_transactions, write_transactions
from .models import FAMILIES, fit_model, load_model, params_from_dict, save_model
from .sensitivity import ablation_study, rank_features, read_importance, write_ablation, write_importance
from .synth import SynthParams, generate, write_corpus

log = logging.getLogger("ethfraud")


class CLIError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int | None
    inputs: dict
    outputs: list
    version: str = __version__
    duration_s: float = 0.0
    extra: dict = field(default_factory=dict)


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _write_manifest(m: RunManifest, out: Path) -> None:
    _manifest_path(out).write_text(json.dumps(asdict(m), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"input file not found: {p}")
    return p


def _read_json(path):
    p = _require_file(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CLIError(f"{p}: invalid JSON: {exc}") from None


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _out_file(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _resolve_params(family: str, config: dict, seed: int | None):
    config = dict(config)
    config.pop("model", None)
    if seed is not None and family != "svm":
        config["seed"] = seed
    return params_from_dict(family, config)


def _read_addresses(path) -> list[str]:
    lines = [ln.strip() for ln in _require_file(path).read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if lines and lines[0].lower().startswith("address"):
        rows = list(csv.reader(lines))
        return [normalize_address(r[0]) for r in rows[1:]]
    return [normalize_address(ln.split(",")[0]) for ln in lines]


# --------------------------------------------------------------------------- commands


def cmd_fetch(args) -> RunManifest:
    addresses = _read_addresses(args.addresses)
    cfg = ClientConfig(base_url=args.base_url, max_requests_per_second=args.rate)
    tx_map = EtherscanClient(cfg).fetch_many(addresses, threads=args.threads)
    out = _out_file(args.out)
    write_transactions(out, unique_transactions(tx_map))
    counts = {a: len(v) for a, v in tx_map.items()}
    return RunManifest("fetch", [], {"base_url": args.base_url, "rate": args.rate}, None,
                       {"addresses": str(args.addresses)}, [str(out)], extra={"tx_counts": counts})


def cmd_featurize(args) -> RunManifest:
    labels = load_labels(_require_file(args.labels))
    tx_map = load_transactions_file(_require_file(args.tx), accounts=labels)
    d, skipped = build_feature_table(tx_map, labels)
    if len(d) == 0:
        raise CLIError("no labeled account has any successful transaction")
    out = _out_file(args.out)
    write_feature_table(out, d)
    for a in skipped:
        log.warning("skipped %s: no successful transactions", a)
    return RunManifest("featurize", [], {}, None, {"tx": str(args.tx), "labels": str(args.labels)},
                       [str(out)], extra={"rows": len(d), "skipped": skipped})


def cmd_split(args) -> RunManifest:
    d = read_feature_table(_require_file(args.data))
    seed = 0 if args.seed is None else args.seed
    train, val = stratified_split(d, args.train_fraction, seed)
    out = _out_dir(args.out)
    write_feature_table(out / "train.csv", train)
    write_feature_table(out / "validation.csv", val)
    return RunManifest("split", [], {"train_fraction": args.train_fraction}, seed, {"data": str(args.data)},
                       [str(out / "train.csv"), str(out / "validation.csv")])


def cmd_train(args) -> RunManifest:
    if args.model == "svm" and not args.standardize:
        raise CLIError("svm requires --standardize: the RBF kernel is distance based")
    if args.model != "svm" and args.standardize:
        raise CLIError("--standardize applies to svm only")
    config = _read_json(args.config) if args.config else {}
    params = _resolve_params(args.model, config, args.seed)
    train = read_feature_table(_require_file(args.train))
    model = fit_model(params, train, threads=args.threads)
    out = _out_file(args.out)
    save_model(model, out)
    return RunManifest("train", [], {"model": args.model, **params_dict(params)},
                       getattr(params, "seed", None), {"train": str(args.train)}, [str(out)])


def _load_grid(source: str, family: str) -> list[dict]:
    if source == "reference":
        return REFERENCE_GRIDS[family]
    grid = _read_json(source)
    if not isinstance(grid, list) or not all(isinstance(g, dict) for g in grid):
        raise CLIError(f"{source}: grid must be a JSON list of objects")
    return grid


def cmd_grid_search(args) -> RunManifest:
    grid = _load_grid(args.grid, args.model)
    base = _read_json(args.config) if args.config else {}
    base.pop("model", None)
    seed = 0 if args.seed is None else args.seed
    if args.model != "svm":
        base.setdefault("seed", seed)
    train = read_feature_table(_require_file(args.train))
    val = read_feature_table(_require_file(args.validation)) if args.validation else None
    gr = grid_search(args.model, grid, train, k=args.folds, seed=seed, threads=args.threads,
                     base=base, validation=val)
    out = _out_dir(args.out)
    outputs = [out / "grid_cv.csv"]
    write_grid_report(outputs[0], gr, "cv")
    if val is not None:
        outputs.append(out / "grid_validation.csv")
        write_grid_report(outputs[-1], gr, "validation")
    selected = {}
    for criterion in CRITERIA:
        try:
            row = select_config(gr, criterion, "cv")
        except ValueError as exc:
            log.warning("%s: %s", criterion, exc)
            continue
        selected[criterion] = {"conf": gr.rows.index(row) + 1, "config": row.config,
                               "params": {"model": args.model, **params_dict(row.params)}}
    outputs.append(out / "selected.json")
    outputs[-1].write_text(json.dumps(selected, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    failed = [i + 1 for i, r in enumerate(gr.rows) if r.error]
    return RunManifest("grid-search", [], {"model": args.model, "grid": grid, "base": base, "folds": args.folds},
                       seed, {"train": str(args.train), "validation": args.validation},
                       [str(p) for p in outputs], extra={"failed_configurations": failed})


def cmd_evaluate(args) -> RunManifest:
    model = load_model(_require_file(args.model_file))
    d = read_feature_table(_require_file(args.data))
    if tuple(d.feature_names) != tuple(model.feature_names):
        raise CLIError(f"feature mismatch: model has {list(model.feature_names)}, data has {list(d.feature_names)}")
    cm, m = evaluate(model, d, args.cutoff)
    out = _out_dir(args.out)
    write_metrics_report(out / "metrics.csv", [(Path(args.model_file).stem, m)])
    write_confusion(out / "confusion.csv", cm)
    return RunManifest("evaluate", [], {"cutoff": args.cutoff}, None,
                       {"model_file": str(args.model_file), "data": str(args.data)},
                       [str(out / "metrics.csv"), str(out / "confusion.csv")])


def cmd_importance(args) -> RunManifest:
    model = load_model(_require_file(args.model_file))
    report = rank_features(model)
    out = _out_file(args.out)
    write_importance(out, report)
    return RunManifest("importance", [], {}, None, {"model_file": str(args.model_file)}, [str(out)])


def cmd_ablate(args) -> RunManifest:
    importance = read_importance(_require_file(args.importance))
    config = _read_json(args.config)
    family = args.model or config.get("model")
    if family not in ("rf", "xgb"):
        raise CLIError("ablation needs --model rf or xgb (svm has no importance ranking)")
    params = _resolve_params(family, config, args.seed)
    train = read_feature_table(_require_file(args.train))
    val = read_feature_table(_require_file(args.validation))
    results = ablation_study(train, val, params, importance, args.exclude_top, threads=args.threads)
    out = _out_file(args.out)
    write_ablation(out, args.label or family, results)
    return RunManifest("ablate", [], {"model": family, **params_dict(params), "exclude_top": args.exclude_top},
                       getattr(params, "seed", None),
                       {"importance": str(args.importance), "config": str(args.config),
                        "train": str(args.train), "validation": str(args.validation)}, [str(out)])


def cmd_synth(args) -> RunManifest:
    seed = 42 if args.seed is None else args.seed
    p = SynthParams(n_nonfraud=args.n_nonfraud, n_fraud=args.n_fraud, seed=seed)
    tx_map, labels = generate(p)
    tx_path, label_path = write_corpus(_out_dir(args.out), tx_map, labels)
    return RunManifest("synth", [], {"n_nonfraud": p.n_nonfraud, "n_fraud": p.n_fraud}, seed, {},
                       [str(tx_path), str(label_path)])


def _markdown_table(path: Path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [f"_{path.name} is empty_"]
    lines = ["| " + " | ".join(rows[0]) + " |", "|" + "---|" * len(rows[0])]
    lines += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    return lines


def cmd_report(args) -> RunManifest:
    paths = [_require_file(p) for p in args.inputs]
    lines = [f"# {args.title}", ""]
    for p in paths:
        lines += [f"## {p.stem}", "", *_markdown_table(p), ""]
    out = _out_file(args.out)
    out.write_text("\n".join(lines), encoding="utf-8")
    return RunManifest("report", [], {"title": args.title}, None, {"inputs": [str(p) for p in paths]}, [str(out)])


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    shared.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    shared.add_argument("--out", required=True, help="output file or directory")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ethfraud", description="Ethereum account fraud detection pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", parents=[shared], help="download normal transactions")
    p.add_argument("--addresses", required=True)
    p.add_argument("--base-url", default=ClientConfig.base_url)
    p.add_argument("--rate", type=float, default=5.0, help="requests per second")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("featurize", parents=[shared], help="aggregate per-account features")
    p.add_argument("--tx", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("split", parents=[shared], help="stratified train/validation split")
    p.add_argument("--data", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[shared], help="fit one model")
    p.add_argument("--model", choices=sorted(FAMILIES), required=True)
    p.add_argument("--config", help="JSON parameter file")
    p.add_argument("--train", required=True)
    p.add_argument("--standardize", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid-search", parents=[shared], help="cross-validated grid search")
    p.add_argument("--model", choices=sorted(FAMILIES), required=True)
    p.add_argument("--grid", required=True, help="JSON list of configurations, or 'reference'")
    p.add_argument("--config", help="JSON parameters shared by every configuration")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--train", required=True)
    p.add_argument("--validation")
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("evaluate", parents=[shared], help="score a saved model")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cutoff", type=float, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance", parents=[shared], help="rank features of a saved model")
    p.add_argument("--model-file", required=True)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("ablate", parents=[shared], help="re-train without the top-n features")
    p.add_argument("--exclude-top", type=int, nargs="+", default=[2, 4, 8])
    p.add_argument("--importance", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--model", choices=["rf", "xgb"])
    p.add_argument("--train", required=True)
    p.add_argument("--validation", required=True)
    p.add_argument("--label", help="configuration name in the output table")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic corpus")
    p.add_argument("--n-nonfraud", type=int, default=5000)
    p.add_argument("--n-fraud", type=int, default=250)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", parents=[shared], help="merge result CSVs into Markdown")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--title", default="Results")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("ethfraud: error: --threads must be at least 1", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        manifest = args.func(args)
    except CLIError as exc:
        print(f"ethfraud {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError, KeyError, TypeError) as exc:
        print(f"ethfraud {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    manifest.argv = argv
    manifest.duration_s = round(time.perf_counter() - start, 3)
    _write_manifest(manifest, Path(args.out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
