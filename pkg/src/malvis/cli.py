"""``malvis`` command line: convert, stats, split, train, eval, compare, gradcheck, repro.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dataset import (
    CorpusIndex,
    SplitSpec,
    balanced_subsample,
    class_stats_csv,
    read_manifest,
    scan_corpus,
    stratified_split,
    write_manifest,
)
from .errors import ConfigError, DivergedLoss, MalvisError
from .models import ARCHITECTURES, Model, ModelSpec, build_model, check_indices, model_grad_check_detail, nudge_biases
from .nn.snapshot import load_snapshot, save_snapshot
from .pe import NotPE, Truncated, convert_file, parse_sections, write_pgm
from .rng import SplitMix64
from .train import (
    EvalReport,
    TrainConfig,
    compare_models,
    confusion_csv,
    emit_report,
    evaluate,
    parse_report_csv,
    render_report,
    train,
)

log = logging.getLogger("malvis")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4
CONFIG_NAME = "run_config.txt"


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -----------------------------------------------------------------

def load_config(path, overrides):
    text = None
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return cfgmod.resolve(text, overrides, source=str(path or "<defaults>"))


def write_config(cfg, directory):
    os.makedirs(directory, exist_ok=True)
    Path(directory, CONFIG_NAME).write_text(cfgmod.dump(cfg), encoding="utf-8")


def model_spec_from(cfg, num_classes, architecture=None) -> ModelSpec:
    try:
        return ModelSpec(
            architecture=architecture or cfg["model.architecture"],
            input_shape=(cfg["data.channels"], cfg["data.height"], cfg["data.width"]),
            num_classes=num_classes,
            width_multiplier=cfg["model.width_multiplier"],
            head=cfg["model.head"] or None,
            seed=cfg["model.seed"],
        )
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None


def train_config_from(cfg) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=cfg["train.epochs"],
            batch_size=cfg["train.batch_size"],
            learning_rate=cfg["train.learning_rate"],
            momentum=cfg["train.momentum"],
            seed=cfg["train.seed"],
            patience=cfg["train.patience"],
            aux_weight=cfg["train.aux_weight"],
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None


def split_spec_from(cfg) -> SplitSpec:
    try:
        return SplitSpec(cfg["data.train_fraction"], cfg["data.val_fraction"], cfg["data.test_fraction"], cfg["data.split_seed"])
    except ValueError as exc:
        raise ConfigError("data", str(exc)) from None


def corpus_from(cfg) -> CorpusIndex:
    if not cfg["data.root"]:
        raise ConfigError("data.root", "a corpus root is required")
    index = scan_corpus(cfg["data.root"], verify=cfg["data.verify_images"])
    if cfg["data.max_per_family"] > 0:
        index = balanced_subsample(index, cfg["data.max_per_family"], cfg["data.subsample_seed"])
    return index


def splits_from(cfg, index: CorpusIndex):
    manifests = [cfg[f"data.{name}_manifest"] for name in ("train", "val", "test")]
    if all(manifests):
        return tuple(read_manifest(m, index.families, index.root) for m in manifests)
    if any(manifests):
        raise ConfigError("data.train_manifest", "give all three manifests or none")
    return stratified_split(index, split_spec_from(cfg))


def snapshot_meta(model: Model, families) -> str:
    lines = [model.spec.to_config()]
    lines += [f"family.{i} = {f}\n" for i, f in enumerate(families)]
    return "".join(lines)


def parse_snapshot_meta(meta: str):
    values, families = {}, {}
    for line in meta.splitlines():
        if "=" not in line:
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key.startswith("family."):
            families[int(key.split(".", 1)[1])] = value
        elif key.startswith("model."):
            values[key[len("model."):]] = value
    spec = ModelSpec.from_mapping(values)
    return spec, tuple(families[i] for i in sorted(families))


def save_model(model: Model, families, path) -> int:
    return save_snapshot(path, snapshot_meta(model, families), model.state_dict())


def load_model(path):
    meta, tensors = load_snapshot(path)
    spec, families = parse_snapshot_meta(meta)
    model = build_model(spec)
    model.load_state_dict(tensors)
    return model, families


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")


def train_one(cfg, index, splits, architecture, out_dir):
    """Train one architecture, write snapshot + history, return (model, history)."""
    train_split, val_split, _ = splits
    spec = model_spec_from(cfg, len(index.families), architecture)
    model = build_model(spec)
    model, history = train(model, train_split, val_split, train_config_from(cfg))
    os.makedirs(out_dir, exist_ok=True)
    save_model(model, index.families, os.path.join(out_dir, "model.snap"))
    _write(os.path.join(out_dir, "history.csv"), history.to_csv())
    return model, history


def write_eval(report: EvalReport, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, f"{report.model_id}.report")
    emit_report(report, "csv", stem + ".csv")
    emit_report(report, "markdown", stem + ".md")
    _write(os.path.join(out_dir, f"{report.model_id}.confusion.csv"), confusion_csv(report))
    return stem + ".csv"


# -- subcommands -------------------------------------------------------------

def cmd_convert(args):
    os.makedirs(args.out, exist_ok=True)
    inputs = []
    for item in args.inputs:
        if os.path.isdir(item):
            for dirpath, dirnames, filenames in os.walk(item):
                dirnames.sort()
                inputs += [os.path.join(dirpath, f) for f in sorted(filenames)]
        else:
            inputs.append(item)
    width = None if args.width == "auto" else int(args.width)
    if width is not None and width < 1:
        raise ConfigError("--width", "must be >= 1 or 'auto'")
    failures = 0
    for path in inputs:
        try:
            size = os.path.getsize(path)
            image = convert_file(path, width)
            dest = os.path.join(args.out, os.path.basename(path) + ".pgm")
            write_pgm(image, dest)
            print(f"{path},{size},{image.width},{image.height}")
            if args.sections:
                with open(path, "rb") as fh:
                    try:
                        for s in parse_sections(fh.read()):
                            print(f"  section {s.name} offset={s.file_offset} size={s.file_size} flags=0x{s.characteristics:08x}")
                    except (NotPE, Truncated) as exc:
                        print(f"  no section table: {exc}")
        except (OSError, MalvisError) as exc:
            failures += 1
            print(f"error: {path}: {exc}", file=sys.stderr)
    return EXIT_DATA if failures else EXIT_OK


def cmd_stats(args):
    index = scan_corpus(args.root, verify=not args.no_verify)
    sys.stdout.write(class_stats_csv(index))
    return EXIT_OK


def cmd_split(args):
    try:
        fractions = tuple(float(v) for v in args.fractions.split(","))
        spec = SplitSpec(*fractions, seed=args.seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError("--fractions", str(exc)) from None
    index = scan_corpus(args.root, verify=not args.no_verify)
    if args.max_per_family:
        index = balanced_subsample(index, args.max_per_family, args.subsample_seed)
    os.makedirs(args.out, exist_ok=True)
    for name, part in zip(("train", "val", "test"), stratified_split(index, spec)):
        dest = os.path.join(args.out, f"{name}.txt")
        write_manifest(part, dest)
        print(f"{dest},{len(part)}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config, args.set)
    out = cfg["run.output_dir"]
    index = corpus_from(cfg)
    splits = splits_from(cfg, index)
    write_config(cfg, out)
    _, history = train_one(cfg, index, splits, None, out)
    print(f"trained {cfg['model.architecture']} for {len(history)} epochs; best val acc "
          f"{max(history.val_acc):.4f} at epoch {history.best_epoch}; outputs in {out}")
    return EXIT_OK


def _root_for(args):
    if args.root:
        return args.root
    beside = Path(args.snapshot).with_name(CONFIG_NAME)
    if beside.exists():
        cfg = cfgmod.parse_config_text(beside.read_text(encoding="utf-8"), str(beside))
        if cfg.get("data.root"):
            return cfg["data.root"]
    raise ConfigError("--root", "corpus root not given and no run_config.txt beside the snapshot")


def cmd_eval(args):
    model, families = load_model(args.snapshot)
    split = read_manifest(args.manifest, families, _root_for(args))
    model_id = args.model_id or model.spec.architecture
    report = evaluate(model, split, model_id, Path(args.manifest).stem)
    dest = write_eval(report, args.out)
    sys.stdout.write(render_report(report, "markdown"))
    log.info("wrote %s", dest)
    return EXIT_OK


def _report_id(path):
    name = os.path.basename(path)
    return name[: -len(".report.csv")] if name.endswith(".report.csv") else os.path.splitext(name)[0]


def cmd_compare(args):
    rows = []
    for path in args.reports:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise MalvisError(f"cannot read report {path}: {exc}") from exc
        try:
            rows.append((_report_id(path), parse_report_csv(text, path)))
        except ValueError as exc:
            raise MalvisError(str(exc)) from exc
    table = compare_models(rows)
    if args.out:
        emit_report(table, "csv", args.out + ".csv")
        emit_report(table, "markdown", args.out + ".md")
    sys.stdout.write(render_report(table, args.format))
    return EXIT_OK


def gradcheck_architecture(architecture, shape=(1, 8, 8), num_classes=3, width=0.25, seed=0, per_tensor=200):
    spec = ModelSpec(architecture, shape, num_classes, width, seed=seed)
    model = build_model(spec)
    nudge_biases(model, seed + 1)
    rng = SplitMix64(seed + 2)
    x = rng.uniform(0.0, 1.0, (2,) + tuple(spec.input_shape))
    labels = np.array([rng.randbelow(num_classes) for _ in range(2)])
    return model_grad_check_detail(model, x, labels, indices=check_indices(model, per_tensor, seed + 3))


def cmd_gradcheck(args):
    try:
        shape = tuple(int(v) for v in args.shape.split(","))
    except ValueError:
        raise ConfigError("--shape", f"expected C,H,W, got {args.shape!r}") from None
    err, kinks = gradcheck_architecture(args.architecture, shape, args.classes, args.width, args.seed, args.per_tensor or None)
    ok = err < GRADCHECK_TOL
    note = f" ({len(kinks)} coordinates re-measured with a shorter step)" if kinks else ""
    print(f"{'PASS' if ok else 'FAIL'} {args.architecture} max_rel_err={err:.3e} {'<' if ok else '>='} {GRADCHECK_TOL:g}{note}")
    if not ok:
        raise NumericFailure(f"gradient check failed for {args.architecture}")
    return EXIT_OK


def run_repro(cfg):
    """split -> train -> eval -> compare for every configured architecture."""
    out = cfg["run.output_dir"]
    index = corpus_from(cfg)
    splits = splits_from(cfg, index)
    write_config(cfg, out)
    manifest_dir = os.path.join(out, "manifests")
    os.makedirs(manifest_dir, exist_ok=True)
    for name, part in zip(("train", "val", "test"), splits):
        write_manifest(part, os.path.join(manifest_dir, f"{name}.txt"))
    reports = []
    for arch in cfg["repro.architectures"]:
        arch_dir = os.path.join(out, arch)
        model, _ = train_one(cfg, index, splits, arch, arch_dir)
        report = evaluate(model, splits[2], arch, "test")
        write_eval(report, arch_dir)
        reports.append(report)
        log.info("%s test accuracy %.4f", arch, report.overall_accuracy)
    table = compare_models(reports)
    emit_report(table, "csv", os.path.join(out, "comparison.csv"))
    emit_report(table, "markdown", os.path.join(out, "comparison.md"))
    return reports, table


def cmd_repro(args):
    cfg = load_config(args.config, args.set)
    _, table = run_repro(cfg)
    sys.stdout.write(render_report(table, "markdown"))
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser():
    p = _Parser(prog="malvis", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("convert", help="render binaries as byte-plot PGM images")
    c.add_argument("inputs", nargs="+", help="files or directories")
    c.add_argument("-o", "--out", required=True)
    c.add_argument("--width", default="auto", help="'auto' (size schedule) or a pixel width")
    c.add_argument("--sections", action="store_true", help="also list PE sections")
    c.set_defaults(func=cmd_convert)

    s = sub.add_parser("stats", help="per-family sample counts as CSV")
    s.add_argument("root")
    s.add_argument("--no-verify", action="store_true", help="skip image decodability checks")
    s.set_defaults(func=cmd_stats)

    sp = sub.add_parser("split", help="write stratified train/val/test manifests")
    sp.add_argument("root")
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--fractions", default="0.7,0.15,0.15")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-per-family", type=int, default=0)
    sp.add_argument("--subsample-seed", type=int, default=0)
    sp.add_argument("--no-verify", action="store_true")
    sp.set_defaults(func=cmd_split)

    for name, func, helptext in (("train", cmd_train, "train one model"), ("repro", cmd_repro, "split, train, evaluate and compare all architectures")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("config", nargs="?", help="key = value config file")
        t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value")
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="evaluate a snapshot on a manifest")
    e.add_argument("snapshot")
    e.add_argument("manifest")
    e.add_argument("--root")
    e.add_argument("-o", "--out", default=".")
    e.add_argument("--model-id")
    e.set_defaults(func=cmd_eval)

    cm = sub.add_parser("compare", help="rank report CSVs by overall accuracy")
    cm.add_argument("reports", nargs="+")
    cm.add_argument("-o", "--out", help="write <OUT>.csv and <OUT>.md")
    cm.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    cm.set_defaults(func=cmd_compare)

    g = sub.add_parser("gradcheck", help="finite-difference check of a whole architecture")
    g.add_argument("architecture", choices=ARCHITECTURES)
    g.add_argument("--shape", default="1,8,8")
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--width", type=float, default=0.25)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--per-tensor", type=int, default=200, help="coordinates probed per tensor (0 = all)")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergedLoss, NumericFailure) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MalvisError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
