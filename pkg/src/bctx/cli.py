"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on data errors. Diagnostics
go to standard error; machine-readable output goes to files or standard
output.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, fusion
from .apk import concat_dex_bytes, open_apk
from .axml import parse_manifest
from .catalog import load_catalog
from .dex import parse_dex
from .errors import BctxError
from .fixtures import forge_apk, forge_corpus
from .harness import cache, protocols
from .harness.dataset import Dataset
from .iccg import build_iccg
from .image import image_from_bytes, render_png
from .pipeline import ExtractConfig

log = logging.getLogger("bctx")

DEFAULT_SEED = 42
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


# -- config files --------------------------------------------------------------

def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; values may be quoted."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        out[key] = value
    return out


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    if isinstance(default, tuple):
        return tuple(v.strip() for v in value.strip("[]").replace('"', "").split(",") if v.strip())
    try:
        return type(default)(value)
    except ValueError:
        raise UsageError(f"cannot read {value!r} as {type(default).__name__}") from None


def train_config_from(path: Optional[str], seed: Optional[int]) -> fusion.TrainConfig:
    """Built-in defaults, overridden by the config file, overridden by flags."""
    profile = {}
    if path:
        profile = parse_config_text(Path(path).read_text(encoding="utf-8"))
    base = fusion.TrainConfig()
    if profile.pop("profile", "desk") == "full":
        base = fusion.TrainConfig.full_profile()
    kw = {}
    fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    for key, value in profile.items():
        if key not in fields:
            raise UsageError(f"unknown config key {key!r}")
        kw[key] = _coerce(value, fields[key])
    if seed is not None:
        kw["seed"] = seed
    try:
        return dataclasses.replace(base, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- subcommands -----------------------------------------------------------------

def _write_json(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_extract(args) -> int:
    config = ExtractConfig(backend=args.backend, catalog_path=args.catalog)
    report = cache.extract_all(args.manifest, args.out, config, jobs=args.jobs)
    print(f"extracted {len(report.written)}, up to date {len(report.skipped)}, failed {len(report.errors)}",
          file=sys.stderr)
    for e in report.errors:
        print(f"  {e['id']}: {e['error']}", file=sys.stderr)
    return EXIT_OK


def cmd_render(args) -> int:
    render_png(image_from_bytes(concat_dex_bytes(open_apk(args.apk))), args.png)
    return EXIT_OK


def cmd_graph(args) -> int:
    bundle = open_apk(args.apk)
    graph = build_iccg([parse_dex(d) for _, d in bundle.dex_entries], parse_manifest(bundle.manifest_bytes))
    Path(args.dot).write_text(graph.to_json() + "\n" if args.json else graph.to_dot())
    return EXIT_OK


def _split(ds: Dataset, seed: int, test_fraction: float) -> tuple[Dataset, Dataset]:
    ds = ds.canonical()
    tr, te = protocols.stratified_split(ds.ids, ds.labels, test_fraction, seed)
    return ds.subset(tr), ds.subset(te)


def cmd_train(args) -> int:
    config = train_config_from(args.config, args.seed)
    ds = cache.dataset_from_cache(args.cache)
    catalog = load_catalog(args.catalog)
    if args.test_fraction > 0:
        train_ds, _ = _split(ds, config.seed, args.test_fraction)
    else:
        train_ds = ds
    res = protocols.fit(train_ds, config, class_labels=ds.class_labels, catalog=catalog)
    model = dataclasses.replace(res.model, info={
        "train_config": fusion.config_dict(config),
        "split_seed": config.seed,
        "test_fraction": args.test_fraction,
        "train_ids": len(train_ds),
    })
    fusion.save_model(model, args.model)
    if args.log:
        Path(args.log).write_text(res.log.to_jsonl())
    last = res.log.epochs[-1]
    print(f"trained on {len(train_ds)} apps: loss {last['loss']:.4f}, train accuracy {last['accuracy']:.4f}",
          file=sys.stderr)
    return EXIT_OK


def _load_model(args, train_ds: Optional[Dataset] = None) -> fusion.FusionModel:
    catalog = load_catalog(args.catalog)
    vfp = None
    if train_ds is not None:
        vfp = protocols.training_vocabulary(train_ds).fingerprint()
    return fusion.load_model(args.model, vocab_fingerprint=vfp, catalog_fingerprint=catalog.fingerprint(),
                             allow_mismatch=args.allow_mismatch)


def _held_out(args) -> tuple[fusion.FusionModel, Dataset]:
    """The model and the test split it was held out from (the whole cache if it was trained on all of it)."""
    ds = cache.dataset_from_cache(args.cache, with_streams=getattr(args, "op", None) == "dead_bytes")
    probe = fusion.load_model(args.model, allow_mismatch=True)
    frac = probe.info.get("test_fraction", 0)
    if frac:
        train_ds, test_ds = _split(ds, probe.info["split_seed"], frac)
    else:
        train_ds = test_ds = ds.canonical()
    return _load_model(args, train_ds), test_ds


def cmd_eval(args) -> int:
    if args.kfold:
        probe = fusion.load_model(args.model, allow_mismatch=True)
        config = fusion.TrainConfig(**{**probe.info.get("train_config", {}),
                                       "views": tuple(probe.info.get("train_config", {}).get("views", fusion.VIEWS))})
        ds = cache.dataset_from_cache(args.cache)
        cv = protocols.cross_validate(ds, config, folds=args.kfold, seed=config.seed,
                                      catalog=load_catalog(args.catalog))
        _write_json(cv.to_dict(), args.out)
        print(f"{args.kfold}-fold macro F1 {cv.mean_macro_f1:.4f} +/- {cv.std_macro_f1:.4f}",
              file=sys.stdout if args.out else sys.stderr)
        return EXIT_OK
    model, test_ds = _held_out(args)
    report = protocols.evaluate(model, test_ds)
    _write_json(report.to_dict(), args.out)
    print(report.table(), file=sys.stdout if args.out else sys.stderr)
    return EXIT_OK


def cmd_importance(args) -> int:
    model, test_ds = _held_out(args)
    views = [args.view] if args.view != "all" else list(model.views)
    out = {v: protocols.permutation_importance(model, test_ds, v, args.repeats, args.seed, args.metric)
           for v in views}
    _write_json({"metric": args.metric, "repeats": args.repeats, "seed": args.seed, "importance": out}, args.out)
    return EXIT_OK


def cmd_perturb(args) -> int:
    if args.op == "manifest_flip" and not args.model:
        raise UsageError("manifest_flip needs --model to know the vocabulary")
    if args.op == "view_zero" and not args.view:
        raise UsageError("view_zero needs --view")
    model = None
    if args.model:
        model, held = _held_out(args)
        res = protocols.robustness(model, held, args.op, args.mag, args.seed, view=args.view)
        _write_json(res.to_dict(), None)
    if args.out:
        # the perturbed cache always covers the whole corpus, not just the held-out split
        ds = cache.dataset_from_cache(args.cache, with_streams=args.op == "dead_bytes")
        records = {r.app_id: r for r in cache.load_cache(args.cache)}
        pert = protocols.perturb(ds, args.op, args.mag, args.seed,
                                 vocab_tokens=model.vocab_tokens if model else None, view=args.view)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        for i, app_id in enumerate(pert.ids):
            rec = records[app_id]
            cache.write_record(args.out, dataclasses.replace(
                rec, f_bin=pert.f_bin[i].copy(), tokens=tuple(pert.tokens[i]),
                f_lib=pert.f_lib[i].astype(rec.f_lib.dtype),
                warnings=rec.warnings + (f"perturbed: {args.op} {args.mag} seed {args.seed}",)))
    return EXIT_OK


def cmd_forge(args) -> int:
    if args.corpus:
        forge_corpus(args.out, n_per_class=args.per_class, seed=args.seed)
        return EXIT_OK
    if not args.spec:
        raise UsageError("forge needs --spec (or --corpus)")
    forge_apk(json.loads(Path(args.spec).read_text(encoding="utf-8")), args.out)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bctx", description="Multi-view static features and fusion classifier for Android apps.")
    p.add_argument("--version", action="version", version=f"bctx {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=None if name == "train" else DEFAULT_SEED,
                        help=f"random seed (default {DEFAULT_SEED})")
        sp.add_argument("--catalog", help="SDK catalog file (default: bundled catalog)")
        return sp

    sp = add("extract", cmd_extract, "extract feature records for every app in a corpus manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="cache directory")
    sp.add_argument("--backend", choices=("texture", "cnn"), default="texture")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("render", cmd_render, "write the bytecode image of an APK as PNG")
    sp.add_argument("--apk", required=True)
    sp.add_argument("--png", required=True)

    sp = add("graph", cmd_graph, "write the inter-component call graph of an APK")
    sp.add_argument("--apk", required=True)
    sp.add_argument("--dot", required=True, help="output file")
    sp.add_argument("--json", action="store_true", help="write JSON instead of DOT")

    sp = add("train", cmd_train, "train a fusion model on a feature cache")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--config", help="key = value training config")
    sp.add_argument("--model", required=True, help="output model file")
    sp.add_argument("--log", help="JSON-lines training log")
    sp.add_argument("--test-fraction", type=float, default=0.2,
                    help="hold out this stratified fraction for eval (0 trains on everything)")

    for name, func, text in (("eval", cmd_eval, "evaluate a model on its held-out split or by k-fold CV"),
                             ("importance", cmd_importance, "permutation importance of a feature view"),
                             ("perturb", cmd_perturb, "apply a robustness perturbation")):
        sp = add(name, func, text)
        sp.add_argument("--cache", required=True)
        sp.add_argument("--model", required=name != "perturb")
        sp.add_argument("--allow-mismatch", action="store_true", help="ignore fingerprint mismatches")
        if name == "eval":
            sp.add_argument("--kfold", type=int, default=0)
            sp.add_argument("--out", help="report JSON file (default stdout)")
        elif name == "importance":
            sp.add_argument("--view", required=True, choices=("bin", "cxt", "lib", "all"))
            sp.add_argument("--repeats", type=int, default=10)
            sp.add_argument("--metric", choices=("accuracy", "macro_f1"), default="accuracy")
            sp.add_argument("--out")
        else:
            sp.add_argument("--op", required=True, help="dead_bytes, manifest_flip or view_zero")
            sp.add_argument("--mag", type=float, default=0.0)
            sp.add_argument("--view", choices=("bin", "cxt", "lib"))
            sp.add_argument("--out", help="write perturbed records to this cache directory")

    sp = add("forge", cmd_forge, "build an APK from a JSON spec, or a labelled demo corpus")
    sp.add_argument("--spec")
    sp.add_argument("--out", required=True)
    sp.add_argument("--corpus", action="store_true", help="write a forged corpus and manifest into --out")
    sp.add_argument("--per-class", type=int, default=5)
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bctx {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BctxError, OSError, ValueError, KeyError) as exc:
        print(f"bctx {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
