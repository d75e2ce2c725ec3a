"""
Command-line front end.

    caepad synth     --out DIR [--config spec.json] [--seed N]
    caepad train     --config experiment.json [--seed N] [--out DIR]
    caepad calibrate --checkpoint model.cae --val MANIFEST --out DIR
    caepad evaluate  --checkpoint [NAME=]model.cae ... --val MANIFEST --test MANIFEST ... --out DIR
    caepad roc       --scores scores.csv ... --out DIR

Failures exit non-zero and print one JSON line ``{"error": ..., "message": ...}``
on standard error.
"""
import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import data as D
from . import experiment as E
from . import metrics as MT
from .model import CaeConfig, ConfigError, Threshold, build_model
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("caepad")


class CliError(Exception):
    """Usage problem detected by the command layer."""


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _writable_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from None
    return path


# -- synth --------------------------------------------------------------------------


def _domains_from_spec(spec, seed):
    """Default domains with optional per-domain overrides from a spec file.

    Spec keys: ``seed``, ``scale`` and ``domains`` mapping a domain id to
    ``{"counts": {split: [clients, imposters]}, "attack_strength": x, "attacks": [...]}``.
    """
    allowed = {"seed", "scale", "domains"}
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f"unknown synth spec keys {sorted(unknown)}")
    scale = spec.get("scale", E.SCALE)
    if not isinstance(scale, (int, float)) or scale <= 0:
        raise ConfigError(f"scale must be a positive number, got {scale!r}")
    domains = E.default_domains(seed=seed, scale=scale)
    for dom_id, over in spec.get("domains", {}).items():
        if dom_id not in domains:
            raise ConfigError(f"unknown domain {dom_id!r}; expected one of {sorted(domains)}")
        base = domains[dom_id]
        kwargs = {}
        if "counts" in over:
            kwargs["counts"] = {k: tuple(v) for k, v in over["counts"].items()}
        if "attack_strength" in over:
            kwargs["attack_strength"] = float(over["attack_strength"])
        if "attacks" in over:
            kwargs["attacks"] = tuple(over["attacks"])
        try:
            domains[dom_id] = D.SynthDomainSpec(
                base.domain_id, base.source, base.style,
                kwargs.get("attacks", base.attacks),
                kwargs.get("attack_strength", base.attack_strength),
                base.seed,
                kwargs.get("counts", base.counts),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad override for domain {dom_id!r}: {exc}") from None
    return domains


def cmd_synth(args):
    spec = read_json(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else spec.get("seed", 0)
    out = _writable_dir(args.out)
    domains = _domains_from_spec(spec, seed)
    merged = E.generate(out, domains, seed=seed)
    counts = {d: domains[d].count for d in domains}
    print(json.dumps({"out": str(out), "images": len(merged), "per_domain": counts}))


# -- train --------------------------------------------------------------------------


def load_experiment(path, seed=None, out=None):
    cfg = read_json(path)
    base = Path(path).parent
    if "manifest" not in cfg:
        raise ConfigError(f"{path}: experiment config needs a 'manifest' entry")
    seed = seed if seed is not None else cfg.get("seed", 0)
    train_kw = dict(cfg.get("train", {}))
    train_kw["seed"] = seed
    return {
        "manifest": (base / cfg["manifest"]).resolve(),
        "composition": cfg.get("composition", "D1"),
        "train": TrainConfig.from_dict(train_kw),
        "model": CaeConfig.from_dict(cfg.get("model", {})),
        "out": Path(out) if out else (base / cfg.get("out", "run")).resolve(),
        "seed": seed,
    }


def cmd_train(args):
    exp = load_experiment(args.config, args.seed, args.out)
    out = _writable_dir(exp["out"])
    manifest = D.load_manifest(exp["manifest"])
    composition = D.get_composition(exp["composition"])
    items = D.assemble(manifest, composition, "train")
    val = manifest.select(split="val", sources=set(composition.sources), label="client")
    val_images = [D.load_face(s.path) for s in val]

    t0 = time.perf_counter()
    model = build_model(exp["model"], seed=exp["seed"])
    model, history = train(model, [x for x, _, _ in items], val_images, exp["train"])
    elapsed = time.perf_counter() - t0

    settings = {
        "composition": {"name": composition.name, "sources": list(composition.sources)},
        "train": asdict(exp["train"]),
        "model": exp["model"].to_dict(),
        "seed": exp["seed"],
        "n_train": len(items),
    }
    digest = E.config_hash(settings)
    save_checkpoint(model, out / "model.cae", meta={"config_hash": digest, **settings})
    history.to_csv(out / "history.csv")
    write_json({**settings, "config_hash": digest, "seconds": elapsed, "manifest": str(exp["manifest"])}, out / "run.json")
    print(json.dumps({"checkpoint": str(out / "model.cae"), "final_loss": history.epoch_loss[-1], "epochs": len(history)}))


# -- calibrate / evaluate --------------------------------------------------------------


def _parse_named(value):
    name, sep, path = value.partition("=")
    if not sep:
        return Path(value).stem, Path(value)
    return name, Path(path)


def _load_split(path, split, sources=None):
    manifest = D.load_manifest(path)
    return D.assemble_split(manifest, split, sources)


def cmd_calibrate(args):
    out = _writable_dir(args.out)
    model = load_checkpoint(args.checkpoint)
    val = _load_split(args.val, "val", args.val_sources)
    scores = MT.score_dataset(model, val, provenance="val")
    threshold, eer = MT.eer_threshold(scores, provenance=f"EER on validation ({Path(args.val).name})")
    scores.to_csv(out / "val_scores.csv")
    write_json({"threshold": threshold.value, "eer": eer, "provenance": threshold.provenance}, out / "threshold.json")
    print(json.dumps({"threshold": threshold.value, "eer": eer}))


def _test_sets(args):
    tests = {}
    for spec in args.test:
        name, path = _parse_named(spec)
        manifest = D.load_manifest(path)
        if args.split_by_source:
            for src in sorted({s.source for s in manifest.select(split="test")}):
                tests[src] = D.assemble_split(manifest, "test", [src])
        else:
            tests[name] = D.assemble_split(manifest, "test")
    if not tests:
        raise CliError("evaluate needs at least one --test manifest")
    return tests


def cmd_evaluate(args):
    out = _writable_dir(args.out)
    val = _load_split(args.val, "val", args.val_sources)
    tests = _test_sets(args)
    if args.on_val:
        tests["val"] = val
    checkpoints = [_parse_named(c) for c in args.checkpoint]
    report = {"val_manifest": str(args.val), "models": {}}
    auc_tab, hter_tab = {}, {}
    rocs = {}
    for name, path in checkpoints:
        model = load_checkpoint(path)
        ev = E.evaluate(model, val, tests, name=name)
        ev.val_scores.to_csv(out / f"{name}__val_scores.csv")
        entry = {"checkpoint": str(path), "threshold": ev.threshold.value, "val_eer": ev.val_eer, "tests": {}}
        for test_name, r in ev.tests.items():
            r["scores"].to_csv(out / f"{name}__{test_name}_scores.csv")
            r["roc"].to_csv(out / f"{name}__{test_name}_roc.csv")
            rocs.setdefault(test_name, {})[name] = r["roc"]
            entry["tests"][test_name] = {k: r[k] for k in ("auc", "hter", "fpr", "fnr", "eer")}
            auc_tab.setdefault(test_name, {})[name] = r["auc"]
            hter_tab.setdefault(test_name, {})[name] = r["hter"]
        report["models"][name] = entry
    for test_name, curves in rocs.items():
        MT.roc_svg(curves, out / f"roc_{test_name}.svg", title=f"ROC on {test_name}")
    _write_table(auc_tab, out / "auc_table.csv")
    _write_table(hter_tab, out / "hter_table.csv")
    write_json(report, out / "report.json")
    print(E.format_table(auc_tab, "AUC"))
    print(E.format_table(hter_tab, "HTER at validation-EER threshold"))


def _write_table(tab, path):
    cols = list(next(iter(tab.values())))
    lines = ["test," + ",".join(cols)]
    for row, vals in tab.items():
        lines.append(row + "," + ",".join(repr(vals[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_roc(args):
    out = _writable_dir(args.out)
    curves = {}
    result = {}
    for spec in args.scores:
        name, path = _parse_named(spec)
        scores = MT.ScoreSet.from_csv(path)
        roc = MT.roc_curve(scores)
        roc.to_csv(out / f"{name}_roc.csv")
        curves[name] = roc
        result[name] = {"auc": roc.auc}
        if args.threshold is not None:
            op = MT.hter_at(scores, Threshold(args.threshold))
            result[name].update(hter=op.hter, fpr=op.fpr, fnr=op.fnr)
    MT.roc_svg(curves, out / "roc.svg")
    write_json(result, out / "roc.json")
    print(json.dumps(result))


# -- entry point ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of printing usage and exiting."""

    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="caepad", description="One-class convolutional autoencoder anti-spoofing toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic domains and manifests")
    s.add_argument("--config", help="JSON spec with seed/scale/per-domain overrides")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one composition")
    t.add_argument("--config", required=True, help="experiment JSON")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="EER threshold on a validation manifest")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--val", required=True, help="manifest; its 'val' rows are used")
    c.add_argument("--val-sources", nargs="+")
    c.add_argument("--out", required=True)
    c.add_argument("--config", help="unused; accepted for flag uniformity")
    c.add_argument("--seed", type=int, help="unused; accepted for flag uniformity")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="calibrate on validation, report AUC/HTER per test set")
    e.add_argument("--checkpoint", required=True, action="append", help="[NAME=]path, repeatable")
    e.add_argument("--val", required=True)
    e.add_argument("--val-sources", nargs="+")
    e.add_argument("--test", action="append", default=[], help="[NAME=]manifest, repeatable; its 'test' rows are used")
    e.add_argument("--split-by-source", action="store_true", help="one test set per source tag")
    e.add_argument("--on-val", action="store_true", help="also report the validation set as a test set")
    e.add_argument("--out", required=True)
    e.add_argument("--config", help="unused; accepted for flag uniformity")
    e.add_argument("--seed", type=int, help="unused; accepted for flag uniformity")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("roc", help="ROC/AUC from stored score CSVs")
    r.add_argument("--scores", required=True, action="append", help="[NAME=]scores.csv, repeatable")
    r.add_argument("--threshold", type=float)
    r.add_argument("--out", required=True)
    r.add_argument("--config", help="unused; accepted for flag uniformity")
    r.add_argument("--seed", type=int, help="unused; accepted for flag uniformity")
    r.set_defaults(func=cmd_roc)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one stderr line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
