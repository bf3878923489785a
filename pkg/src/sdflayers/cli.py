"""Command-line pipelines: phantom-gen, sdf-build, train, predict, extract, corrupt,
eval, uncertainty-report and grad-check.

Settings come from an INI file (``--config``) whose sections and keys are
listed in ``SCHEMA``; command-line flags override file values. Every command
writes ``config.resolved.ini`` and ``run.json`` (seed, input hashes) next to
its outputs. Failures print one JSON line on stderr and exit with 2 (config),
3 (input) or 4 (numerical).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from sdflayers.artifacts import KINDS, NoiseConfig, corrupt
from sdflayers.boundary import ExtractionConfig, extract
from sdflayers.estimator import LayerSegmenter
from sdflayers.evaluation import mae_corpus, uncertainty_experiment
from sdflayers.grid import (FormatError, load_curves, load_scan, parse_curves_csv, read_grid, save_curves,
                            save_scan, write_grid)
from sdflayers.nn import gradcheck
from sdflayers.nn.network import FIELD_HEADS, PROBABILISTIC_HEADS
from sdflayers.nn.train import NumericalError
from sdflayers.phantom import PhantomConfig, export_corpus, generate, load_corpus, read_manifest
from sdflayers.prob import ProbabilisticCurve, ProbabilisticSDF, propagate_uncertainty
from sdflayers.sdf import save_sdf, signed_distance

log = logging.getLogger("sdflayers")

EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERIC = 2, 3, 4
OPTIONAL = object()

# section -> key -> (type, default)
SCHEMA = {
    "run": {"seed": (int, 0)},
    "phantom": {
        "n": (int, 200), "height": (int, 64), "width": (int, 64), "n_layers": (int, 3),
        "smoothness": (int, 4), "min_gap": (float, 4.0), "mean_gap": (float, 8.0),
        "amplitude": (float, 4.0), "bump_rate": (float, 0.3), "texture_noise_sd": (float, 0.06),
        "format": (str, "flat-binary"),
    },
    "sdf": {"construction": (str, "vertical"), "method": (str, "danielsson")},
    "model": {"head": (str, "p_sdf"), "levels": (int, 3), "base_channels": (int, 8)},
    "train": {
        "epochs": (int, 20), "batch_size": (int, 8), "learning_rate": (float, 1e-3),
        "delta": (float, 29.0), "noise_sd": (float, 0.0), "flip": (bool, False),
        "sigma_warmup": (int, 0), "lr_schedule": (str, "constant"),
    },
    "extraction": {"mode": (str, "soft"), "s_const": (float, 2.0), "level": (float, 0.0)},
    "noise": {
        "kind": (str, "speckle"), "x0": (int, OPTIONAL), "x1": (int, OPTIONAL),
        "shadow_mode": (str, "normalized"), "speckle_p": (float, OPTIONAL), "delta_max": (int, 3),
    },
    "evaluation": {"n_regions": (int, 10), "region_width": (int, 0), "kinds": (str, ",".join(KINDS))},
}


class CliError(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code, self.kind = code, kind


def config_error(msg):
    return CliError(EXIT_CONFIG, "config", msg)


def input_error(msg):
    return CliError(EXIT_INPUT, "input", msg)


def _convert(typ, raw, where):
    if raw is OPTIONAL or raw is None:
        return None
    if isinstance(raw, str) and raw.strip() == "" and typ is not str:
        return None
    try:
        if typ is bool and isinstance(raw, str):
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except (TypeError, ValueError):
        raise config_error(f"{where}: cannot read {raw!r} as {typ.__name__}") from None


def resolve_config(path=None, overrides=None):
    """Defaults, then the INI file, then ``overrides`` (``{"section.key": value}``)."""
    cfg = {s: {k: _convert(t, d, f"{s}.{k}") for k, (t, d) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise input_error(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise config_error(f"{path}: {str(exc).splitlines()[0]}") from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise config_error(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise config_error(f"unknown key {section}.{key}")
                cfg[section][key] = _convert(SCHEMA[section][key][0], raw, f"{section}.{key}")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".")
        cfg[section][key] = _convert(SCHEMA[section][key][0], value, dotted)
    return cfg


def render_config(cfg):
    lines = []
    for section in SCHEMA:
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            v = cfg[section][key]
            lines.append(f"{key} = {'' if v is None else _ini_value(v)}")
        lines.append("")
    return "\n".join(lines)


def _ini_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run_record(out, cfg, command, inputs=()):
    """``config.resolved.ini`` and ``run.json`` with the seed and input hashes."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.ini").write_text(render_config(cfg))
    hashes = {}
    for p in inputs:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for q in files:
            hashes[str(q)] = sha256_file(q)
    record = {"command": command, "seed": cfg["run"]["seed"], "inputs": hashes}
    (out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise input_error(f"{what} not found: {path}")
    return p


def _build(factory, **kw):
    try:
        return factory(**kw)
    except (TypeError, ValueError) as exc:
        raise config_error(str(exc)) from None


# configs ---------------------------------------------------------------------


def phantom_config(cfg):
    p = cfg["phantom"]
    keys = ("height", "width", "n_layers", "smoothness", "min_gap", "mean_gap", "amplitude",
            "bump_rate", "texture_noise_sd")
    kw = {k: p[k] for k in keys}
    base = PhantomConfig()
    if p["n_layers"] != base.n_layers:
        # spread band intensities evenly when the layer count changes
        kw["intensity_levels"] = tuple(np.linspace(0.1, 0.9, p["n_layers"] + 1).round(6).tolist())
        kw["labels"] = tuple(f"L{i}" for i in range(p["n_layers"]))
    return _build(PhantomConfig, seed=cfg["run"]["seed"], **kw)


def segmenter(cfg):
    m, t, e = cfg["model"], cfg["train"], cfg["extraction"]
    est = LayerSegmenter(head=m["head"], levels=m["levels"], base_channels=m["base_channels"],
                         epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
                         delta=t["delta"], noise_sd=t["noise_sd"], flip=t["flip"],
                         sigma_warmup=t["sigma_warmup"], lr_schedule=t["lr_schedule"],
                         construction=cfg["sdf"]["construction"], extraction=e["mode"],
                         s_const=e["s_const"], level=e["level"], seed=cfg["run"]["seed"])
    _build(est.train_config)
    _build(est.extraction_config)
    return est


def extraction_config(cfg):
    e = cfg["extraction"]
    return _build(ExtractionConfig, level=e["level"], s_const=e["s_const"], mode=e["mode"])


def noise_config(cfg):
    n = cfg["noise"]
    region = None
    if n["x0"] is not None or n["x1"] is not None:
        if n["x0"] is None or n["x1"] is None:
            raise config_error("noise.x0 and noise.x1 must be given together")
        region = (n["x0"], n["x1"])
    return _build(NoiseConfig, kind=n["kind"], region=region, shadow_mode=n["shadow_mode"],
                  speckle_p=n["speckle_p"], delta_max=n["delta_max"], seed=cfg["run"]["seed"])


def _corpus(path):
    _existing(path, "corpus directory")
    try:
        samples = load_corpus(path)
    except FileNotFoundError as exc:
        raise input_error(str(exc)) from None
    if not samples:
        raise input_error(f"corpus {path} is empty")
    scans = np.stack([s.intensities for s, _ in samples])
    return samples, scans


def _load_model(path, cfg):
    _existing(Path(path) / "manifest.txt", "model checkpoint")
    e = cfg["extraction"]
    try:
        return LayerSegmenter.load(path, extraction=e["mode"], s_const=e["s_const"], level=e["level"])
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise input_error(f"{path}: {exc}") from None


# commands --------------------------------------------------------------------


def cmd_phantom_gen(args, cfg):
    pc = phantom_config(cfg)
    fmt = cfg["phantom"]["format"]
    if fmt not in ("flat-binary", "graymap"):
        raise config_error(f"phantom.format must be flat-binary or graymap, got {fmt!r}")
    samples = generate(pc, cfg["phantom"]["n"])
    export_corpus(samples, args.out, pc, fmt)
    write_run_record(args.out, cfg, "phantom-gen")
    print(f"wrote {len(samples)} phantoms to {args.out}")


def cmd_sdf_build(args, cfg):
    samples, scans = _corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shape = scans.shape[1:]
    s = cfg["sdf"]
    for i, (_, curves) in enumerate(samples):
        for label, c in zip(curves.labels, curves.as_array()):
            try:
                field = signed_distance(c, shape, s["construction"], s["method"])
            except ValueError as exc:
                raise config_error(str(exc)) from None
            save_sdf(field, out / f"sdf_{i:04d}_{label}.osk")
    write_run_record(out, cfg, "sdf-build", [Path(args.corpus) / "manifest.json"])
    print(f"wrote signed distance fields for {len(samples)} scans to {out}")


def cmd_train(args, cfg):
    est = segmenter(cfg)
    samples, scans = _corpus(args.corpus)
    curves = np.stack([c.as_array() for _, c in samples])

    def report(epoch, result):
        log.info("epoch %d loss %.6g", epoch, result.loss_trace[-1])

    try:
        est.fit(scans, curves, callback=report)
    except NumericalError as exc:
        raise CliError(EXIT_NUMERIC, "numerical", str(exc)) from None
    est.save(args.out)
    write_run_record(args.out, cfg, "train", [Path(args.corpus) / "manifest.json"])
    trace = est.loss_trace_
    if trace:
        print(f"trained {est.head} for {len(trace)} epochs: loss {trace[0]:.6g} -> {trace[-1]:.6g}")


def cmd_predict(args, cfg):
    est = _load_model(args.model, cfg)
    samples, scans = _corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = samples[0][1].labels
    fields = est.predict_fields(scans)
    files = []
    for i in range(scans.shape[0]):
        entry = {}
        if est.head in FIELD_HEADS:
            for k, label in enumerate(labels):
                name = f"mu_{i:04d}_{label}.osk"
                write_grid(fields["mu"][i, k], out / name, "flat-binary")
                entry.setdefault("mu", []).append(name)
                if "sigma" in fields:
                    name = f"sigma_{i:04d}_{label}.osk"
                    write_grid(fields["sigma"][i, k], out / name, "flat-binary")
                    entry.setdefault("sigma", []).append(name)
        else:
            name = f"curves_{i:04d}.csv"
            extra = {f"{lab}_sigma": fields["sigma"][i, k] for k, lab in enumerate(labels)} if "sigma" in fields else None
            save_curves(fields["mu"][i], out / name, labels, extra)
            entry["curves"] = name
        files.append(entry)
    manifest = {"head": est.head, "labels": list(labels), "shape": list(scans.shape[1:]), "files": files}
    (out / "predictions.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_run_record(out, cfg, "predict", [Path(args.model) / "params.bin", Path(args.corpus) / "manifest.json"])
    print(f"wrote {est.head} predictions for {scans.shape[0]} scans to {out}")


def _read_field(path):
    try:
        return read_grid(path, "flat-binary")
    except (OSError, FormatError) as exc:
        raise input_error(f"{path}: {exc}") from None


def cmd_extract(args, cfg):
    src = _existing(args.predictions, "predictions directory")
    manifest_path = _existing(src / "predictions.json", "predictions manifest")
    manifest = json.loads(manifest_path.read_text())
    ecfg = extraction_config(cfg)
    labels, head = manifest["labels"], manifest["head"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, entry in enumerate(manifest["files"]):
        name = f"curves_{i:04d}.csv"
        if "curves" in entry:
            text = (src / entry["curves"]).read_text()
            cols, arr = parse_curves_csv(text)
            by = dict(zip(cols, arr))
            curves = np.stack([by[lab] for lab in labels])
            flags = np.zeros(curves.shape, dtype=bool)
            sigma = np.stack([by[f"{lab}_sigma"] for lab in labels]) if f"{labels[0]}_sigma" in by else None
        else:
            mus = [_read_field(src / f) for f in entry["mu"]]
            if head == "pixelwise":
                curves = np.stack([np.argmax(m, axis=0).astype(np.float64) for m in mus])
                flags = np.zeros(curves.shape, dtype=bool)
                sigma = None
            elif "sigma" in entry:
                pcs = [propagate_uncertainty(ProbabilisticSDF(m, _read_field(src / s)), ecfg)
                       for m, s in zip(mus, entry["sigma"])]
                curves = np.stack([p.mu for p in pcs])
                flags = np.stack([p.flags for p in pcs])
                sigma = np.stack([p.sigma for p in pcs])
            else:
                pairs = [extract(m, ecfg) for m in mus]
                curves = np.stack([p[0] for p in pairs])
                flags = np.stack([p[1] for p in pairs])
                sigma = None
        # flagged columns carry a placeholder value; the flag column marks them
        curves = np.where(flags | ~np.isfinite(curves), 0.0, curves)
        extra = {f"{lab}_flag": flags[k] for k, lab in enumerate(labels)}
        save_curves(curves, out / name, labels, extra)
        if sigma is not None:
            for k, lab in enumerate(labels):
                s = np.where(flags[k] | ~np.isfinite(sigma[k]), 1.0, sigma[k])
                ProbabilisticCurve(curves[k], s, flags[k]).save(out / f"uncertainty_{i:04d}_{lab}.csv")
    write_run_record(out, cfg, "extract", [manifest_path])
    print(f"extracted curves for {len(manifest['files'])} scans to {out}")


def parse_region(text):
    """``"x0:x1"`` to an ``(x0, x1)`` column interval."""
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError:
        raise config_error(f"--region expects x0:x1, got {text!r}") from None


def cmd_corrupt(args, cfg):
    src = _existing(args.scan, "scan")
    if args.region is not None:
        cfg["noise"]["x0"], cfg["noise"]["x1"] = parse_region(args.region)
    ncfg = noise_config(cfg)
    try:
        scan = load_scan(src, normalize_values=False)
        out_scan, params = corrupt(scan, ncfg)
    except FormatError as exc:
        raise input_error(f"{src}: {exc}") from None
    except ValueError as exc:
        raise config_error(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scan(out_scan, out)
    record = {"kind": ncfg.kind, "region": list(ncfg.columns(scan.width)), "seed": ncfg.seed,
              "parameters": params, "input_sha256": sha256_file(src)}
    Path(str(out) + ".json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"wrote {ncfg.kind}-corrupted scan to {out}")


def _pred_curves(directory, labels, n):
    preds, flags = [], []
    for i in range(n):
        path = _existing(Path(directory) / f"curves_{i:04d}.csv", "prediction")
        cols, arr = parse_curves_csv(path.read_text())
        by = dict(zip(cols, arr))
        try:
            preds.append(np.stack([by[lab] for lab in labels]))
        except KeyError as exc:
            raise input_error(f"{path}: missing layer column {exc}") from None
        flags.append(np.stack([by.get(f"{lab}_flag", np.zeros(arr.shape[1])) for lab in labels]).astype(bool))
    return np.stack(preds), np.stack(flags)


def cmd_eval(args, cfg):
    truth = _existing(args.truth, "ground-truth corpus")
    manifest = read_manifest(truth)
    gts = [load_curves(truth / e["curves"], check_order=False) for e in manifest["files"]]
    labels = gts[0].labels
    preds, flags = _pred_curves(args.predictions, labels, len(gts))
    try:
        report = mae_corpus(preds, np.stack([g.as_array() for g in gts]), flags, labels)
    except ValueError as exc:
        raise input_error(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "mae.csv").write_text(report.to_csv())
    (out / "mae.txt").write_text(report.to_text())
    write_run_record(out, cfg, "eval", [truth / "manifest.json", Path(args.predictions)])
    print(report.to_text(), end="")


def cmd_uncertainty_report(args, cfg):
    est = _load_model(args.model, cfg)
    if est.head not in PROBABILISTIC_HEADS:
        raise config_error(f"uncertainty-report needs a probabilistic head, model has {est.head!r}")
    _, scans = _corpus(args.corpus)
    ev = cfg["evaluation"]
    kinds = [k.strip() for k in ev["kinds"].split(",") if k.strip()]
    unknown = [k for k in kinds if k not in KINDS]
    if unknown:
        raise config_error(f"unknown noise kinds {unknown}")
    try:
        report = uncertainty_experiment(est, scans, kinds, seed=cfg["run"]["seed"], n_regions=ev["n_regions"],
                                        region_width=ev["region_width"] or None,
                                        delta_max=cfg["noise"]["delta_max"])
    except ValueError as exc:
        raise input_error(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "variance.csv").write_text(report.to_csv())
    (out / "variance.txt").write_text(report.to_text())
    write_run_record(out, cfg, "uncertainty-report", [Path(args.model) / "params.bin",
                                                       Path(args.corpus) / "manifest.json"])
    print(report.to_text(), end="")


def cmd_grad_check(args, cfg):
    results, worst = gradcheck.run(cfg["run"]["seed"])
    for name, err in results.items():
        print(f"{name} {err:.3e}")
    print(f"max_relative_error {worst:.3e}")
    if args.out:
        write_run_record(args.out, cfg, "grad-check")
    if not worst <= gradcheck.TOLERANCE:
        raise CliError(EXIT_NUMERIC, "numerical", f"max relative error {worst:.3e} exceeds {gradcheck.TOLERANCE}")


COMMANDS = {
    "phantom-gen": cmd_phantom_gen, "sdf-build": cmd_sdf_build, "train": cmd_train,
    "predict": cmd_predict, "extract": cmd_extract, "corrupt": cmd_corrupt, "eval": cmd_eval,
    "uncertainty-report": cmd_uncertainty_report, "grad-check": cmd_grad_check,
}

# flag -> "section.key"
FLAGS = {
    "phantom-gen": [("--n", "phantom.n", int), ("--height", "phantom.height", int),
                    ("--width", "phantom.width", int), ("--n-layers", "phantom.n_layers", int),
                    ("--format", "phantom.format", str)],
    "sdf-build": [("--construction", "sdf.construction", str), ("--method", "sdf.method", str)],
    "train": [("--head", "model.head", str), ("--levels", "model.levels", int),
              ("--base-channels", "model.base_channels", int), ("--epochs", "train.epochs", int),
              ("--batch-size", "train.batch_size", int), ("--learning-rate", "train.learning_rate", float),
              ("--delta", "train.delta", float), ("--noise-sd", "train.noise_sd", float),
              ("--flip", "train.flip", str), ("--sigma-warmup", "train.sigma_warmup", int),
              ("--lr-schedule", "train.lr_schedule", str), ("--construction", "sdf.construction", str)],
    "predict": [],
    "extract": [("--mode", "extraction.mode", str), ("--s-const", "extraction.s_const", float),
                ("--level", "extraction.level", float)],
    "corrupt": [("--kind", "noise.kind", str), ("--x0", "noise.x0", int), ("--x1", "noise.x1", int),
                ("--shadow-mode", "noise.shadow_mode", str), ("--speckle-p", "noise.speckle_p", float),
                ("--delta-max", "noise.delta_max", int)],
    "eval": [],
    "uncertainty-report": [("--n-regions", "evaluation.n_regions", int),
                           ("--region-width", "evaluation.region_width", int),
                           ("--kinds", "evaluation.kinds", str), ("--mode", "extraction.mode", str),
                           ("--s-const", "extraction.s_const", float)],
    "grad-check": [],
}

POSITIONAL = {
    "phantom-gen": [("--out", True)],
    "sdf-build": [("--corpus", True), ("--out", True)],
    "train": [("--corpus", True), ("--out", True)],
    "predict": [("--model", True), ("--corpus", True), ("--out", True)],
    "extract": [("--predictions", True), ("--out", True)],
    "corrupt": [("--scan", True), ("--out", True), ("--region", False)],
    "eval": [("--predictions", True), ("--truth", True), ("--out", True)],
    "uncertainty-report": [("--model", True), ("--corpus", True), ("--out", True)],
    "grad-check": [("--out", False)],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise config_error(message)


def build_parser():
    parser = _Parser(prog="sdflayers", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file; flags override its values")
        p.add_argument("--seed", type=int, dest="run.seed")
        for flag, required in POSITIONAL[name]:
            p.add_argument(flag, required=required)
        for flag, dest, typ in FLAGS[name]:
            p.add_argument(flag, dest=dest, type=typ)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        overrides = {k: v for k, v in vars(args).items() if "." in k}
        cfg = resolve_config(args.config, overrides)
        COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "code": exc.code, "message": str(exc)}), file=sys.stderr)
        return exc.code
    except (FileNotFoundError, FormatError) as exc:
        print(json.dumps({"error": "input", "code": EXIT_INPUT, "message": str(exc)}), file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
