"""``spectroclust`` command line: synth, segment, train, baseline, evaluate, report.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (``#`` starts a comment), then command-line flags.
Every command writes ``manifest-<command>.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .analysis import (GROUPS, GroupingRules, average_spectrogram, cluster_stats, evaluate_detection,
                       frequency_histogram, group_clusters, occupancy_summary, occupied_clusters, tile_evidence)
from .cluster import ClusterModel, nmi
from .data import ACTIVE, INACTIVE, adapt_labels, load_sweeps, read_boxes, read_corpus, scale_tiles, segment
from .data import write_boxes, write_corpus, write_sweeps
from .errors import ConfigError, DataError, SpectroclustError
from .features import PCAReducer
from .io import file_sha256, read_container, read_json, read_jsonl, write_container, write_json, write_jsonl
from .metrics import METRICS, ivat, pairwise_distances, silhouette, davies_bouldin, hopkins, sweep_k, vat_order
from .synth import CLASS_NAMES, PRESETS, SynthScenario, synthesize
from .trainer import (DeepClusterSSL, PCAKMeansBaseline, SSLRunConfig, Seeds, save_checkpoint, train_baseline,
                      train_ssl)

log = logging.getLogger("spectroclust")

COMMANDS = ("synth", "segment", "train", "baseline", "evaluate", "report")
EVAL_METRICS = METRICS + ("vat",)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text):
        if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none", "null")):
            return None
        return conv(text)
    parse.__name__ = conv.__name__
    return parse


@dataclass(frozen=True)
class Option:
    key: str
    conv: object
    default: object
    help: str
    commands: tuple = COMMANDS


_ALL = COMMANDS
_MODEL = ("train", "baseline")
OPTIONS = [
    Option("out", str, "spectroclust-out", "output directory", _ALL),
    Option("seed", int, 0, "base seed", _ALL),
    Option("deterministic", _bool, False, "pin seeds/threads and drop timestamps", _ALL),
    Option("jobs", int, 1, "worker processes for k-sweeps", _ALL),
    Option("log_level", str, "WARNING", "logging level", _ALL),
    # synth
    Option("scenario", _opt(str), None, "scenario JSON file", ("synth",)),
    Option("preset", str, "six-class", f"built-in scenario: {', '.join(PRESETS)}", ("synth",)),
    Option("windows", _opt(int), None, "number of time windows for a preset", ("synth",)),
    # segment
    Option("sweeps", _opt(str), None, "sweep matrix container", ("segment",)),
    Option("boxes", _opt(str), None, "bounding-box label file (JSON lines)", ("segment",)),
    Option("classes", _opt(str), None, "ground-truth tile classes (JSON lines)", ("segment",)),
    Option("exhaustive", _bool, False, "treat the box labels as exhaustive", ("segment",)),
    Option("window", int, 128, "tile size W", ("segment",)),
    Option("scale_lo", _opt(float), None, "dBm mapped to 0 (default: corpus minimum)", ("segment",)),
    Option("scale_hi", _opt(float), None, "dBm mapped to 1 (default: corpus maximum)", ("segment",)),
    # models
    Option("tiles", _opt(str), None, "tile corpus directory", ("train", "baseline", "evaluate")),
    Option("k", int, 6, "number of clusters", _MODEL),
    Option("evr_threshold", _opt(float), None, "select PCA dimension by cumulative EVR", _MODEL),
    Option("pca_d", _opt(int), 20, "fixed PCA dimension (ignored when evr_threshold is set)", _MODEL),
    Option("max_components", _opt(int), 20, "cap on the EVR-selected dimension", _MODEL),
    Option("variant", str, "TOY", "network: TOY, RN or VGG", ("train",)),
    Option("epochs", _opt(int), None, "training epochs (default per variant)", ("train",)),
    Option("batch_size", int, 256, "classifier mini-batch size", ("train",)),
    Option("lr", float, 0.01, "SGD step size", ("train",)),
    Option("momentum", float, 0.9, "SGD momentum", ("train",)),
    Option("weight_decay", float, 0.0, "SGD weight decay", ("train",)),
    Option("descriptor_dim", int, 64, "TOY descriptor width", ("train",)),
    Option("toy_width", int, 16, "TOY base channel count", ("train",)),
    Option("kmeans_n_init", int, 1, "K-means restarts per epoch", ("train",)),
    Option("baseline_n_init", int, 10, "K-means restarts for the baseline", ("baseline",)),
    # evaluate
    Option("model", _opt(str), None, "train or baseline output directory", ("evaluate",)),
    Option("metrics", str, ",".join(EVAL_METRICS), "comma list of metrics", ("evaluate",)),
    Option("k_range", str, "2-30", "k values to sweep, e.g. 2-10 or 4,6,8", ("evaluate",)),
    Option("sweep", str, "features", "features: re-cluster fixed features; retrain: refit the model per k",
           ("evaluate",)),
    Option("hopkins_m", _opt(int), None, "Hopkins sample size (default min(5% of N, 500))", ("evaluate",)),
    Option("vat_samples", int, 500, "tiles subsampled for VAT/iVAT", ("evaluate",)),
    Option("num_subbands", _opt(int), None, "histogram sub-bands (default: tile bands)", ("evaluate",)),
    Option("grouping_override", _opt(str), None, "JSON map cluster id -> group", ("evaluate",)),
    Option("occupied_groups", str, "Stripes,Dotted,HighIntensity", "groups counted as occupied",
           ("evaluate",)),
    *[Option(f"group_{name}", _opt(type(value)) if value is not None else _opt(str), value,
             f"grouping threshold {name}", ("evaluate",))
      for name, value in vars(GroupingRules()).items()],
    # report
    Option("sources", _opt(str), None, "comma list of evaluate output directories (default: --out)",
           ("report",)),
]
_BY_KEY = {o.key: o for o in OPTIONS}


def parse_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _BY_KEY:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def effective_config(command: str, file_values: dict, flags: dict) -> dict:
    cfg = {}
    for opt in OPTIONS:
        if command not in opt.commands:
            continue
        value = opt.default
        for source in (file_values, flags):
            if opt.key in source:
                try:
                    value = opt.conv(source[opt.key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad value for {opt.key}: {exc}") from None
        cfg[opt.key] = value
    return cfg


def parse_k_range(text: str) -> list:
    try:
        ks = []
        for part in str(text).split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                ks.extend(range(lo, hi + 1))
            elif part:
                ks.append(int(part))
    except ValueError:
        raise ConfigError(f"malformed k range {text!r}") from None
    if not ks or min(ks) < 2 or max(ks) > 30:
        raise ConfigError(f"k range must be non-empty within [2, 30], got {text!r}")
    return sorted(set(ks))


def _require(cfg, key) -> Path:
    if not cfg.get(key):
        raise ConfigError(f"missing required setting --{key.replace('_', '-')}")
    path = Path(cfg[key])
    if not path.exists():
        raise DataError(f"input not found: {path}")
    return path


class Run:
    """Collects stage timings, input and artifact hashes for the manifest."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.stages: dict = {}
        self.inputs: dict = {}
        self.artifacts: list = []

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.stages[name] = round(time.perf_counter() - self.t0, 6)

        return _Timer()

    def input(self, path):
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for p in files:
            if not p.name.startswith("manifest-"):
                self.inputs[str(p)] = file_sha256(p)

    def add(self, path) -> Path:
        self.artifacts.append(Path(path))
        return Path(path)

    def write_manifest(self) -> Path:
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg,
            "inputs": self.inputs,
            "artifacts": {str(p.relative_to(self.out)): file_sha256(p) for p in sorted(set(self.artifacts))},
            "stages_seconds": self.stages,
        }
        if not self.cfg["deterministic"]:
            manifest["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        return write_json(self.out / f"manifest-{self.command}.json", manifest)


def cmd_synth(run: Run):
    cfg = run.cfg
    with run.stage("scenario"):
        if cfg["scenario"]:
            path = _require(cfg, "scenario")
            run.input(path)
            spec = read_json(path)
            if not isinstance(spec, dict):
                raise ConfigError(f"scenario file {path} must hold a JSON object")
            spec.setdefault("seed", cfg["seed"])
            scenario = SynthScenario.from_dict(spec)
        else:
            if cfg["preset"] not in PRESETS:
                raise ConfigError(f"unknown preset {cfg['preset']!r}; expected one of {sorted(PRESETS)}")
            kwargs = {"num_windows": cfg["windows"]} if cfg["windows"] else {}
            scenario = PRESETS[cfg["preset"]](seed=cfg["seed"], **kwargs)
    with run.stage("synthesize"):
        matrix, boxes, classes = synthesize(scenario)
    with run.stage("write"):
        run.add(write_json(run.out / "scenario.json", scenario.to_dict()))
        run.add(write_sweeps(run.out / "sweeps.bin", matrix, {"window": scenario.window}))
        run.add(write_boxes(run.out / "boxes.jsonl", boxes))
        run.add(write_jsonl(run.out / "classes.jsonl", (
            {"tile": i, "class": int(c), "name": CLASS_NAMES[int(c)]} for i, c in enumerate(classes))))


def cmd_segment(run: Run):
    cfg = run.cfg
    path = _require(cfg, "sweeps")
    run.input(path)
    with run.stage("segment"):
        matrix = load_sweeps(path)
        corpus = scale_tiles(segment(matrix, cfg["window"]), cfg["scale_lo"], cfg["scale_hi"])
    extra = {}
    with run.stage("labels"):
        if cfg["boxes"]:
            boxes_path = _require(cfg, "boxes")
            run.input(boxes_path)
            corpus = adapt_labels(corpus, read_boxes(boxes_path), exhaustive=cfg["exhaustive"])
        if cfg["classes"]:
            classes_path = _require(cfg, "classes")
            run.input(classes_path)
            recs = read_jsonl(classes_path)
            if len(recs) != len(corpus):
                raise DataError(f"{len(recs)} class records for {len(corpus)} tiles; was the same window used?")
            extra["class"] = [int(r["class"]) for r in recs]
    with run.stage("write"):
        for p in write_corpus(run.out, corpus, extra):
            run.add(p)


def _load_tiles(run: Run):
    path = _require(run.cfg, "tiles")
    run.input(path / "tiles.bin")
    run.input(path / "tiles.jsonl")
    corpus, records = read_corpus(path)
    return corpus, records


def _pca_selector(cfg):
    if cfg["evr_threshold"] is not None:
        return {"evr_threshold": cfg["evr_threshold"], "n_components": None, "max_components": cfg["max_components"]}
    if cfg["pca_d"] is None:
        raise ConfigError("set either pca_d or evr_threshold")
    return {"evr_threshold": None, "n_components": cfg["pca_d"], "max_components": cfg["max_components"]}


def _write_model(run: Run, kind, pca, clusters, z, params):
    run.add(pca.save(run.out / "pca.bin"))
    run.add(clusters.save(run.out / "clusters.bin"))
    run.add(write_container(run.out / "features.bin", z, {"normalized": True, "kind": kind}))
    run.add(write_json(run.out / "model.json", {"kind": kind, "k": clusters.k, "params": params}))


def cmd_train(run: Run):
    cfg = run.cfg
    corpus, _ = _load_tiles(run)
    sel = _pca_selector(cfg)
    config = SSLRunConfig(
        k=cfg["k"], variant=cfg["variant"], epochs=cfg["epochs"], lr=cfg["lr"], momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"], batch_size=cfg["batch_size"], evr_threshold=sel["evr_threshold"],
        n_components=sel["n_components"], max_components=sel["max_components"],
        descriptor_dim=cfg["descriptor_dim"], toy_width=cfg["toy_width"], kmeans_n_init=cfg["kmeans_n_init"],
        seeds=Seeds.from_base(cfg["seed"]),
    )
    with run.stage("train"):
        result = train_ssl(corpus, config)
    with run.stage("write"):
        ckpt = save_checkpoint(run.out / "checkpoint", result.network, config, epoch=config.epochs)
        run.add(ckpt / "weights.bin")
        run.add(ckpt / "manifest.json")
        run.add(result.history.save(run.out / "history.jsonl"))
        params = {"n_clusters": config.k, "variant": config.variant, "epochs": config.epochs,
                  "batch_size": config.batch_size, "lr": config.lr, "momentum": config.momentum,
                  "weight_decay": config.weight_decay, "evr_threshold": config.evr_threshold,
                  "n_components": config.n_components, "max_components": config.max_components,
                  "descriptor_dim": config.descriptor_dim, "toy_width": config.toy_width,
                  "kmeans_n_init": config.kmeans_n_init, "random_state": cfg["seed"]}
        _write_model(run, "ssl", result.pca, result.clusters, result.features, params)


def cmd_baseline(run: Run):
    cfg = run.cfg
    corpus, _ = _load_tiles(run)
    sel = _pca_selector(cfg)
    with run.stage("baseline"):
        pca, clusters, z = train_baseline(corpus, cfg["k"], evr_threshold=sel["evr_threshold"],
                                          fixed_d=sel["n_components"], seed=cfg["seed"], n_init=cfg["baseline_n_init"])
    with run.stage("write"):
        params = {"n_clusters": cfg["k"], "n_components": sel["n_components"], "evr_threshold": sel["evr_threshold"],
                  "n_init": cfg["baseline_n_init"], "random_state": cfg["seed"]}
        _write_model(run, "baseline", pca, clusters, z, params)


def _model_factory(kind, params):
    params = dict(params)
    if kind == "ssl":
        params.pop("n_clusters", None)
        params.pop("random_state", None)
        return _Factory(DeepClusterSSL, params)
    params.pop("n_clusters", None)
    params.pop("random_state", None)
    return _Factory(PCAKMeansBaseline, params)


@dataclass
class _Factory:
    cls: type
    params: dict

    def __call__(self, k, seed):
        return self.cls(n_clusters=k, random_state=seed, **self.params)


def _metric_list(text) -> list:
    names = [m.strip() for m in str(text).split(",") if m.strip()]
    bad = set(names) - set(EVAL_METRICS)
    if bad or not names:
        raise ConfigError(f"unknown metrics {sorted(bad)}; choose from {EVAL_METRICS}")
    return names


def cmd_evaluate(run: Run):
    cfg = run.cfg
    metrics = _metric_list(cfg["metrics"])
    corpus, records = _load_tiles(run)
    model_dir = _require(cfg, "model")
    run.input(model_dir)
    info = read_json(model_dir / "model.json")
    z, _ = read_container(model_dir / "features.bin")
    z = z.astype(np.float64)
    clusters = ClusterModel.load(model_dir / "clusters.bin")
    pca = PCAReducer.load(model_dir / "pca.bin")
    if z.shape[0] != len(corpus) or clusters.assignments.size != len(corpus):
        raise DataError(f"model in {model_dir} was fit on {z.shape[0]} tiles, corpus has {len(corpus)}")
    labels = clusters.assignments
    summary = {"kind": info["kind"], "k": clusters.k, "n_tiles": len(corpus), "pca_components": pca.n_components_,
               "hopkins_convention": "sum(u)/(sum(u)+sum(w)); 0.5 uniform, near 1 clustered"}

    run.add(write_json(run.out / "evr.json", {"kind": info["kind"], "cumulative_evr": pca.cumulative_evr_.tolist(),
                                              "n_components": pca.n_components_}))
    sweep_metrics = [m for m in metrics if m in METRICS]
    if sweep_metrics:
        with run.stage("sweep"):
            ks = parse_k_range(cfg["k_range"])
            if cfg["sweep"] == "features":
                curves = sweep_k(z, k_range=ks, metrics=sweep_metrics, seed=cfg["seed"], hopkins_m=cfg["hopkins_m"],
                                 n_jobs=cfg["jobs"])
            elif cfg["sweep"] == "retrain":
                curves = sweep_k(_model_factory(info["kind"], info["params"]), corpus.pixels, k_range=ks,
                                 metrics=sweep_metrics, seed=cfg["seed"], hopkins_m=cfg["hopkins_m"],
                                 n_jobs=cfg["jobs"])
            else:
                raise ConfigError(f"sweep must be 'features' or 'retrain', got {cfg['sweep']!r}")
            curves["kind"] = info["kind"]
            curves["sweep"] = cfg["sweep"]
            run.add(write_json(run.out / "curves.json", curves))
        with run.stage("model_metrics"):
            if "hopkins" in metrics:
                summary["hopkins"] = hopkins(z, m=cfg["hopkins_m"], seed=cfg["seed"])
            if "silhouette" in metrics:
                sil = silhouette(z, labels)
                summary["silhouette"] = sil.overall
                summary["silhouette_sample_mean"] = sil.sample_mean
            if "davies_bouldin" in metrics:
                summary["davies_bouldin"] = davies_bouldin(z, labels)
    if "vat" in metrics:
        with run.stage("vat"):
            rng = np.random.default_rng(cfg["seed"])
            n = min(cfg["vat_samples"], len(corpus))
            idx = np.sort(rng.choice(len(corpus), size=n, replace=False))
            d = pairwise_distances(z[idx])
            for name, res in (("vat", vat_order(d)), ("ivat", ivat(d))):
                run.add(write_container(run.out / f"{name}.bin", res.ordered,
                                        {"mode": res.mode, "sample_index": idx[res.permutation].tolist(),
                                         "cluster": labels[idx[res.permutation]].tolist()}))

    with run.stage("analysis"):
        nsub = cfg["num_subbands"] or corpus.num_bands
        stats = cluster_stats(clusters, z, corpus)
        ids = [r.cluster_id for r in stats.rows]
        avg = np.stack([average_spectrogram(corpus.pixels[labels == c]) for c in ids])
        hists = {c: frequency_histogram(corpus.band_index[labels == c], nsub) for c in ids}
        rules = GroupingRules.from_dict({k[len("group_"):]: v for k, v in cfg.items() if k.startswith("group_")})
        evidence = tile_evidence(corpus, rules=rules)
        override = cfg["grouping_override"]
        if override:
            run.input(_require(cfg, "grouping_override"))
        groups = group_clusters(labels, evidence, hists, rules, manual=override)
        stats = stats.with_groups(groups)
        occupied_groups = tuple(g.strip() for g in cfg["occupied_groups"].split(",") if g.strip())
        if set(occupied_groups) - set(GROUPS):
            raise ConfigError(f"unknown occupied groups {sorted(set(occupied_groups) - set(GROUPS))}")
        run.add(write_container(run.out / "avg_spectrograms.bin", avg, {"cluster_ids": ids}))
        run.add(write_json(run.out / "histograms.json", {"num_subbands": nsub,
                                                         "counts": {str(c): h.tolist() for c, h in hists.items()}}))
        run.add(write_json(run.out / "stats.json", stats.to_records()))
        run.add(stats.write_csv(run.out / "stats.csv"))
        run.add(write_json(run.out / "groups.json", {str(c): g for c, g in sorted(groups.items())}))
        run.add(write_json(run.out / "occupancy.json", occupancy_summary(stats, groups, occupied_groups)))
        known = np.isin(corpus.labels, [ACTIVE, INACTIVE])
        if known.any():
            report = evaluate_detection(labels, corpus.labels, occupied_clusters(groups, occupied_groups))
            run.add(write_json(run.out / "detection.json", report.to_dict()))
            summary["detection_f1"] = report.f1
        if records and "class" in records[0]:
            truth = np.array([r["class"] for r in records])
            summary["nmi_ground_truth"] = nmi(labels, truth)
    run.add(write_json(run.out / "summary.json", summary))


def cmd_report(run: Run):
    from .report import build_report

    cfg = run.cfg
    sources = [Path(s.strip()) for s in cfg["sources"].split(",")] if cfg["sources"] else [run.out]
    for s in sources:
        if not s.is_dir():
            raise DataError(f"report source directory not found: {s}")
    with run.stage("render"):
        for p in build_report(sources, run.out / "report"):
            run.add(p)


HANDLERS = {"synth": cmd_synth, "segment": cmd_segment, "train": cmd_train, "baseline": cmd_baseline,
            "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectroclust", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--print-config", action="store_true", help="print effective settings and exit")
        for opt in OPTIONS:
            if command not in opt.commands:
                continue
            flag = "--" + opt.key.replace("_", "-")
            if opt.conv is _bool:
                p.add_argument(flag, dest=opt.key, nargs="?", const="true", help=opt.help)
            else:
                p.add_argument(flag, dest=opt.key, help=f"{opt.help} (default: {opt.default})")
    return parser


def _error_line(exc: BaseException, code: int) -> str:
    return json.dumps({"error": type(exc).__name__, "exit_code": code, "message": " ".join(str(exc).split())})


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    print_config = args.pop("print_config", False)
    try:
        cfg = effective_config(command, parse_config_file(config_path) if config_path else {}, args)
        if print_config:
            for key, value in cfg.items():
                print(f"{key} = {'' if value is None else value}")
            return 0
        logging.basicConfig(level=getattr(logging, str(cfg["log_level"]).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if cfg["deterministic"]:
            torch.use_deterministic_algorithms(True)
            torch.set_num_threads(1)
        run = Run(command, cfg)
        HANDLERS[command](run)
        run.write_manifest()
        return 0
    except SpectroclustError as exc:
        print(_error_line(exc, exc.exit_code), file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(_error_line(exc, 3), file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        log.debug("unhandled error", exc_info=True)
        print(_error_line(exc, 4), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
