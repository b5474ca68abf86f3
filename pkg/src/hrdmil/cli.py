"""Command-line interface: ``hrdmil <command> [flags]``.

Every JSON report is deterministic for a given set of inputs and flags.
Non-reproducible facts (command line, wall-clock timing, thread count)
go to a ``run_meta.json`` sidecar instead.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__, charts
from ._seeding import derive_seed
from .aggregators import Arch
from .clustering import DEFAULT_K, fit_patient
from .datamodel import load_manifest
from .errors import ConfigError, HrdMilError
from .evaluation import ThresholdRule, evaluate_predictions, pearson_corr, rank_models
from .sampling import SamplingStrategy, Variant
from .synthcohort import SynthSpec, generate_cohort
from .training import BagStore, TrainConfig, run_cv
from .upsampling import UpsampleParams, bin_targets, compute_budgets, upsample

DEFAULTS = {
    "k": DEFAULT_K,
    "bagsize": 100,
    "strategy": "cluster-weighted",
    "arch": "attmil",
    "folds": 5,
    "seed": 0,
    "threshold": "fixed:42",
    "upsample": False,
    "bins": 7,
    "alpha": 0.65,
    "beta": 0.25,
    "epochs": 30,
    "lr": 1e-4,
    "batch_size": 16,
    "d_hidden": 128,
    "n_layers": 2,
    "n_heads": 4,
    "standardize": True,
    "resample_per_epoch": False,
    "threads": 1,
}
_BOOL_KEYS = {"upsample", "standardize", "resample_per_epoch"}
# keys that may change how a run is scheduled but never what it computes
_SCHEDULING_KEYS = {"threads"}


# ---------------------------------------------------------------------------
# helpers


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_digests(manifest_path: Path, cohort) -> dict:
    root = manifest_path.parent.resolve()
    out = {manifest_path.name: _sha256(manifest_path)}
    for p in cohort.patients:
        for f in p.files:
            out[Path(f).resolve().relative_to(root).as_posix()] = _sha256(f)
    return out


def _parse_bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def read_config_file(path) -> tuple[dict, str]:
    """Parse a flat ``key = value`` file (``#`` comments). Returns (values, raw text)."""
    text = Path(path).read_text()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown or malformed setting {line!r}")
        values[key] = val.strip()
    return values, text


def _coerce(key, value):
    if key in _BOOL_KEYS:
        return value if isinstance(value, bool) else _parse_bool(value)
    default = DEFAULTS[key]
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {value!r}") from None
    if isinstance(default, float):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {value!r}") from None
    return str(value)


def resolve_settings(args) -> tuple[dict, str | None]:
    """Defaults, then the ``--config`` file, then explicit flags."""
    settings = dict(DEFAULTS)
    raw = None
    if getattr(args, "config", None):
        values, raw = read_config_file(args.config)
        settings.update({k: _coerce(k, v) for k, v in values.items()})
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = _coerce(key, v)
    if settings["bagsize"] == 0 or settings["strategy"] == "all":
        settings["strategy"] = "all"
    return settings, raw


def strategy_from(settings) -> SamplingStrategy:
    if settings["strategy"] == "all":
        return SamplingStrategy(Variant.ALL, None)
    return SamplingStrategy(Variant(settings["strategy"]), settings["bagsize"])


def upsample_params_from(settings):
    if not settings["upsample"]:
        return None
    return UpsampleParams(settings["bins"], settings["alpha"], settings["beta"])


def train_config_from(settings) -> TrainConfig:
    return TrainConfig(
        arch=Arch(settings["arch"]),
        strategy=strategy_from(settings),
        epochs=settings["epochs"],
        learning_rate=settings["lr"],
        batch_size=settings["batch_size"],
        seed=settings["seed"],
        target_standardize=settings["standardize"],
        resample_per_epoch=settings["resample_per_epoch"],
        upsample=upsample_params_from(settings),
        k=settings["k"],
        d_hidden=settings["d_hidden"],
        n_layers=settings["n_layers"],
        n_heads=settings["n_heads"],
    )


def _run_header(settings, raw_config, inputs) -> dict:
    echo = {k: v for k, v in settings.items() if k not in _SCHEDULING_KEYS}
    header = {
        "library_version": __version__,
        "seeds": {"global": settings.get("seed", 0)},
        "inputs": inputs,
        "settings": echo,
        "notes": {
            "transformer": "simplified spatial-decay transformer (distance-proportional logit bias)",
            "budget_rounding": "half-up",
            "binning": "equal-width over the training target range",
            "instances": "re-drawn every epoch" if settings.get("resample_per_epoch") else "one fixed instance per patient per run",
            "kmeans": "per patient",
        },
    }
    if raw_config is not None:
        header["config_file"] = raw_config
    return header


class _Run:
    """Collects the non-deterministic sidecar for one command."""

    def __init__(self, command, argv, out_dir: Path):
        self.command = command
        self.argv = argv
        self.out_dir = out_dir
        self.t0 = time.time()
        out_dir.mkdir(parents=True, exist_ok=True)

    def finish(self, settings=None, outputs=()):
        meta = {
            "command": self.command,
            "argv": list(self.argv),
            "started_unix": self.t0,
            "elapsed_seconds": time.time() - self.t0,
            "threads": (settings or {}).get("threads", 1),
            "outputs": [str(p) for p in outputs],
        }
        (self.out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def _load(args):
    manifest = Path(args.manifest)
    cohort = load_manifest(manifest)
    return manifest, cohort


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, run: _Run):
    if args.spec:
        spec = SynthSpec.from_json(args.spec)
    else:
        fields_ = {k: getattr(args, k) for k in ("n_patients", "dim", "signal_dims", "noise_sigma", "skew",
                                                  "signal_fraction", "signal_gain", "seed")
                   if getattr(args, k) is not None}
        if args.patches:
            lo, _, hi = args.patches.partition(",")
            fields_["patches_min"], fields_["patches_max"] = int(lo), int(hi or lo)
        spec = SynthSpec(**fields_)
    cohort = generate_cohort(spec, run.out_dir)
    manifest = run.out_dir / "manifest.json"
    report = {"run": {"library_version": __version__, "seeds": {"global": spec.seed},
                      "inputs": {}, "settings": json.loads(spec.to_json())},
              "cohort": cohort.name, "n_patients": len(cohort.patients),
              "targets": {p.patient_id: p.hrd_score for p in cohort.patients},
              "outputs": _input_digests(manifest, cohort)}
    out = _write_json(run.out_dir / "synth_report.json", report)
    return None, [manifest, out]


def cmd_cluster(args, run: _Run):
    settings, raw = resolve_settings(args)
    manifest, cohort = _load(args)
    store = BagStore(cohort, settings["k"], settings["seed"])
    store.prefetch(cohort.patient_ids, False, settings["threads"])

    def work(pid):
        model, a = fit_patient(store.bag(pid).matrix, settings["k"],
                               seed=derive_seed(settings["seed"], "kmeans", pid))
        return {"id": pid, "n_patches": int(len(a.labels)), "k": a.k, "inertia": model.inertia,
                "n_iter": model.n_iter, "sizes": a.sizes.tolist(), "labels": a.labels.tolist()}

    with ThreadPoolExecutor(max_workers=max(1, settings["threads"])) as pool:
        rows = list(pool.map(work, cohort.patient_ids))
    report = {"run": _run_header(settings, raw, _input_digests(manifest, cohort)), "patients": rows}
    return settings, [_write_json(run.out_dir / "clusters.json", report)]


def _instance_rows(instances):
    return [{"id": inst.patient_id, "target": inst.target, "n": inst.n, "indices": inst.indices.tolist()}
            for inst in instances]


def cmd_sample(args, run: _Run):
    settings, raw = resolve_settings(args)
    manifest, cohort = _load(args)
    strategy = strategy_from(settings)
    store = BagStore(cohort, settings["k"], settings["seed"])
    store.prefetch(cohort.patient_ids, strategy.needs_clusters, settings["threads"])
    instances = [store.instance(pid, strategy, derive_seed(settings["seed"], "train", 0, pid))
                 for pid in cohort.patient_ids]
    report = {"run": _run_header(settings, raw, _input_digests(manifest, cohort)),
              "strategy": strategy.variant.value, "bagsize": strategy.bagsize,
              "instances": _instance_rows(instances)}
    return settings, [_write_json(run.out_dir / "instances.json", report)]


def cmd_upsample(args, run: _Run):
    settings, raw = resolve_settings(args)
    settings["upsample"] = True
    manifest, cohort = _load(args)
    strategy = strategy_from(settings)
    if strategy.variant is Variant.ALL:
        raise ConfigError("upsampling needs a sampled strategy, not 'all'")
    params = upsample_params_from(settings)
    store = BagStore(cohort, settings["k"], settings["seed"])
    store.prefetch(cohort.patient_ids, strategy.needs_clusters, settings["threads"])
    base = [store.instance(pid, strategy, derive_seed(settings["seed"], "train", 0, pid))
            for pid in cohort.patient_ids]
    layout = bin_targets(cohort, params.n_bins)
    budgets = compute_budgets(layout.bin_counts, params)
    result = upsample(base, layout, budgets, lambda pid, s: store.instance(pid, strategy, s),
                      derive_seed(settings["seed"], "upsample"))
    report = {
        "run": _run_header(settings, raw, _input_digests(manifest, cohort)),
        "params": {"n_bins": params.n_bins, "alpha": params.alpha, "beta": params.beta},
        "histogram": {"edges": layout.edges.tolist(), "bin_counts": layout.bin_counts.tolist(),
                      "patient_bins": layout.patient_bins},
        "budgets": budgets.tolist(),
        "added_per_bin": result.added_per_bin.tolist(),
        "upsampled_counts": (layout.bin_counts + result.added_per_bin).tolist(),
        "skipped_bins": result.skipped_bins,
        "n_original": len(base),
        "n_total": len(result.instances),
        "synthesized": _instance_rows(result.instances[len(base):]),
    }
    return settings, [_write_json(run.out_dir / "upsample.json", report)]


def cmd_train(args, run: _Run):
    settings, raw = resolve_settings(args)
    manifest, cohort = _load(args)
    config = train_config_from(settings)
    result = run_cv(cohort, config, settings["folds"], threads=settings["threads"])
    model_dir = run.out_dir / "models"
    model_dir.mkdir(exist_ok=True)
    folds = []
    for f in result.folds:
        f.params.save(model_dir / f"fold{f.fold}.npz")
        folds.append({
            "fold": f.fold,
            "n_train_patients": len(f.train_ids),
            "n_train_instances": f.n_train_instances,
            "loss_history": f.history,
            "upsampling": f.upsampling,
            "predictions": [{"id": p.patient_id, "y_true": p.y_true, "y_hat": p.y_hat} for p in f.predictions],
        })
    report = {"run": _run_header(settings, raw, _input_digests(manifest, cohort)),
              "config": config.to_dict(), "folds": folds}
    return settings, [_write_json(run.out_dir / "cv_predictions.json", report)]


def cmd_eval(args, run: _Run):
    doc = json.loads(Path(args.predictions).read_text())
    rule = ThresholdRule.parse(args.threshold or DEFAULTS["threshold"])
    fold_ids, y_true, y_hat = [], [], []
    for f in doc["folds"]:
        for p in f["predictions"]:
            fold_ids.append(f["fold"])
            y_true.append(p["y_true"])
            y_hat.append(p["y_hat"])
    edges = bin_targets(list(enumerate(y_true)), args.bins or DEFAULTS["bins"]).edges
    metrics = evaluate_predictions(fold_ids, y_true, y_hat, rule, edges)
    run_header = dict(doc["run"])
    run_header["evaluation"] = {"threshold": str(rule), "bins": len(edges) - 1,
                                "predictions_sha256": _sha256(args.predictions)}
    report = {"run": run_header, "config": doc["config"], "metrics": metrics}
    return None, [_write_json(run.out_dir / "metrics.json", report)]


def _label(config: dict) -> str:
    parts = [config["arch"], config["strategy"]]
    if config["strategy"] != "all":
        parts.append(f"S={config['bagsize']}")
    if config.get("upsample"):
        parts.append("upsampled")
    return "/".join(parts)


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def cmd_report(args, run: _Run):
    out = run.out_dir
    outputs = []
    docs = [json.loads(Path(p).read_text()) for p in args.metrics]
    labels = args.labels.split(",") if args.labels else [_label(d["config"]) for d in docs]
    if len(labels) != len(docs):
        raise ConfigError("--labels must name every metrics file")
    summary = {"library_version": __version__, "models": {}}

    # per-fold rank table
    table = {lab: [r["auroc"] for r in d["metrics"]["per_fold"]] for lab, d in zip(labels, docs)}
    if len(docs) >= 2:
        ranks = rank_models(table)
        summary["mean_rank"] = ranks
        outputs.append(_write_csv(out / "rank_table.csv", ["model"] + [f"fold{i}" for i in range(len(next(iter(table.values()))))] + ["mean_rank"],
                                  [[lab] + table[lab] + [ranks[lab]] for lab in labels]))
        outputs.append(charts.rank_bars(ranks, out / "rank_table.svg"))

    for lab, d in zip(labels, docs):
        m = d["metrics"]
        summary["models"][lab] = {k: m.get(k) for k in ("auroc_median", "balanced_accuracy", "recall_pos", "rmse")}

    # binned RMSE bars
    binned = {lab: d["metrics"]["binned_rmse"] for lab, d in zip(labels, docs) if "binned_rmse" in d["metrics"]}
    if binned:
        edges = next(iter(binned.values()))["edges"]
        same = {lab: b["rmse"] for lab, b in binned.items() if b["edges"] == edges}
        outputs.append(charts.binned_rmse_bars(edges, same, out / "binned_rmse.svg"))
        outputs.append(_write_csv(out / "binned_rmse.csv", ["model", "bin_lo", "bin_hi", "rmse"],
                                  [[lab, lo, hi, v] for lab, vals in same.items()
                                   for lo, hi, v in zip(edges[:-1], edges[1:], vals)]))

    # metric vs bagsize, grouped per architecture and per strategy
    by_arch, by_strategy = defaultdict(list), defaultdict(list)
    rmse_by_arch = defaultdict(list)
    for d in docs:
        c, m = d["config"], d["metrics"]
        if c["strategy"] == "all" or m["auroc_median"] is None:
            continue
        by_arch[c["arch"]].append((c["bagsize"], m["auroc_median"]))
        rmse_by_arch[c["arch"]].append((c["bagsize"], m["rmse"]))
        if c["arch"] == "attmil":
            by_strategy[c["strategy"]].append((c["bagsize"], m["auroc_median"]))
    if any(len({p[0] for p in pts}) >= 2 for pts in by_arch.values()):
        outputs.append(charts.metric_lines(by_arch, out / "auroc_vs_bagsize.svg", title="median AUROC vs bagsize"))
        corr = {}
        for arch, pts in by_arch.items():
            try:
                corr[arch] = {"auroc": pearson_corr([p[0] for p in pts], [p[1] for p in pts]),
                              "rmse": pearson_corr([p[0] for p in rmse_by_arch[arch]],
                                                   [p[1] for p in rmse_by_arch[arch]])}
            except HrdMilError:
                corr[arch] = None
        summary["bagsize_correlation"] = corr
        outputs.append(_write_csv(out / "bagsize_sweep.csv", ["arch", "bagsize", "auroc_median", "rmse"],
                                  [[a, s, v, r] for a in by_arch for (s, v), (_, r) in
                                   zip(sorted(by_arch[a]), sorted(rmse_by_arch[a]))]))
    if len(by_strategy) >= 2:
        outputs.append(charts.metric_lines(by_strategy, out / "sampling_strategies.svg",
                                           title="median AUROC per sampling strategy"))

    if args.upsample:
        up = json.loads(Path(args.upsample).read_text())
        outputs.append(charts.histogram_pair(up["histogram"]["edges"], up["histogram"]["bin_counts"],
                                             up["upsampled_counts"], out / "upsampled_distribution.svg"))
        summary["upsampling"] = {"bin_counts": up["histogram"]["bin_counts"], "budgets": up["budgets"],
                                 "upsampled_counts": up["upsampled_counts"]}
    summary["charts"] = sorted(p.name for p in outputs if p.suffix == ".svg")
    outputs.append(_write_json(out / "report.json", summary))
    return None, outputs


# ---------------------------------------------------------------------------
# parser


def _add_common(p, *, sampling=True, training=False, bins=False):
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="flat key=value settings file; explicit flags win")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--k", type=int, help=f"K-means clusters per patient (default {DEFAULT_K})")
    if sampling:
        p.add_argument("--strategy", choices=[v.value for v in Variant])
        p.add_argument("--bagsize", type=int)
    if training:
        p.add_argument("--arch", choices=[a.value for a in Arch])
        p.add_argument("--folds", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--d-hidden", dest="d_hidden", type=int)
        p.add_argument("--n-layers", dest="n_layers", type=int)
        p.add_argument("--n-heads", dest="n_heads", type=int)
        p.add_argument("--resample-per-epoch", dest="resample_per_epoch", action="store_const", const=True)
        p.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)
        p.add_argument("--upsample", action="store_const", const=True)
    if training or bins:
        p.add_argument("--bins", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrdmil", description="Regression MIL for continuous biomarker scores")
    parser.add_argument("--version", action="version", version=f"hrdmil {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort with planted signal")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--spec", help="SynthSpec JSON file")
    p.add_argument("--n-patients", dest="n_patients", type=int)
    p.add_argument("--patches", help="min,max patches per patient")
    p.add_argument("--dim", type=int)
    p.add_argument("--signal-dims", dest="signal_dims", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--signal-fraction", dest="signal_fraction", type=float)
    p.add_argument("--signal-gain", dest="signal_gain", type=float)
    p.add_argument("--skew", choices=["uniform", "right-skewed", "left-skewed"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="per-patient K-means")
    _add_common(p, sampling=False)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("sample", help="draw one instance per patient")
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("upsample", help="distribution-based upsampling over the whole manifest")
    _add_common(p, bins=True)
    p.set_defaults(func=cmd_upsample)

    p = sub.add_parser("train", help="cross-validated training; writes per-patient predictions")
    _add_common(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics from cross-validated predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold", help="fixed:<t> | median | tertiles:<lo>,<hi> (default fixed:42)")
    p.add_argument("--bins", type=int, help="bins for binned RMSE (default 7)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="charts and rank tables from metrics files")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--labels", help="comma-separated names, one per metrics file")
    p.add_argument("--upsample", help="upsample.json for the distribution chart")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = _Run(args.command, argv, Path(args.out_dir))
    try:
        settings, outputs = args.func(args, run)
    except HrdMilError as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {exc.category}: {msg}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__.lower()}: {msg}", file=sys.stderr)
        return 2
    run.finish(settings, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
