"""Command-line entry point: ``redcliff <command> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical divergence.
"""

from __future__ import annotations

import os

# thread caps must be in place before numpy loads its BLAS
_THREADS = os.environ.get("REDCLIFF_THREADS")
if _THREADS and _THREADS.isdigit() and int(_THREADS) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[_var] = _THREADS

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from collections import defaultdict  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import evaluation as ev  # noqa: E402
from . import svg  # noqa: E402
from .io import (  # noqa: E402
    FormatError,
    LockError,
    RunManifest,
    directory_lock,
    export_dataset,
    import_dataset,
    load_checkpoint,
    load_system,
    read_json,
    write_json,
)
from .model import windows_to_batch  # noqa: E402
from .synth import SNR_BACKGROUND, build_system, combine_folds, complexity_rating, generate_dataset  # noqa: E402
from .training import (  # noqa: E402
    ABLATIONS,
    ConfigError,
    DivergenceError,
    TrainConfig,
    build_model,
    prepare,
    train,
    write_history,
    write_train_config,
)

log = logging.getLogger("redcliff")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3
METRICS = ("f1", "roc_auc", "shd_upper", "shd_lower")
HIGHER_IS_BETTER = {"f1": True, "roc_auc": True, "shd_upper": False, "shd_lower": False}


def _num(v) -> str:
    """Full-precision text for CSV cells."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _seeds(seed: int, repeat: int, n: int = 3) -> list[int]:
    return [int(s) for s in np.random.SeedSequence([seed, repeat]).generate_state(n)]


# -- gen-synth -------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    if args.repeats < 1:
        raise ValueError("--repeats must be >= 1")
    if args.train_per_class < 1 or args.val_per_class < 1:
        raise ValueError("per-class window counts must be >= 1")
    try:
        score, band = complexity_rating(args.n_c, args.n_e)
        complexity = {"value": score, "category": band}
    except ValueError:
        if args.n_e != 0:
            raise
        complexity = {"value": None, "category": "undefined"}
    params = {
        "n_c": args.n_c,
        "n_e": args.n_e,
        "n_k": args.n_k,
        "tau": args.tau,
        "T_window": args.t_window,
        "train_per_class": args.train_per_class,
        "val_per_class": args.val_per_class,
        "innov_var": args.innov_var,
        "min_edge_weight": args.min_edge_weight,
        "mix_noise_std": args.mix_noise,
        "complexity": complexity,
    }
    out = Path(args.out)
    with directory_lock(out):
        manifest = RunManifest("gen-synth", params, args.seed)
        for r in range(args.repeats):
            sys_seed, train_seed, val_seed = _seeds(args.seed, r)
            spec = build_system(
                args.n_c,
                args.n_e,
                args.n_k,
                seed=sys_seed,
                tau=args.tau,
                mix_noise_std=args.mix_noise,
                innov_var=args.innov_var,
                min_edge_weight=args.min_edge_weight,
            )
            splits = {
                "train": generate_dataset(spec, args.train_per_class, train_seed, args.t_window, split="train"),
                "val": generate_dataset(spec, args.val_per_class, val_seed, args.t_window, split="val"),
            }
            target = out / f"repeat_{r}"
            export_dataset(splits, target, {**params, "repeat": r}, system=spec)
            manifest.add_output(target)
            log.info("wrote %s", target)
        write_json(out / "complexity.json", complexity)
        manifest.add_output(out / "complexity.json")
        manifest.write(out)
    return EXIT_OK


# -- combine ---------------------------------------------------------------------


def _load_recording(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path, allow_pickle=False)
    if path.suffix == ".csv":
        return np.loadtxt(path, delimiter=",", ndmin=2)
    raise FormatError(f"{path}: recordings must be .npy or .csv")


def cmd_combine(args) -> int:
    if len(args.inputs) < 2:
        raise ValueError("combine needs at least two input recordings")
    background = SNR_BACKGROUND[args.snr] if args.snr else args.coeff_background
    recordings = [_load_recording(p) for p in args.inputs]
    dominants = range(len(recordings)) if args.dominant is None else [args.dominant]
    config = {
        "inputs": [str(p) for p in args.inputs],
        "dominant": args.dominant,
        "coeff_dominant": args.coeff_dominant,
        "coeff_background": background,
    }
    out = Path(args.out)
    with directory_lock(out):
        manifest = RunManifest("combine", config, None, args.inputs)
        for d in dominants:
            combined = combine_folds(recordings, d, args.coeff_dominant, background)
            target = out / f"combined_dominant_{d}.npy"
            np.save(target, combined)
            manifest.add_output(target)
        manifest.write(out)
    return EXIT_OK


# -- train -----------------------------------------------------------------------


def _load_config(args) -> TrainConfig:
    raw = read_json(args.config) if args.config else {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.ablation:
        raw[args.ablation] = True
    return TrainConfig.from_dict(raw)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_ds = import_dataset(args.data, "train")
    val_ds = import_dataset(args.data, "val")
    cfg = prepare(cfg, train_ds.n_c, train_ds.B)
    out = Path(args.out)
    with directory_lock(out):
        manifest = RunManifest("train", cfg.to_dict(), cfg.seed, [args.data] + ([args.config] if args.config else []))
        model = build_model(cfg, train_ds.n_c)
        data = windows_to_batch(train_ds, model.context, cfg.forecast_steps)
        val = windows_to_batch(val_ds, model.context, cfg.forecast_steps)
        result = train(model, data, val, cfg, out_dir=out)
        write_train_config(cfg, out / "train.json")
        write_history(result.history, out / "history.csv")
        for name in ("train.json", "history.csv", "best", "final"):
            manifest.add_output(out / name)
        manifest.data["best_epoch"] = result.best_epoch
        manifest.write(out)
    return EXIT_OK


# -- eval / render ---------------------------------------------------------------


def _checkpoint_dir(path) -> Path:
    path = Path(path)
    if (path / "model.json").exists():
        return path
    if (path / "best" / "model.json").exists():
        return path / "best"
    raise FormatError(f"{path}: no checkpoint (model.json) found")


def _method_of(ckpt: Path) -> str:
    cfg_path = ckpt.parent / "train.json"
    if cfg_path.exists():
        cfg = read_json(cfg_path)
        for name in ABLATIONS:
            if cfg.get(name):
                return name
    return "full"


def render_report(report: dict, out_dir) -> list[Path]:
    """Write every SVG described by a report.json payload; returns the paths."""
    out_dir = Path(out_dir)
    written = []
    for k, g in enumerate(report["estimates"]):
        written.append(svg.write_svg(out_dir / f"estimate_factor_{k}.svg", svg.heatmap_svg(g, f"estimate factor {k}")))
    for k, g in enumerate(report["truth"]):
        written.append(svg.write_svg(out_dir / f"truth_factor_{k}.svg", svg.heatmap_svg(g, f"true factor {k}")))
    for a, b in report.get("differences", []):
        est = report["estimates"]
        title = f"factor {a} minus factor {b}"
        written.append(svg.write_svg(out_dir / f"difference_{a}_{b}.svg", svg.difference_svg(est[a], est[b], title)))
    return written


def _row_key(row) -> tuple:
    return (row["system"], row["repeat"], row["method"], row["factor"])


def _write_rows_csv(rows, path) -> None:
    fields = ["system", "repeat", "method", "factor", "estimate_index", "metric", "value"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in sorted(rows, key=_row_key):
            for metric in METRICS:
                w.writerow([_num(row[f]) for f in fields[:5]] + [metric, _num(row[metric])])


def _aggregate(rows) -> dict:
    by_method = defaultdict(list)
    for row in rows:
        by_method[row["method"]].append(row)
    agg = {}
    for method in sorted(by_method):
        agg[method] = {}
        for metric in METRICS:
            mean, sem = ev.mean_sem([r[metric] for r in by_method[method]])
            agg[method][metric] = {"mean": mean, "sem": sem, "n": len(by_method[method])}
    return agg


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def cmd_eval(args) -> int:
    ckpt = _checkpoint_dir(args.model)
    model = load_checkpoint(ckpt)
    spec = load_system(args.truth)
    truth = spec.true_graphs()
    if model.n_c != spec.n_c:
        raise ValueError(f"model has n_c={model.n_c} but truth has n_c={spec.n_c}")
    estimates = model.graphs()
    method = args.method or _method_of(ckpt)
    rows = ev.evaluate_graphs(estimates, truth, supervised=model.B)
    for row in rows:
        row.update(system=args.system, repeat=args.repeat, method=method)
    std = ev.standardize(estimates, len(truth))
    for a, b in args.diff or []:
        if not (0 <= a < len(std) and 0 <= b < len(std)):
            raise ValueError(f"--diff {a} {b}: factor index out of range")
    report = {
        "rows": rows,
        "aggregate": _aggregate(rows),
        "estimates": [m.tolist() for m in std.matrices],
        "truth": [np.asarray(t, dtype=float).tolist() for t in truth],
        "top_edges": [
            [{"target": i, "source": j, "value": v} for i, j, v in svg.top_k_edges(m, args.top_k)] for m in std.matrices
        ],
        "differences": [list(p) for p in args.diff or []],
    }
    out = Path(args.out)
    with directory_lock(out):
        manifest = RunManifest("eval", vars_json(args), None, [ckpt, args.truth])
        write_json(out / "report.json", _json_safe(report))
        _write_rows_csv(rows, out / "report.csv")
        _write_top_edges(report["top_edges"], out / "top_edges.csv")
        paths = [out / "report.json", out / "report.csv", out / "top_edges.csv"] + render_report(report, out)
        for p in paths:
            manifest.add_output(p)
        manifest.write(out)
    return EXIT_OK


def _write_top_edges(top, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["factor", "rank", "target", "source", "value"])
        for k, edges in enumerate(top):
            for rank, e in enumerate(edges, start=1):
                w.writerow([k, rank, e["target"], e["source"], _num(e["value"])])


def cmd_render(args) -> int:
    report = read_json(args.report)
    out = Path(args.out) if args.out else Path(args.report).parent
    out.mkdir(parents=True, exist_ok=True)
    for p in render_report(report, out):
        log.info("wrote %s", p)
    return EXIT_OK


# -- report ----------------------------------------------------------------------


def cmd_report(args) -> int:
    rows = []
    for run in args.runs:
        path = Path(run)
        path = path / "report.json" if path.is_dir() else path
        rows += [{k: (np.nan if v is None else v) for k, v in r.items()} for r in read_json(path)["rows"]]
    if not rows:
        raise ValueError("no report rows found")
    methods = sorted({r["method"] for r in rows})
    reference = args.reference or ("full" if "full" in methods else methods[0])
    if reference not in methods:
        raise ValueError(f"reference method {reference!r} not among {methods}")
    per_method = defaultdict(dict)
    for r in rows:
        per_method[r["method"]][(r["system"], r["repeat"], r["factor"])] = r
    improvements = {}
    for m in methods:
        if m == reference:
            continue
        keys = sorted(set(per_method[reference]) & set(per_method[m]))
        if not keys:
            continue
        mean, sem = ev.pairwise_improvement(
            [per_method[reference][k]["f1"] for k in keys], [per_method[m][k]["f1"] for k in keys]
        )
        improvements[m] = {"mean": mean, "sem": sem, "n": len(keys), "exceeds_sem": bool(mean > sem)}
    aggregate = _aggregate(rows)
    table = np.array([[aggregate[m][metric]["mean"] for metric in METRICS] for m in methods])
    placement = {}
    if len(methods) > 1 and not np.isnan(table).any():
        ranks = ev.comparative_placement(table, [HIGHER_IS_BETTER[m] for m in METRICS])
        placement = dict(zip(methods, ranks.tolist()))
    report = {
        "rows": rows,
        "aggregate": aggregate,
        "reference": reference,
        "improvements": improvements,
        "placement": placement,
    }
    out = Path(args.out)
    with directory_lock(out):
        manifest = RunManifest("report", {"runs": [str(r) for r in args.runs], "reference": reference}, None, args.runs)
        write_json(out / "report.json", _json_safe(report))
        _write_rows_csv(rows, out / "report.csv")
        with open(out / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "metric", "mean", "sem", "n", "placement"])
            for m in methods:
                for metric in METRICS:
                    a = aggregate[m][metric]
                    w.writerow([m, metric, _num(a["mean"]), _num(a["sem"]), a["n"], _num(placement.get(m, ""))])
        for name in ("report.json", "report.csv", "aggregate.csv"):
            manifest.add_output(out / name)
        manifest.write(out)
    for m, imp in improvements.items():
        print(f"{reference} vs {m}: F1 improvement {imp['mean']:.4f} +/- {imp['sem']:.4f} (n={imp['n']})")
    return EXIT_OK


def vars_json(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="redcliff", description="Dynamic causal discovery with factor-mixture forecasters.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="simulate switching VAR datasets")
    g.add_argument("--n-c", type=int, required=True)
    g.add_argument("--n-e", type=int, required=True)
    g.add_argument("--n-k", type=int, required=True)
    g.add_argument("--repeats", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--train-per-class", type=int, default=1040)
    g.add_argument("--val-per-class", type=int, default=240)
    g.add_argument("--t-window", type=int, default=100)
    g.add_argument("--tau", type=int, default=2)
    g.add_argument("--innov-var", type=float, default=0.0)
    g.add_argument("--min-edge-weight", type=float, default=0.0)
    g.add_argument("--mix-noise", type=float, default=0.1)
    g.set_defaults(func=cmd_gen_synth)

    c = sub.add_parser("combine", help="superpose one dominant and several background recordings")
    c.add_argument("--inputs", nargs="+", required=True)
    c.add_argument("--dominant", type=int, default=None, help="one dominant index; default is every index in turn")
    c.add_argument("--coeff-dominant", type=float, default=10.0)
    c.add_argument("--coeff-background", type=float, default=0.1)
    c.add_argument("--snr", choices=sorted(SNR_BACKGROUND), default=None, help="preset background coefficient")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_combine)

    t = sub.add_parser("train", help="run the three-phase training schedule")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None, help="JSON file of training settings")
    t.add_argument("--out", required=True)
    t.add_argument("--ablation", choices=ABLATIONS, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint against the true graphs")
    e.add_argument("--model", required=True, help="checkpoint directory or training run directory")
    e.add_argument("--truth", required=True, help="dataset directory or system.json")
    e.add_argument("--out", required=True)
    e.add_argument("--top-k", type=int, default=10)
    e.add_argument("--diff", type=int, nargs=2, action="append", metavar=("A", "B"))
    e.add_argument("--method", default=None)
    e.add_argument("--system", default="system")
    e.add_argument("--repeat", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="aggregate several eval outputs")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--reference", default=None)
    r.set_defaults(func=cmd_report)

    v = sub.add_parser("render", help="regenerate SVG heatmaps from an eval report.json")
    v.add_argument("--report", required=True)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, FormatError, LockError, ValueError, IndexError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
