"""Command-line driver.

Commands: gen-dataset, train-evaluator, eval-evaluator, search, finalize,
report, pipeline. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .costfn import CostFunctionSpec
from .costmodel import CostModelConstants
from .cosearch import (ArchitectureCollapsed, SearchConfig, SearchResult, collapsed_result, finalize_result,
                       make_task, method_tag, search)
from .evaluator import (EvaluatorModel, EvaluatorTrainConfig, accuracy_report, train_evaluator)
from .oracle import Dataset, HwSpace, dataset_to_csv, generate_dataset, read_dataset
from .workload import ArchSpace, arch_from_json

logger = logging.getLogger("dance")

MANIFEST = "manifest.json"
SECTIONS = ("arch_space", "cost_model", "hw_space", "evaluator", "search")
COLLAPSED = "collapsed.json"
REPORT_COLUMNS = ("run", "method", "accuracy_error", "latency", "energy", "area", "EDAP", "dataflow")

PRESETS = {
    # small datasets need small batches or the hardware-generation heads get too few steps
    "smoke": {"networks": 200, "evaluator_epochs": 20, "search_epochs": 10,
              "evaluator_batch": {"hwgen": 16, "costest": 64},
              "lambda2_grid": [1e-5, 1e-4, 1e-3]},
    "full": {"networks": 20000, "evaluator_epochs": None, "search_epochs": 30,
             "evaluator_batch": None, "lambda2_grid": [1e-5, 1e-4, 1e-3]},
}


class UsageError(Exception):
    """Bad arguments or configuration; exit code 2."""


# -- config -------------------------------------------------------------------

def default_config() -> dict:
    return {"arch_space": ArchSpace().to_dict(),
            "cost_model": CostModelConstants().to_dict(),
            "hw_space": HwSpace().to_dict(),
            "evaluator": EvaluatorTrainConfig().to_dict(),
            "search": SearchConfig().to_dict()}


def _merge(base: dict, over: dict, path: str = ""):
    for k, v in over.items():
        if k not in base:
            raise UsageError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, f"{path}{k}.")
        else:
            base[k] = v


def set_dotted(cfg: dict, dotted: str, value):
    node = cfg
    *path, last = dotted.split(".")
    for part in path:
        if not isinstance(node.get(part), dict):
            raise UsageError(f"unknown config path {dotted!r}")
        node = node[part]
    if last not in node:
        raise UsageError(f"unknown config path {dotted!r}")
    node[last] = value


def load_config(path: str | None, overrides: list[str] | None = None) -> dict:
    """Defaults, then a JSON file (a config or a run manifest), then ``a.b=value`` overrides."""
    cfg = default_config()
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if "config" in doc and "phases" in doc:
            doc = doc["config"]
        _merge(cfg, doc)
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form a.b=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        set_dotted(cfg, key, value)
    return cfg


def build(cfg: dict):
    """Typed objects from a config dict; bad values surface as usage errors."""
    try:
        return (ArchSpace.from_dict(cfg["arch_space"]),
                CostModelConstants.from_dict(cfg["cost_model"]),
                HwSpace.from_dict(cfg["hw_space"]),
                EvaluatorTrainConfig.from_dict(cfg["evaluator"]),
                SearchConfig.from_dict(cfg["search"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


# -- manifests and files ------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        return {}
    return json.loads(path.read_text())


def record_phase(directory, phase: str, cfg: dict, seeds: dict, inputs: dict, outputs: dict,
                 seconds: float, extra: dict | None = None):
    """Merge one phase entry into the directory's single manifest."""
    directory = Path(directory)
    man = read_manifest(directory) or {"tool": "dance", "version": __version__,
                                       "python": platform.python_version(),
                                       "numpy": np.__version__, "config": cfg, "phases": {}}
    man["config"] = cfg
    man["phases"][phase] = {
        "argv": sys.argv[1:], "seeds": seeds,
        "inputs": {k: sha256_file(v) for k, v in inputs.items()},
        "input_paths": {str(v): sha256_file(v) for v in inputs.values()},
        "outputs": {k: sha256_file(directory / k) for k in outputs},
        "wall_seconds": round(seconds, 3), "completed": True, **(extra or {})}
    (directory / MANIFEST).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def phase_done(directory, phase: str) -> bool:
    """Done means: manifest entry present, outputs intact, recorded inputs unchanged."""
    entry = read_manifest(directory).get("phases", {}).get(phase)
    if not entry or not entry.get("completed"):
        return False
    for name, digest in entry["outputs"].items():
        path = Path(directory) / name
        if not path.exists() or sha256_file(path) != digest:
            return False
    for path, digest in entry.get("input_paths", {}).items():
        if not Path(path).exists() or sha256_file(path) != digest:
            return False
    return True


def check_target(path: Path, force: bool):
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def ensure_dir(path: Path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("DANCE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise UsageError(f"DANCE_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise UsageError("DANCE_THREADS must be >= 1")
        return n
    return 1


def _cost(text: str) -> CostFunctionSpec:
    try:
        return CostFunctionSpec.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _progress(msg: str):
    logger.info(msg)


# -- commands -----------------------------------------------------------------------

def run_gen_dataset(out: Path, cfg: dict, networks: int, seed: int, cost: str, n_random: int,
                    threads: int, force: bool, sparse_fraction: float = 0.5) -> dict:
    arch_space, const, hw_space, _, _ = build(cfg)
    cost_fn = _cost(cost)
    check_target(out, force)
    ensure_dir(out.parent)
    t0 = time.perf_counter()
    records = generate_dataset(networks, hw_space, arch_space, cost_fn, seed, n_random, const, threads,
                               sparse_fraction)
    out.write_text(dataset_to_csv(records, arch_space, hw_space))
    dt = time.perf_counter() - t0
    n_opt = sum(r.kind == "opt" for r in records)
    stats = {"rows": len(records), "opt_rows": n_opt, "rand_rows": len(records) - n_opt,
             "cost_fn": str(cost_fn), "networks": networks, "n_random": n_random,
             "sparse_fraction": sparse_fraction}
    record_phase(out.parent, "gen-dataset", cfg, {"seed": seed}, {}, [out.name], dt, stats)
    print(f"wrote {out}: {stats['rows']} rows ({n_opt} opt, {stats['rand_rows']} rand) "
          f"in {dt:.1f}s")
    return stats


def _dataset_cost(dataset: Path) -> str | None:
    entry = read_manifest(dataset.parent).get("phases", {}).get("gen-dataset", {})
    return entry.get("cost_fn")


def run_train_evaluator(dataset: Path, out: Path, cfg: dict, cost: str | None, no_forwarding: bool,
                        force: bool) -> EvaluatorModel:
    arch_space, _, hw_space, ev_cfg, _ = build(cfg)
    check_target(out, force)
    ensure_dir(out.parent)
    cost_fn = _cost(cost or _dataset_cost(dataset) or "edap")
    t0 = time.perf_counter()
    data = read_dataset(dataset, arch_space, hw_space)
    if no_forwarding:
        ev_cfg.train_no_forwarding = True
    model, val = train_evaluator(data, arch_space, hw_space, cost_fn, ev_cfg, progress=_progress)
    model.forwarding = not no_forwarding
    report = accuracy_report(model, val)
    model.metadata["dataset_sha256"] = sha256_file(dataset)
    model.metadata["validation_report"] = report.to_csv()
    model.save(out)
    val_path = out.with_name(out.stem + ".val.csv")
    _write_subset(val_path, data, val, arch_space, hw_space)
    dt = time.perf_counter() - t0
    record_phase(out.parent, "train-evaluator", cfg, {"seed": ev_cfg.hwgen.seed,
                                                      "split_seed": ev_cfg.split_seed},
                 {"dataset": dataset}, [out.name, val_path.name], dt,
                 {"cost_fn": str(cost_fn), "forwarding": not no_forwarding})
    print(report.to_csv(), end="")
    print(f"wrote {out} and {val_path} in {dt:.1f}s")
    return model


def _write_subset(path: Path, full: Dataset, part: Dataset, arch_space, hw_space):
    from .oracle import dataset_columns, _fmt
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset_columns(arch_space, hw_space))
    for i in range(len(part)):
        nums = np.concatenate([part.arch[i], part.hw[i], part.costs[i]])
        w.writerow([int(part.net_id[i]), part.kind[i]] + [_fmt(v) for v in nums])
    path.write_text(buf.getvalue())


def run_eval_evaluator(model_path: Path, dataset: Path, report_path: Path, cfg: dict, force: bool):
    check_target(report_path, force)
    ensure_dir(report_path.parent)
    model = EvaluatorModel.load(model_path)
    t0 = time.perf_counter()
    data = read_dataset(dataset, model.arch_space, model.hw_space)
    report = accuracy_report(model, data)
    report_path.write_text(report.to_csv())
    record_phase(report_path.parent, "eval-evaluator", cfg, {}, {"model": model_path, "dataset": dataset},
                 [report_path.name], time.perf_counter() - t0)
    print(report.to_csv(), end="")
    return report


def run_search(model_path: Path | None, out: Path, cfg: dict, force: bool) -> SearchResult:
    _, _, _, _, s_cfg = build(cfg)
    if (out / "arch.json").exists() and not force:
        raise FileExistsError(f"{out} already holds a search; pass --force to overwrite")
    ensure_dir(out)
    needs_eval = s_cfg.loss_variant != "nas" and s_cfg.lambda2 > 0
    if needs_eval and model_path is None:
        raise UsageError(f"--evaluator is required for {s_cfg.loss_variant} with lambda2 > 0")
    model = EvaluatorModel.load(model_path) if model_path else None
    t0 = time.perf_counter()
    task = make_task(s_cfg)
    result = search(task, None, model, s_cfg, progress=_progress)
    result.save(out)
    inputs = {"evaluator": model_path} if model_path else {}
    record_phase(out, "search", cfg, {"seed": s_cfg.seed}, inputs, ["arch.json", "trace.csv"],
                 time.perf_counter() - t0)
    print(f"search done: {','.join(op.name for op in result.final_arch)} "
          f"({result.zero_count} Zero) -> {out}")
    return result


def _result_from_arch(doc: dict) -> SearchResult:
    arch, space = arch_from_json(doc)
    meta = doc.get("search", {})
    s_cfg = SearchConfig.from_dict(meta.get("config", {}))
    alpha = np.array(meta.get("alpha", np.zeros((space.positions, 7))), dtype=float)
    return SearchResult(arch, alpha, alpha[None], [], s_cfg, space,
                        float(meta.get("search_val_accuracy", float("nan"))))


def run_finalize(arch_path: Path, model_path: Path | None, out: Path, cfg: dict, cost: str | None,
                 threads: int, force: bool, record_collapse: bool = False) -> dict:
    """With ``record_collapse`` an all-Zero search writes collapsed.json instead of failing."""
    _, const, _, _, _ = build(cfg)
    check_target(out, force)
    doc = json.loads(arch_path.read_text())
    result = _result_from_arch(doc)
    if cost:
        result.config.cost = str(_cost(cost))
    model = EvaluatorModel.load(model_path) if model_path else None
    t0 = time.perf_counter()
    try:
        final = finalize_result(result, model, threads=threads, const=const)
    except ArchitectureCollapsed as exc:
        if not record_collapse:
            raise
        return _record_collapse(result, str(exc), out, cfg, arch_path, t0)
    ensure_dir(out.parent)
    out.write_text(json.dumps(final, indent=2, sort_keys=True) + "\n")
    inputs = {"arch": arch_path}
    if model_path:
        inputs["evaluator"] = model_path
    # keep the manifest config replayable: the search section is the one the arch came from
    cfg = {**cfg, "search": result.config.to_dict()}
    record_phase(out.parent, "finalize", cfg, {"seed": result.config.seed}, inputs, [out.name],
                 time.perf_counter() - t0)
    c = final["config"]
    print(f"final: {c['dataflow']} {c['pe_x']}x{c['pe_y']} rf{c['rf_size']} "
          f"EDAP {final['edap']:.6g} accuracy {final['accuracy']:.2f}% -> {out}")
    return final


def _record_collapse(result, message: str, out: Path, cfg: dict, arch_path: Path, t0: float) -> dict:
    doc = collapsed_result(result, message)
    path = out.parent / COLLAPSED
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    cfg = {**cfg, "search": result.config.to_dict()}
    record_phase(out.parent, "finalize", cfg, {"seed": result.config.seed}, {"arch": arch_path},
                 [path.name], time.perf_counter() - t0)
    print(f"collapsed: {message} (stem-only accuracy {doc['accuracy']:.2f}%) -> {path}")
    return doc


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def report_rows(run_dirs: list[Path]) -> tuple[list[dict], list[str]]:
    rows, skipped = [], []
    for d in run_dirs:
        path = Path(d) / "final.json"
        if not path.exists() and (Path(d) / COLLAPSED).exists():
            f = json.loads((Path(d) / COLLAPSED).read_text())
            nan = float("nan")
            rows.append({"run": Path(d).name, "method": f["method"], "accuracy_error": f["accuracy_error"],
                         "latency": nan, "energy": nan, "area": nan, "EDAP": nan,
                         "dataflow": "collapsed"})
            continue
        if not path.exists():
            skipped.append(str(d))
            continue
        f = json.loads(path.read_text())
        o = f["oracle"]
        lat, en, ar = o["latency_ms"], o["energy_mj"], o["area_um2"]
        rows.append({"run": Path(d).name, "method": f.get("method", "dance"),
                     "accuracy_error": f["accuracy_error"], "latency": lat, "energy": en, "area": ar,
                     "EDAP": lat * en * ar, "dataflow": f["config"]["dataflow"]})
    return rows, skipped


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], str) else _fmt(r[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def write_scatter(rows: list[dict], path: Path):
    """Error vs EDAP, one series per method, log EDAP axis; deterministic SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dance"
    fig, ax = plt.subplots(figsize=(5, 3.6))
    styles = {"dance": ("o", "C0"), "edd": ("s", "C3"), "no-penalty": ("^", "C2")}
    for method in sorted({r["method"] for r in rows}):
        pts = [r for r in rows if r["method"] == method and np.isfinite(r["EDAP"])]
        if not pts:
            continue
        marker, color = styles.get(method, ("D", "C7"))
        ax.scatter([r["EDAP"] for r in pts], [r["accuracy_error"] for r in pts], marker=marker,
                   color=color, label=method, zorder=3)
        for r in pts:
            ax.annotate(r["run"], (r["EDAP"], r["accuracy_error"]), fontsize=6,
                        xytext=(3, 3), textcoords="offset points")
    ax.set_xscale("log")
    ax.set_xlabel("EDAP (ms * mJ * um^2, log)")
    ax.set_ylabel("toy-task error (%)")
    ax.grid(True, which="both", lw=0.3, alpha=0.5)
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def run_report(run_dirs: list[Path], out: Path, cfg: dict, force: bool) -> list[dict]:
    rows, skipped = report_rows(run_dirs)
    for d in skipped:
        logger.warning("skipping %s: no final.json", d)
        print(f"warning: skipped {d} (no final.json)", file=sys.stderr)
    for r in rows:
        if r["dataflow"] == "collapsed":
            print(f"warning: run {r['run']} collapsed to Zero at every position; lengthen the "
                  "lambda2 warm-up or lower lambda2", file=sys.stderr)
    if not rows:
        raise RuntimeError("no finalized run directories to report")
    ensure_dir(out)
    for name in ("report.csv", "scatter.svg"):
        check_target(out / name, force)
    t0 = time.perf_counter()
    (out / "report.csv").write_text(report_csv(rows))
    write_scatter(rows, out / "scatter.svg")
    record_phase(out, "report", cfg, {}, {}, ["report.csv", "scatter.svg"], time.perf_counter() - t0,
                 {"runs": [r["run"] for r in rows], "skipped": skipped})
    print(report_csv(rows), end="")
    return rows


# -- pipeline -----------------------------------------------------------------------

def pipeline_runs(preset: dict, base: dict, seed: int) -> list[tuple[str, dict]]:
    """(name, search-section) for the lambda2 grid plus the two baselines."""
    runs = []
    grid = preset["lambda2_grid"]
    for lam in grid:
        runs.append((f"dance_l{lam:g}", {**base, "lambda2": lam, "loss_variant": "dance"}))
    runs.append(("no_penalty", {**base, "lambda2": 0.0, "loss_variant": "nas"}))
    mid = grid[len(grid) // 2]
    runs.append((f"edd_original_l{mid:g}", {**base, "lambda2": mid, "loss_variant": "edd_original"}))
    for _, section in runs:
        section["seed"] = seed
        section["epochs"] = preset["search_epochs"]
    return runs


def run_pipeline(out: Path, cfg: dict, preset_name: str, seed: int, cost: str, threads: int,
                 resume: bool, force: bool) -> list[dict]:
    if preset_name not in PRESETS:
        raise UsageError(f"unknown preset {preset_name!r}")
    preset = PRESETS[preset_name]
    if out.exists() and any(out.iterdir()) and not (resume or force):
        raise FileExistsError(f"{out} is not empty; pass --resume or --force")
    ensure_dir(out)
    cfg = copy.deepcopy(cfg)
    if preset["evaluator_epochs"] is not None:
        cfg["evaluator"]["hwgen"]["epochs"] = preset["evaluator_epochs"]
        cfg["evaluator"]["hwgen"]["decay_every"] = max(1, preset["evaluator_epochs"] // 3)
        cfg["evaluator"]["costest"]["epochs"] = preset["evaluator_epochs"]
    for net, size in (preset["evaluator_batch"] or {}).items():
        cfg["evaluator"][net]["batch_size"] = size
    cfg["evaluator"]["hwgen"]["seed"] = seed
    cfg["evaluator"]["costest"]["seed"] = seed
    cfg["evaluator"]["split_seed"] = seed
    cfg["search"]["cost"] = cost
    build(cfg)
    timings = {}

    def phase(name, directory, fn):
        if resume and phase_done(directory, name):
            print(f"[{name}] up to date, skipping ({directory})")
            return
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            raise RuntimeError(f"pipeline phase {name!r} failed in {directory}: {exc}") from exc
        timings[f"{name}:{Path(directory).name}"] = round(time.perf_counter() - t0, 3)

    data_dir, ev_dir = out / "dataset", out / "evaluator"
    phase("gen-dataset", data_dir, lambda: (ensure_dir(data_dir), run_gen_dataset(
        data_dir / "dataset.csv", cfg, preset["networks"], seed, cost, 8, threads, True)))
    phase("train-evaluator", ev_dir, lambda: (ensure_dir(ev_dir), run_train_evaluator(
        data_dir / "dataset.csv", ev_dir / "model.bin", cfg, cost, False, True)))
    run_dirs = []
    for name, section in pipeline_runs(preset, cfg["search"], seed):
        rd = out / "runs" / name
        run_cfg = copy.deepcopy(cfg)
        run_cfg["search"] = section
        model = ev_dir / "model.bin"
        phase("search", rd, lambda: run_search(model, rd, run_cfg, True))
        phase("finalize", rd, lambda: run_finalize(rd / "arch.json", model, rd / "final.json", run_cfg,
                                                    None, threads, True, record_collapse=True))
        run_dirs.append(rd)
    rows = []
    phase("report", out, lambda: rows.extend(run_report(run_dirs, out, cfg, True)))
    print(f"pipeline complete: {out / 'report.csv'}")
    return rows


# -- argument parsing ---------------------------------------------------------------

def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from exc
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _warmup(text: str) -> tuple[int, float]:
    try:
        e, v = text.split(",")
        return int(e), float(v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("--warmup expects EPOCHS,LAMBDA2_SMALL") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (sections arch_space, cost_model, hw_space, "
                                         "evaluator, search) or a run manifest")
    common.add_argument("--set", action="append", default=[], metavar="A.B=VALUE",
                        help="override one config field by dotted path (repeatable)")
    common.add_argument("--threads", type=_positive_int, help="worker cap (default $DANCE_THREADS or 1)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="dance", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", parents=[common], help="label random networks with the oracle")
    g.add_argument("--networks", type=_positive_int, default=20000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cost", default="edap", help="edap | linear:lL,lE,lA | preset name")
    g.add_argument("--random-configs", type=int, default=8, help="random rows per network")
    g.add_argument("--sparse-fraction", type=float, default=0.5,
                   help="share of networks drawn with a random per-network Zero rate")
    g.add_argument("--out", default="dataset.csv")

    t = sub.add_parser("train-evaluator", parents=[common], help="train the surrogate")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", default="model.bin")
    t.add_argument("--cost", help="cost function the dataset was labelled with "
                                  "(default: read from the dataset manifest)")
    t.add_argument("--no-forwarding", action="store_true",
                   help="end-to-end inference uses the arch-only cost net")
    t.add_argument("--epochs", type=_positive_int, help="epochs for both sub-networks")

    e = sub.add_parser("eval-evaluator", parents=[common], help="accuracy table on held-out rows")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--report", default="report.csv")

    s = sub.add_parser("search", parents=[common], help="gradient co-search on the toy task")
    s.add_argument("--evaluator")
    s.add_argument("--cost")
    s.add_argument("--lambda2", type=_nonneg_float)
    s.add_argument("--lambda1", type=_nonneg_float)
    s.add_argument("--warmup", type=_warmup, metavar="EPOCHS,LAMBDA2_SMALL")
    s.add_argument("--no-warmup", action="store_true")
    s.add_argument("--epochs", type=_positive_int)
    s.add_argument("--seed", type=int)
    s.add_argument("--variant", choices=("dance", "nas", "edd_original", "edd_fixed"))
    s.add_argument("--mode", choices=("soft", "straight_through"))
    s.add_argument("--out", required=True)

    f = sub.add_parser("finalize", parents=[common], help="exact hardware + retrained accuracy")
    f.add_argument("--arch", required=True, help="arch.json from a search")
    f.add_argument("--evaluator", help="compare surrogate predictions with the oracle")
    f.add_argument("--cost")
    f.add_argument("--out", help="default: final.json next to the arch file")

    r = sub.add_parser("report", parents=[common], help="CSV + SVG over finalized runs")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", default=".")

    pl = sub.add_parser("pipeline", parents=[common], help="dataset -> evaluator -> searches -> report")
    pl.add_argument("--preset", default="smoke", choices=sorted(PRESETS))
    pl.add_argument("--seed", type=int, default=1)
    pl.add_argument("--cost", default="edap")
    pl.add_argument("--out", default="pipeline_out")
    pl.add_argument("--resume", action="store_true", help="skip phases whose outputs are intact")
    return p


def _search_cfg(args, cfg: dict) -> dict:
    sec = cfg["search"]
    for attr, key in (("cost", "cost"), ("lambda2", "lambda2"), ("lambda1", "lambda1"),
                      ("epochs", "epochs"), ("seed", "seed"), ("variant", "loss_variant"),
                      ("mode", "mode")):
        v = getattr(args, attr)
        if v is not None:
            sec[key] = str(_cost(v)) if key == "cost" else v
    if args.warmup and args.no_warmup:
        raise UsageError("--warmup and --no-warmup are mutually exclusive")
    if args.warmup:
        sec["warmup_epochs"], sec["lambda2_small"] = args.warmup
    if args.no_warmup:
        sec["warmup_epochs"] = 0
    return cfg


def dispatch(args) -> int:
    cfg = load_config(args.config, args.set)
    threads = _threads(args)
    cmd = args.command
    if cmd == "gen-dataset":
        if args.random_configs < 0:
            raise UsageError("--random-configs must be >= 0")
        if not 0.0 <= args.sparse_fraction <= 1.0:
            raise UsageError("--sparse-fraction must lie in [0, 1]")
        run_gen_dataset(Path(args.out), cfg, args.networks, args.seed, args.cost, args.random_configs,
                        threads, args.force, args.sparse_fraction)
    elif cmd == "train-evaluator":
        if args.epochs:
            cfg["evaluator"]["hwgen"]["epochs"] = args.epochs
            cfg["evaluator"]["costest"]["epochs"] = args.epochs
        run_train_evaluator(Path(args.dataset), Path(args.out), cfg, args.cost, args.no_forwarding,
                            args.force)
    elif cmd == "eval-evaluator":
        run_eval_evaluator(Path(args.model), Path(args.dataset), Path(args.report), cfg, args.force)
    elif cmd == "search":
        cfg = _search_cfg(args, cfg)
        run_search(Path(args.evaluator) if args.evaluator else None, Path(args.out), cfg, args.force)
    elif cmd == "finalize":
        arch = Path(args.arch)
        out = Path(args.out) if args.out else arch.with_name("final.json")
        run_finalize(arch, Path(args.evaluator) if args.evaluator else None, out, cfg, args.cost,
                     threads, args.force)
    elif cmd == "report":
        run_report([Path(r) for r in args.runs], Path(args.out), cfg, args.force)
    elif cmd == "pipeline":
        run_pipeline(Path(args.out), cfg, args.preset, args.seed, args.cost, threads, args.resume,
                     args.force)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return dispatch(args)
    except UsageError as exc:
        print(f"dance {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: report and exit 1
        logger.debug("failure", exc_info=True)
        print(f"dance {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
