"""Benchmark orchestration: manifest -> alignment -> splits -> training ->
metrics -> aggregation -> reports, with resumable runs and run metadata.

The result store is an append-only CSV rewritten atomically per flush in a
canonical order, so interrupted runs resume to byte-identical stores. All
harness-chosen constants are serialized into run_meta.json; timestamps live
in a separate run_times.json so complete stores compare byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pe_encoder  # noqa: F401  (registers the built-in encoder)
from .align import (
    AlignedMatrix,
    align_cell_table,
    align_coordinate_encoder,
    align_entities_h3_first,
    align_raster,
    read_cell_table_csv,
    read_entity_csv,
    read_erf,
    write_entity_csv,
    write_erf,
)
from .aggregate import (
    CityScore,
    ResultRecord,
    city_ranks,
    city_score,
    mean_city_rank,
    overall_rank,
    spearman_factor_correlation,
    split_delta,
    task_summary,
)
from .core import (
    AGE_CITIES,
    BENCHMARK_CITIES,
    METRIC_DIRECTION,
    METRICS_FOR_KIND,
    TASK_PRIMARY_METRIC,
    CoordinateEncoderSupport,
    Manifest,
    Rect,
    TaskDataset,
    ValidationError,
    get_encoder,
    load_manifest,
    load_task_dataset,
    stable_seed,
    task_direction,
    write_task_dataset,
)
from .grid import H3_RES8_EDGE_M, HexGrid, build_block_grid
from .heads import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, EARLY_STOP_TOL, HeadConfig, gradient_check, predict, train_head
from .metrics import KL_EPSILON, classification_metrics, distribution_metrics, regression_metrics
from .pe_encoder import PEConfig
from .split import DEFAULT_SEEDS, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC, TEST, random_split, spatial_split, write_split_csv
from .synth import SynthConfig, synth_city

STORE_HEADER = ("model", "task", "city", "seed", "protocol", "metric", "value", "n_test")
_METRIC_ORDER = {m: i for kind in METRICS_FOR_KIND.values() for i, m in enumerate(kind)}


def _fmt(v: float) -> str:
    return repr(float(v))


class ResultStore:
    """Append-only record sink; flush rewrites the CSV atomically in
    canonical order so resumed runs converge to identical bytes."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records: list[ResultRecord] = []
        if self.path.exists():
            self.records = read_result_store(self.path)

    def group_key(self, r: ResultRecord) -> tuple:
        return (r.model_id, r.task, r.city, r.seed, r.protocol)

    def completed_groups(self) -> set[tuple]:
        counts: dict[tuple, set[str]] = {}
        for r in self.records:
            counts.setdefault(self.group_key(r), set()).add(r.metric)
        return {k for k, metrics in counts.items() if len(metrics) >= 3}

    def add(self, records: list[ResultRecord]) -> None:
        self.records.extend(records)

    def flush(self) -> None:
        ordered = sorted(
            self.records,
            key=lambda r: (r.model_id, r.task, r.city, r.protocol, r.seed,
                           _METRIC_ORDER.get(r.metric, 99)),
        )
        tmp = self.path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(STORE_HEADER)
            for r in ordered:
                w.writerow([r.model_id, r.task, r.city, r.seed, r.protocol,
                            r.metric, _fmt(r.value), r.n_test])
        os.replace(tmp, self.path)


def read_result_store(path: str | Path) -> list[ResultRecord]:
    path = Path(path)
    out: list[ResultRecord] = []
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(STORE_HEADER):
            raise ValidationError(f"{path}: unexpected result store header {header}")
        for row in reader:
            out.append(ResultRecord(
                model_id=row[0], task=row[1], city=row[2], seed=int(row[3]),
                protocol=row[4], metric=row[5], value=float(row[6]), n_test=int(row[7]),
            ))
    return out


@dataclass(frozen=True)
class RunPlan:
    manifest_path: Path
    out_dir: Path
    models: tuple[str, ...] | None = None
    cities: tuple[str, ...] | None = None
    tasks: tuple[str, ...] | None = None
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    protocols: tuple[str, ...] = ("spatial", "random")
    nx: int = 10
    ny: int = 10
    head: str = "mlp"
    hidden_dim: int = 1024
    batch_size: int = 512
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    test_frac: float = DEFAULT_TEST_FRAC
    val_frac: float = DEFAULT_VAL_FRAC

    def __post_init__(self):
        bad = set(self.protocols) - {"spatial", "random"}
        if bad or not self.protocols:
            raise ValidationError(f"protocols must be a nonempty subset of spatial,random; got {self.protocols}")
        if not self.seeds:
            raise ValidationError("need at least one seed")
        if self.patience >= self.max_epochs:
            raise ValidationError("patience must be < max_epochs")


def _head_config(plan: RunPlan, ds: TaskDataset) -> HeadConfig:
    output = {"scalar": "scalar", "class": "logits", "distribution": "distribution"}[ds.label_kind]
    n_out = 1 if output == "scalar" else int(ds.n_classes)
    return HeadConfig(kind=plan.head, output=output, n_out=n_out,
                      hidden_dim=plan.hidden_dim, batch_size=plan.batch_size,
                      learning_rate=plan.learning_rate, max_epochs=plan.max_epochs,
                      patience=plan.patience)


def _load_representation_support(manifest: Manifest, model_id: str, city: str,
                                 default_hexgrid: HexGrid):
    m = manifest.models[model_id]
    if m.support == "coordinate_encoder":
        return get_encoder(m.encoder)
    path = manifest.resolve(m.files[city])
    if m.support == "raster":
        return read_erf(path)
    if m.support == "entity_set":
        return read_entity_csv(path)
    if m.hexgrid is not None:
        grid = HexGrid(float(m.hexgrid["lon0"]), float(m.hexgrid["lat0"]),
                       float(m.hexgrid.get("edge_len_m", H3_RES8_EDGE_M)))
        return read_cell_table_csv(path, grid=grid)
    try:
        return read_cell_table_csv(path)  # grid from the file comment
    except ValidationError:
        return read_cell_table_csv(path, grid=default_hexgrid)


def _align(support, task: TaskDataset, model_id: str, hexgrid: HexGrid) -> AlignedMatrix:
    from .core import CellTableSupport, EntitySetSupport, RasterSupport

    if isinstance(support, RasterSupport):
        return align_raster(support, task, model_id=model_id)
    if isinstance(support, EntitySetSupport):
        return align_entities_h3_first(support, hexgrid, task, model_id=model_id)
    if isinstance(support, CellTableSupport):
        return align_cell_table(support, task, model_id=model_id)
    if isinstance(support, CoordinateEncoderSupport):
        return align_coordinate_encoder(support, task, model_id=model_id)
    raise ValidationError(f"unsupported representation support {type(support).__name__}")


def _evaluate(task: TaskDataset, features: AlignedMatrix, split, cfg: HeadConfig,
              run_seed: int) -> list[ResultRecord]:
    head = train_head(features, task.labels, split, cfg, run_seed)
    preds = predict(head, features)
    mask = split.mask(TEST) & features.valid
    n_test = int(np.count_nonzero(mask))
    if n_test == 0:
        raise ValidationError("no valid test units")
    y = task.labels[mask]
    p = preds[mask]
    if task.label_kind == "scalar":
        computed = regression_metrics(y, p)
    elif task.label_kind == "class":
        computed = classification_metrics(y, p, task.n_classes)
    else:
        computed = distribution_metrics(y, p)
    out = []
    for name in METRICS_FOR_KIND[task.label_kind]:
        mv = computed[name]
        value = float("nan") if (name == "r2" and mv.degenerate) else mv.value
        out.append(ResultRecord(model_id=features.model_id, task=task.task, city=task.city,
                                seed=split.seed, protocol=split.protocol, metric=name,
                                value=value, n_test=n_test))
    return out


@dataclass
class RunOutcome:
    exit_code: int
    new_records: int
    skipped_groups: int
    failures: list[tuple[str, str]] = field(default_factory=list)


def run(plan: RunPlan, log=print) -> RunOutcome:
    """Execute the plan; resumable and deterministic. Splits are computed and
    hashed before any representation is loaded, so they cannot depend on
    models. Per-group failures are recorded and skipped."""
    from .core import validate_manifest

    manifest = load_manifest(plan.manifest_path)
    report_v = validate_manifest(manifest)
    if not report_v.ok:
        for e in report_v.errors:
            log(f"manifest error: {e}")
        return RunOutcome(exit_code=1, new_records=0, skipped_groups=0,
                          failures=[("manifest", e) for e in report_v.errors])
    for w in report_v.warnings:
        log(f"warning: {w}")

    out_dir = Path(plan.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "splits").mkdir(exist_ok=True)
    store = ResultStore(out_dir / "results.csv")
    completed = store.completed_groups()

    models = list(plan.models) if plan.models else sorted(manifest.models)
    for m in models:
        if m not in manifest.models:
            raise ValidationError(f"model {m!r} not in manifest")
    cities = [c for c in sorted(manifest.cities) if plan.cities is None or c in plan.cities]
    started = time.time()

    # Phase 1: datasets, grids, and model-invariant splits (hashed before any
    # representation is touched).
    datasets: dict[tuple[str, str], TaskDataset] = {}
    splits: dict[tuple[str, str, str, int], object] = {}
    split_hashes: dict[str, str] = {}
    grids: dict[tuple[str, str], tuple] = {}
    hexgrids: dict[tuple[str, str], HexGrid] = {}
    plan_rows: list[tuple[str, str]] = []
    for city in cities:
        for task_name in sorted(manifest.cities[city]):
            if plan.tasks is not None and task_name not in plan.tasks:
                continue
            if task_name == "AGE" and city in BENCHMARK_CITIES and city not in AGE_CITIES:
                log(f"AGE restricted: skipping {city}")
                continue
            ds = load_task_dataset(manifest.resolve(manifest.cities[city][task_name]))
            if (ds.city, ds.task) != (city, task_name):
                raise ValidationError(
                    f"task file metadata ({ds.city},{ds.task}) != manifest entry ({city},{task_name})")
            datasets[(city, task_name)] = ds
            grid = build_block_grid(ds.extent, plan.nx, plan.ny)
            grids[(city, task_name)] = grid.signature()
            hexgrids[(city, task_name)] = HexGrid(*ds.extent.center)
            plan_rows.append((city, task_name))
            for protocol in plan.protocols:
                for seed in plan.seeds:
                    a = (spatial_split(ds, grid, seed, plan.test_frac, plan.val_frac)
                         if protocol == "spatial"
                         else random_split(ds, seed, plan.test_frac, plan.val_frac))
                    splits[(city, task_name, protocol, seed)] = a
                    key = f"{city}|{task_name}|{protocol}|{seed}"
                    split_hashes[key] = a.assignment_hash()
                    write_split_csv(out_dir / "splits" / f"{key.replace('|', '_')}.csv", a)

    meta = {
        "plan": {
            "models": models, "cities": cities,
            "tasks": sorted({t for _, t in plan_rows}),
            "seeds": list(plan.seeds), "protocols": list(plan.protocols),
            "grid": [plan.nx, plan.ny], "head": plan.head,
            "hidden_dim": plan.hidden_dim, "batch_size": plan.batch_size,
            "learning_rate": plan.learning_rate, "max_epochs": plan.max_epochs,
            "patience": plan.patience,
            "test_frac": plan.test_frac, "val_frac": plan.val_frac,
        },
        "constants": harness_constants(),
        "grids": {f"{c}|{t}": list(sig) for (c, t), sig in sorted(grids.items())},
        "hexgrids": {f"{c}|{t}": list(g.signature()) for (c, t), g in sorted(hexgrids.items())},
        "splits": dict(sorted(split_hashes.items())),
    }
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")

    # Phase 2: align and evaluate.
    failures: list[tuple[str, str]] = []
    new_records = 0
    skipped = 0
    for model_id in models:
        for (city, task_name) in plan_rows:
            ds = datasets[(city, task_name)]
            pending = [(protocol, seed)
                       for protocol in plan.protocols for seed in plan.seeds
                       if (model_id, task_name, city, seed, protocol) not in completed]
            skipped += len(plan.protocols) * len(plan.seeds) - len(pending)
            if not pending:
                continue
            try:
                support = _load_representation_support(manifest, model_id, city,
                                                       hexgrids[(city, task_name)])
                features = _align(support, ds, model_id, hexgrids[(city, task_name)])
                cfg = _head_config(plan, ds)
            except (ValidationError, KeyError, OSError) as e:
                for protocol, seed in pending:
                    failures.append((f"{model_id}|{task_name}|{city}|{seed}|{protocol}", str(e)))
                continue
            for protocol, seed in pending:
                a = splits[(city, task_name, protocol, seed)]
                run_seed = stable_seed(model_id, task_name, city, seed, protocol)
                try:
                    records = _evaluate(ds, features, a, cfg, run_seed)
                except ValidationError as e:
                    failures.append((f"{model_id}|{task_name}|{city}|{seed}|{protocol}", str(e)))
                    continue
                store.add(records)
                new_records += len(records)
                store.flush()

    if failures:
        fail_path = out_dir / "failures.csv"
        with fail_path.open("w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["run_key", "error"])
            for key, err in sorted(failures):
                w.writerow([key, err])
    (out_dir / "run_times.json").write_text(
        json.dumps({"started": started, "finished": time.time()}) + "\n", encoding="utf-8")
    log(f"run complete: {new_records} new records, {skipped} groups skipped, "
        f"{len(failures)} failures")
    return RunOutcome(exit_code=2 if failures else 0, new_records=new_records,
                      skipped_groups=skipped, failures=failures)


def harness_constants() -> dict:
    """Every harness-chosen constant, inspectable next to the numbers it produced."""
    pe = PEConfig()
    return {
        "kl_epsilon": KL_EPSILON,
        "kl_log": "natural",
        "adam": {"beta1": ADAM_BETA1, "beta2": ADAM_BETA2, "eps": ADAM_EPS},
        "weight_init": "uniform(+-sqrt(6/(fan_in+fan_out)))",
        "scaler_std": "population",
        "early_stop_tol": EARLY_STOP_TOL,
        "block_rounding": "half_up_min1_occupied_only",
        "block_boundary": "half_open_max_closed",
        "grid_units": "degrees_over_task_extent",
        "hex": {"edge_len_m": H3_RES8_EDGE_M, "scheme": "axial_aeqd_approx"},
        "pe": {"id": pe_encoder.PE_ENCODER_ID, "n_freq": pe.n_freq,
               "r_min_m": pe.r_min_m, "r_max_m": pe.r_max_m},
        "entity_pooling": "unweighted_mean",
        "invalid_rows": "dropped",
        "raster_coarse_rule": "rep_cell_contains_representative_point",
        "rng": "numpy_pcg64_sha256_keyed",
    }


# ---------------------------------------------------------------------------
# Reporting

def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def report(out_dir: str | Path, factors_path: str | Path | None = None, log=print) -> dict[str, Path]:
    """Aggregate a result store into summary files and a text leaderboard."""
    out_dir = Path(out_dir)
    store_path = out_dir / "results.csv"
    records = read_result_store(store_path)
    if not records:
        raise ValidationError(f"{store_path}: result store is empty")

    primary = {r for r in records if r.metric == TASK_PRIMARY_METRIC[r.task]}
    by_group: dict[tuple, list[ResultRecord]] = {}
    for r in primary:
        by_group.setdefault((r.model_id, r.task, r.city, r.protocol), []).append(r)
    scores: dict[tuple, CityScore] = {}
    for key in sorted(by_group):
        try:
            scores[key] = city_score(by_group[key])
        except ValidationError:
            continue  # all seeds degenerate for this cell

    paths: dict[str, Path] = {}
    spatial = [s for s in scores.values() if s.protocol == "spatial"]
    random_ = [s for s in scores.values() if s.protocol == "random"]

    # task_summary.csv
    by_mt: dict[tuple[str, str], list[CityScore]] = {}
    for s in spatial:
        by_mt.setdefault((s.model_id, s.task), []).append(s)
    summaries = {mt: task_summary(v) for mt, v in sorted(by_mt.items())}
    rows = [[m, t, _fmt(ts.avg), "" if ts.c_std is None else _fmt(ts.c_std), ts.n_cities]
            for (m, t), ts in summaries.items()]
    paths["task_summary"] = out_dir / "task_summary.csv"
    _write_csv(paths["task_summary"], ["model", "task", "avg", "c_std", "n_cities"], rows)

    # ranks.csv (per-task mean city rank) and overall.csv
    by_tc: dict[tuple[str, str], dict[str, float]] = {}
    for s in spatial:
        by_tc.setdefault((s.task, s.city), {})[s.model_id] = s.value
    per_task_tables: dict[str, list[dict[str, int]]] = {}
    for (task_name, _), model_scores in sorted(by_tc.items()):
        rr = city_ranks(model_scores, task_direction(task_name))
        per_task_tables.setdefault(task_name, []).append(dict(rr.ranks))
    task_mean_ranks = {t: mean_city_rank(tables) for t, tables in per_task_tables.items()}
    rank_rows = [[m, t, _fmt(r)] for t in sorted(task_mean_ranks)
                 for m, r in sorted(task_mean_ranks[t].items())]
    paths["ranks"] = out_dir / "ranks.csv"
    _write_csv(paths["ranks"], ["model", "task", "mean_city_rank"], rank_rows)

    overall = overall_rank(task_mean_ranks)
    overall_rows = [[m, _fmt(r)] for m, r in sorted(overall.ranks.items(), key=lambda kv: (kv[1], kv[0]))]
    paths["overall"] = out_dir / "overall.csv"
    _write_csv(paths["overall"], ["model", "overall_rank"], overall_rows)

    # split_delta.csv
    sd = split_delta(random_, spatial)
    delta_rows = [[m, t, c, _fmt(d)] for (m, t, c), d in sorted(sd.deltas.items())]
    paths["split_delta"] = out_dir / "split_delta.csv"
    _write_csv(paths["split_delta"], ["model", "task", "city", "delta"], delta_rows)

    # factor_corr.csv (needs an external per-city factor table)
    paths["factor_corr"] = out_dir / "factor_corr.csv"
    corr_rows: list[list] = []
    if factors_path is not None:
        factors = _read_factors(factors_path)
        perf_by_task: dict[str, dict[str, list[float]]] = {}
        for s in spatial:
            perf_by_task.setdefault(s.task, {}).setdefault(s.city, []).append(s.value)
        for task_name in sorted(perf_by_task):
            perf = {c: float(np.mean(v)) for c, v in perf_by_task[task_name].items()}
            direction = task_direction(task_name)
            for fname in sorted(factors):
                try:
                    res = spearman_factor_correlation(factors[fname], perf, direction)
                except ValidationError:
                    continue
                if not res.undefined:
                    corr_rows.append([task_name, fname, _fmt(res.rho), _fmt(res.p_value),
                                      res.n, int(res.approximate)])
    _write_csv(paths["factor_corr"], ["task", "factor", "rho", "p_value", "n", "approximate"],
               corr_rows)

    # leaderboard: fixed width, ordered by overall rank ascending
    tasks = sorted({t for _, t in summaries})
    lines = []
    name_w = max([len(m) for m in overall.ranks] + [5]) + 2
    header = f"{'model':<{name_w}}{'overall':>9}" + "".join(f"{t:>10}" for t in tasks)
    lines.append(header)
    lines.append("-" * len(header))
    for m, r in sorted(overall.ranks.items(), key=lambda kv: (kv[1], kv[0])):
        cells = []
        for t in tasks:
            ts = summaries.get((m, t))
            cells.append(f"{ts.avg:>10.4f}" if ts else f"{'-':>10}")
        lines.append(f"{m:<{name_w}}{r:>9.3f}" + "".join(cells))
    paths["leaderboard"] = out_dir / "leaderboard.txt"
    paths["leaderboard"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    log("\n".join(lines))
    return paths


def _read_factors(path: str | Path) -> dict[str, dict[str, float]]:
    """CSV `city,<factor>,<factor>,...` -> factor name -> city -> value."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:1] != ["city"]:
        raise ValidationError(f"{path}: factors header must start with 'city'")
    names = rows[0][1:]
    out: dict[str, dict[str, float]] = {n: {} for n in names}
    for r in rows[1:]:
        for n, v in zip(names, r[1:]):
            if v != "":
                out[n][r[0]] = float(v)
    return out


# ---------------------------------------------------------------------------
# Synthetic-city persistence

def write_synth_city(cfg: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Persist a synthetic city in the standard formats plus a manifest, so
    the instance is indistinguishable from loaded real data downstream."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    task, rep = synth_city(cfg)
    task_path = out_dir / f"{cfg.city}_{task.task}.csv"
    write_task_dataset(task_path, task)
    model_entry: dict = {"dim": rep.dim, "support": None}
    emb_path = None
    from .core import EntitySetSupport, RasterSupport

    if isinstance(rep.support, RasterSupport):
        emb_path = out_dir / f"{rep.model_id}_{cfg.city}.erf"
        write_erf(emb_path, rep.support)
        model_entry["support"] = "raster"
        model_entry["files"] = {cfg.city: emb_path.name}
    elif isinstance(rep.support, EntitySetSupport):
        emb_path = out_dir / f"{rep.model_id}_{cfg.city}.csv"
        write_entity_csv(emb_path, rep.support)
        model_entry["support"] = "entity_set"
        model_entry["files"] = {cfg.city: emb_path.name}
    else:
        model_entry["support"] = "coordinate_encoder"
        model_entry["encoder"] = pe_encoder.PE_ENCODER_ID
    manifest_doc = {
        "cities": {cfg.city: {"tasks": {task.task: task_path.name}}},
        "models": {rep.model_id: model_entry},
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest_doc, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    paths = {"task": task_path, "manifest": manifest_path}
    if emb_path is not None:
        paths["embedding"] = emb_path
    return paths


# ---------------------------------------------------------------------------
# Entry points

def _cmd_validate(args) -> int:
    from .core import validate_manifest

    report_v = validate_manifest(load_manifest(args.manifest))
    for e in report_v.errors:
        print(f"error: {e}")
    for w in report_v.warnings:
        print(f"warning: {w}")
    for model, city, task in report_v.resolvable:
        print(f"ok: {model} / {city} / {task}")
    for model, city, task, reason in report_v.gaps:
        print(f"gap: {model} / {city} / {task}: {reason}")
    print(report_v.summary())
    return 0 if report_v.ok else 1


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        nx, ny = text.lower().split("x")
        return int(nx), int(ny)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 10x10, got {text!r}") from None


def _cmd_run(args) -> int:
    plan = RunPlan(
        manifest_path=Path(args.manifest), out_dir=Path(args.out),
        models=tuple(args.models.split(",")) if args.models else None,
        cities=tuple(args.cities.split(",")) if args.cities else None,
        tasks=tuple(args.tasks.split(",")) if args.tasks else None,
        seeds=tuple(int(s) for s in args.seeds.split(",")) if args.seeds else DEFAULT_SEEDS,
        protocols=tuple(args.protocols.split(",")),
        nx=args.grid[0], ny=args.grid[1], head=args.head,
        batch_size=args.batch_size, max_epochs=args.max_epochs,
        hidden_dim=args.hidden_dim, patience=args.patience,
    )
    return run(plan).exit_code


def _cmd_report(args) -> int:
    report(args.dir, factors_path=args.factors)
    return 0


def _cmd_synth(args) -> int:
    doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if "extent" in doc:
        doc["extent"] = Rect(*doc["extent"])
    cfg = SynthConfig(**doc)
    paths = write_synth_city(cfg, args.out)
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 12))
    y_scalar = rng.standard_normal(8)
    y_class = rng.integers(0, 3, size=8)
    p = rng.random((8, 3))
    y_dist = p / p.sum(axis=1, keepdims=True)
    checks = [
        ("linear+mse", HeadConfig(kind="linear", output="scalar", n_out=1,
                                  hidden_dim=8, batch_size=8, max_epochs=2, patience=1),
         (x, y_scalar), 1e-6),
        ("mlp+cross_entropy", HeadConfig(kind="mlp", output="logits", n_out=3,
                                         hidden_dim=8, batch_size=8, max_epochs=2, patience=1),
         (x, y_class), 1e-4),
        ("mlp+kl", HeadConfig(kind="mlp", output="distribution", n_out=3,
                              hidden_dim=8, batch_size=8, max_epochs=2, patience=1),
         (x, y_dist), 1e-4),
    ]
    ok = True
    for name, cfg, batch, tol in checks:
        err = gradient_check(cfg, batch, run_seed=11)
        status = "ok" if err < tol else "FAIL"
        ok &= err < tol
        print(f"{name}: max relative error {err:.3e} (tolerance {tol:g}) {status}")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="urbanbench",
                                     description="Spatial-unit-agnostic urban embedding benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest without running")
    p.add_argument("manifest")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("run", help="run the benchmark for a manifest")
    p.add_argument("manifest")
    p.add_argument("--grid", type=_parse_grid, default=(10, 10))
    p.add_argument("--protocols", default="spatial,random")
    p.add_argument("--seeds", default=None)
    p.add_argument("--head", choices=["linear", "mlp"], default="mlp")
    p.add_argument("--out", default="runs/out")
    p.add_argument("--models", default=None)
    p.add_argument("--cities", default=None)
    p.add_argument("--tasks", default=None)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--hidden-dim", type=int, default=1024)
    p.add_argument("--patience", type=int, default=10)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("report", help="aggregate a result store into summaries")
    p.add_argument("dir")
    p.add_argument("--factors", default=None)
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic city")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("gradcheck", help="verify optimizer gradients numerically")
    p.set_defaults(fn=_cmd_gradcheck)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
