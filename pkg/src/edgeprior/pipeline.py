"""Batch orchestration: convert, evaluate, compare, sweep and noise reporting.

Every artifact is a plain file under the output directory::

    <out>/<tag>/<flowchart id>/prep.png, edge.png
    <out>/<tag>/<flowchart id>/run<k>/request.json, reply.json, raw.txt, final.mmd, record.json
    <out>/<tag>/results.json, summary.csv
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import yaml

from . import imaging
from .imaging import CannyParams, canny, canny_config, preprocess, read_image, write_edge_map, write_image
from .mermaid import ParseDiagnostics, parse, parse_or_raise, sanitize
from .metrics import (LEVELS, MatchCounts, compare_asts, counts_to_row, empty_prediction_counts,
                      micro_aggregate, per_flowchart_aggregate, records_to_csv, score)
from .repair import repair_loop
from .stats import PairedSample, StatsReport, analyze, format_table, stats_reports_to_json
from .vlm_client import (CONDITIONS, EDGEFLOW, ChatEndpoint, FixtureKey, GenerationParams,
                         MockEndpoint, build_bundle, extract_code_block, generate)

__all__ = [
    "ManifestEntry",
    "DatasetManifest",
    "EndpointConfig",
    "RunConfig",
    "SweepPlan",
    "RunRecord",
    "Evaluation",
    "load_manifest",
    "load_config",
    "make_endpoints",
    "convert",
    "evaluate",
    "load_evaluation",
    "compare",
    "sweep",
    "noise_report",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: Path
    truth_path: Path


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest ids must be unique")

    def ids(self) -> List[str]:
        return [e.id for e in self.entries]

    def __len__(self):
        return len(self.entries)


def load_manifest(path: Union[str, Path], check_files: bool = True) -> DatasetManifest:
    """Read a JSON/YAML manifest; relative paths resolve against its directory."""
    path = Path(path)
    doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    rows = doc["entries"] if isinstance(doc, dict) else doc
    base = path.parent
    entries = []
    for row in rows:
        e = ManifestEntry(str(row["id"]), base / row["image_path"], base / row["truth_path"])
        if check_files:
            for p in (e.image_path, e.truth_path):
                if not p.is_file():
                    raise FileNotFoundError(f"manifest entry {e.id!r}: missing file {p}")
        entries.append(e)
    return DatasetManifest(entries)


@dataclass
class EndpointConfig:
    url: Optional[str] = None
    model: str = "default"
    api_key_env: str = "EDGEPRIOR_API_KEY"
    timeout: float = 300.0


@dataclass
class RunConfig:
    condition: str = EDGEFLOW
    canny: Optional[CannyParams] = field(default_factory=lambda: canny_config("C3"))
    runs: int = 5
    generation: GenerationParams = field(default_factory=GenerationParams)
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    fixer: EndpointConfig = field(default_factory=EndpointConfig)
    out: Path = Path("runs")
    mock: Optional[Path] = None
    workers: int = 4
    max_dim: int = 4000

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.condition == EDGEFLOW and self.canny is None:
            raise ValueError("edgeflow condition requires Canny parameters")
        self.out = Path(self.out)
        if self.mock is not None:
            self.mock = Path(self.mock)


def load_config(path: Optional[Union[str, Path]] = None, **overrides) -> RunConfig:
    """Build a RunConfig from a YAML/JSON document, then apply non-None overrides."""
    doc = {}
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    kwargs = {}
    for key in ("condition", "runs", "out", "mock", "workers", "max_dim"):
        if key in doc:
            kwargs[key] = doc[key]
    if "canny" in doc:
        c = doc["canny"]
        if isinstance(c, str):
            kwargs["canny"] = CannyParams.parse(c)
        elif c is not None:
            kwargs["canny"] = CannyParams(c["low"], c["high"], c.get("aperture", 3), c.get("config_id"))
    if "generation" in doc:
        kwargs["generation"] = GenerationParams(**doc["generation"])
    if "endpoint" in doc:
        kwargs["endpoint"] = EndpointConfig(**doc["endpoint"])
    if "fixer" in doc:
        kwargs["fixer"] = EndpointConfig(**doc["fixer"])
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "canny" and isinstance(value, str):
            value = CannyParams.parse(value)
        if key in ("endpoint_url", "model", "fixer_url", "fixer_model"):
            target = "endpoint" if key in ("endpoint_url", "model") else "fixer"
            cfg = kwargs.get(target, EndpointConfig())
            attr = "url" if key.endswith("url") else "model"
            kwargs[target] = replace(cfg, **{attr: value})
            continue
        kwargs[key] = value
    return RunConfig(**kwargs)


def make_endpoints(config: RunConfig):
    """(vision endpoint, fixer endpoint); mock fixtures take precedence."""
    if config.mock is not None:
        mock = MockEndpoint(config.mock)
        return mock, mock
    if not config.endpoint.url:
        raise ValueError("no endpoint URL configured and no mock fixtures given")
    vlm = ChatEndpoint(config.endpoint.url, config.endpoint.model,
                       api_key_env=config.endpoint.api_key_env, timeout=config.endpoint.timeout)
    fixer_cfg = config.fixer
    fixer = ChatEndpoint(fixer_cfg.url or config.endpoint.url, fixer_cfg.model,
                         api_key_env=fixer_cfg.api_key_env, timeout=fixer_cfg.timeout)
    return vlm, fixer


@dataclass
class SweepPlan:
    stage1: Tuple[str, ...] = imaging.STAGE1_CONFIGS
    stage2_apertures: Tuple[int, ...] = (5, 7)

    def __post_init__(self):
        for name in self.stage1:
            p = canny_config(name)
            if p.aperture != 3:
                raise ValueError(f"stage 1 config {name} must use aperture 3")
        for ap in self.stage2_apertures:
            if ap not in (3, 5, 7):
                raise ValueError(f"invalid stage 2 aperture {ap}")

    def stage2_configs(self, winner: CannyParams) -> List[CannyParams]:
        out = []
        for ap in self.stage2_apertures:
            named = [p for p in imaging.CANNY_CONFIGS.values()
                     if (p.low, p.high, p.aperture) == (winner.low, winner.high, ap)]
            cid = named[0].config_id if named else f"{winner.config_id or 'S1'}-a{ap}"
            out.append(CannyParams(winner.low, winner.high, ap, cid))
        return out


# ---------------------------------------------------------------------------
# convert


@dataclass
class RunRecord:
    flowchart_id: str
    condition: str
    run: int
    valid: bool
    iterations_used: int
    final_code: str
    error: Optional[str] = None
    timings: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "flowchart_id": self.flowchart_id,
            "condition": self.condition,
            "run": self.run,
            "valid": self.valid,
            "iterations_used": self.iterations_used,
            "error": self.error,
            "timings": self.timings,
        }


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_entry(entry: ManifestEntry, config: RunConfig, entry_dir: Path):
    timings = {}
    t0 = time.perf_counter()
    prep = preprocess(read_image(entry.image_path), max_dim=config.max_dim)
    timings["preprocess"] = time.perf_counter() - t0
    entry_dir.mkdir(parents=True, exist_ok=True)
    write_image(entry_dir / "prep.png", prep)
    edges = None
    if config.condition == EDGEFLOW:
        t0 = time.perf_counter()
        edges = canny(prep, config.canny)
        timings["canny"] = time.perf_counter() - t0
        write_edge_map(entry_dir / "edge.png", edges)
    return prep, edges, timings


def _run_one(entry: ManifestEntry, run: int, bundle, tag: str, config: RunConfig,
             vlm, fixer, entry_dir: Path, base_timings: Dict[str, float]) -> RunRecord:
    run_dir = entry_dir / f"run{run}"
    run_dir.mkdir(parents=True, exist_ok=True)
    key = FixtureKey(entry.id, tag, run)
    timings = dict(base_timings)
    record = RunRecord(entry.id, tag, run, False, 0, "", None, timings)
    try:
        t0 = time.perf_counter()
        reply = generate(bundle, config.generation, vlm, key=key, log_dir=run_dir)
        timings["generate"] = time.perf_counter() - t0
        (run_dir / "raw.txt").write_text(reply.raw_text, encoding="utf-8")
        t0 = time.perf_counter()
        outcome = repair_loop(extract_code_block(reply.raw_text), fixer, key=key,
                              params=config.generation)
        timings["repair"] = time.perf_counter() - t0
        record.valid = outcome.valid
        record.iterations_used = outcome.iterations_used
        record.final_code = outcome.final_code
        _write_json(run_dir / "repair.json", [
            {"code": code, "ok": d.ok, "messages": [list(m) for m in d.messages]}
            for code, d in outcome.history
        ])
    except Exception as exc:  # one flowchart must never abort the batch
        log.exception("run %s/%s/run%d failed", entry.id, tag, run)
        record.error = f"{type(exc).__name__}: {exc}"
    (run_dir / "final.mmd").write_text(record.final_code, encoding="utf-8")
    _write_json(run_dir / "record.json", record.to_dict())
    return record


def convert(manifest: DatasetManifest, config: RunConfig, tag: Optional[str] = None,
            endpoints=None) -> List[RunRecord]:
    """Run the four-step conversion for every entry and run; returns one record per (entry, run)."""
    tag = tag or config.condition
    vlm, fixer = endpoints or make_endpoints(config)
    cond_dir = config.out / tag
    tasks = []
    records: List[RunRecord] = []
    for entry in manifest.entries:
        entry_dir = cond_dir / entry.id
        try:
            prep, edges, timings = _prepare_entry(entry, config, entry_dir)
            bundle = build_bundle(config.condition, prep, edges)
        except Exception as exc:
            log.exception("preprocessing %s failed", entry.id)
            for run in range(1, config.runs + 1):
                rec = RunRecord(entry.id, tag, run, False, 0, "", f"{type(exc).__name__}: {exc}")
                run_dir = entry_dir / f"run{run}"
                run_dir.mkdir(parents=True, exist_ok=True)
                (run_dir / "final.mmd").write_text("", encoding="utf-8")
                _write_json(run_dir / "record.json", rec.to_dict())
                records.append(rec)
            continue
        for run in range(1, config.runs + 1):
            tasks.append((entry, run, bundle, entry_dir, timings))

    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        futures = [pool.submit(_run_one, e, r, b, tag, config, vlm, fixer, d, t)
                   for e, r, b, d, t in tasks]
        records.extend(f.result() for f in futures)
    order = {eid: i for i, eid in enumerate(manifest.ids())}
    records.sort(key=lambda r: (order[r.flowchart_id], r.run))
    return records


# ---------------------------------------------------------------------------
# evaluate


def _counts_doc(c: MatchCounts) -> dict:
    s = score(c)
    return {"tp": c.tp, "fp": c.fp, "fn": c.fn_, "p": s.precision, "r": s.recall, "f1": s.f1}


def _pooled(counts: Sequence[Dict[str, MatchCounts]]) -> Dict[str, MatchCounts]:
    return {level: sum((c[level] for c in counts), MatchCounts()) for level in LEVELS}


def _card_doc(pooled: Dict[str, MatchCounts], card) -> dict:
    return {level: {"tp": pooled[level].tp, "fp": pooled[level].fp, "fn": pooled[level].fn_,
                    "p": card[level].precision, "r": card[level].recall, "f1": card[level].f1}
            for level in LEVELS}


@dataclass
class Evaluation:
    condition: str
    records: List[dict]
    per_flowchart: Dict[str, dict]
    micro: Dict[str, dict]

    def flowchart_scores(self, level: str, metric: str = "f1") -> Dict[str, float]:
        return {fid: doc[level][metric] for fid, doc in self.per_flowchart.items()}

    def to_json(self) -> dict:
        return {"condition": self.condition, "records": self.records,
                "per_flowchart": self.per_flowchart, "micro": self.micro}


def _prediction_counts(final_code: str, valid: bool, truth) -> Dict[str, MatchCounts]:
    if not valid or not final_code.strip():
        return empty_prediction_counts(truth)
    pred = parse(sanitize(final_code))
    if isinstance(pred, ParseDiagnostics):
        return empty_prediction_counts(truth)
    return compare_asts(pred, truth)


def evaluate(cond_dir: Union[str, Path], manifest: DatasetManifest, runs: Optional[int] = None,
             write: bool = True) -> Evaluation:
    """Score every persisted run under ``cond_dir`` against the manifest ground truth.

    Missing runs (up to ``runs``) count as empty predictions.
    """
    cond_dir = Path(cond_dir)
    records = []
    per_flowchart = {}
    all_counts = []
    csv_rows = []
    for entry in manifest.entries:
        truth = parse_or_raise(sanitize(entry.truth_path.read_text(encoding="utf-8")))
        entry_dir = cond_dir / entry.id
        run_dirs = sorted((p for p in entry_dir.glob("run*") if p.is_dir()),
                          key=lambda p: int(p.name[3:]) if p.name[3:].isdigit() else 0)
        indices = [int(p.name[3:]) for p in run_dirs if p.name[3:].isdigit()]
        if runs is not None:
            indices = list(range(1, runs + 1))
        flow_counts = []
        for k in indices:
            run_dir = entry_dir / f"run{k}"
            code, valid = "", False
            rec_path = run_dir / "record.json"
            if rec_path.is_file():
                valid = bool(json.loads(rec_path.read_text(encoding="utf-8")).get("valid"))
                code = (run_dir / "final.mmd").read_text(encoding="utf-8")
            counts = _prediction_counts(code, valid, truth)
            flow_counts.append(counts)
            all_counts.append(counts)
            records.append({"flowchart_id": entry.id, "run": k, "valid": valid,
                            **{level: _counts_doc(counts[level]) for level in LEVELS}})
        if not flow_counts:
            flow_counts = [empty_prediction_counts(truth)]
            all_counts.append(flow_counts[0])
        pooled = _pooled(flow_counts)
        per_flowchart[entry.id] = _card_doc(pooled, per_flowchart_aggregate(flow_counts))
        csv_rows.extend(counts_to_row(entry.id, cond_dir.name, level, pooled[level]) for level in LEVELS)

    micro_counts = _pooled(all_counts)
    micro = _card_doc(micro_counts, micro_aggregate(all_counts))
    csv_rows.extend(counts_to_row("ALL", cond_dir.name, level, micro_counts[level]) for level in LEVELS)
    ev = Evaluation(cond_dir.name, records, per_flowchart, micro)
    if write:
        _write_json(cond_dir / "results.json", ev.to_json())
        (cond_dir / "summary.csv").write_text(records_to_csv(csv_rows), encoding="utf-8")
    return ev


def load_evaluation(path: Union[str, Path]) -> Evaluation:
    path = Path(path)
    if path.is_dir():
        path = path / "results.json"
    doc = json.loads(path.read_text(encoding="utf-8"))
    return Evaluation(doc["condition"], doc["records"], doc["per_flowchart"], doc["micro"])


# ---------------------------------------------------------------------------
# compare


def compare(ev_a: Evaluation, ev_b: Evaluation, out_dir: Optional[Union[str, Path]] = None,
            paired_delta: bool = False) -> Dict[str, StatsReport]:
    """Per-level paired statistics of condition A (treatment) over B (baseline)."""
    if set(ev_a.per_flowchart) != set(ev_b.per_flowchart):
        raise ValueError("conditions were evaluated on different manifests")
    ids = list(ev_a.per_flowchart)
    reports = {}
    for level in LEVELS:
        a, b = ev_a.flowchart_scores(level), ev_b.flowchart_scores(level)
        sample = PairedSample(tuple(ids), tuple(a[i] for i in ids), tuple(b[i] for i in ids))
        reports[level] = analyze(sample, paired_delta=paired_delta)
    if out_dir is not None:
        out_dir = Path(out_dir)
        _write_json(out_dir / "stats.json", {"a": ev_a.condition, "b": ev_b.condition,
                                             "levels": stats_reports_to_json(reports)})
        title = f"{ev_a.condition} vs {ev_b.condition} (N={len(ids)}, H1: {ev_a.condition} > {ev_b.condition})"
        (out_dir / "stats.txt").write_text(format_table(reports, title), encoding="utf-8")
    return reports


# ---------------------------------------------------------------------------
# sweep


def _rank_key(ev: Evaluation) -> float:
    return ev.micro["node"]["f1"] + ev.micro["edge"]["f1"]


def _best(evaluated: Sequence[Tuple[CannyParams, Evaluation]]) -> Tuple[CannyParams, Evaluation]:
    # max() keeps the first maximal item, so ties go to the earlier config
    return max(evaluated, key=lambda pe: _rank_key(pe[1]))


def sweep(manifest: DatasetManifest, config: RunConfig, plan: Optional[SweepPlan] = None,
          endpoints=None) -> dict:
    """Two-stage Canny search ranked by micro node F1 + edge F1.

    Stage 1 tries the threshold pairs at aperture 3; Stage 2 keeps the
    winner's thresholds and tries larger apertures. Ties go to the config
    evaluated first.
    """
    plan = plan or SweepPlan()
    config = replace(config, condition=EDGEFLOW)
    endpoints = endpoints or make_endpoints(config)

    def run_config(params: CannyParams) -> Evaluation:
        tag = f"{EDGEFLOW}-{params.config_id}"
        cfg = replace(config, canny=params)
        convert(manifest, cfg, tag=tag, endpoints=endpoints)
        return evaluate(cfg.out / tag, manifest, runs=cfg.runs)

    stage1 = [(canny_config(name), None) for name in plan.stage1]
    stage1 = [(p, run_config(p)) for p, _ in stage1]
    winner1, _ = _best(stage1)
    stage2 = [(p, run_config(p)) for p in plan.stage2_configs(winner1)]
    overall, _ = _best(stage1 + stage2)

    rows = []
    for stage, items in ((1, stage1), (2, stage2)):
        for p, ev in items:
            rows.append({
                "stage": stage, "config_id": p.config_id, "low": p.low, "high": p.high,
                "aperture": p.aperture,
                "node": {k: ev.micro["node"][k] for k in ("p", "r", "f1")},
                "edge": {k: ev.micro["edge"][k] for k in ("p", "r", "f1")},
                "path": {k: ev.micro["path"][k] for k in ("p", "r", "f1")},
                "rank_key": _rank_key(ev),
            })
    result = {
        "stage1_winner": winner1.config_id,
        "reference": {**asdict(imaging.derive_reference_config(winner1)), "source": winner1.config_id},
        "winner": overall.config_id,
        "winner_params": [overall.low, overall.high, overall.aperture],
        "configs": rows,
    }
    _write_json(config.out / "sweep.json", result)
    (config.out / "sweep.txt").write_text(format_sweep(result), encoding="utf-8")
    return result


def format_sweep(result: dict) -> str:
    header = (f"{'Config':<8}{'Low':>6}{'High':>6}{'Ap':>4}  {'Node P':>8}{'Node R':>8}{'Node F1':>9}"
              f"  {'Edge P':>8}{'Edge R':>8}{'Edge F1':>9}")
    lines = [header, "-" * len(header)]
    for stage in (1, 2):
        lines.append(f"Stage {stage}")
        for row in (r for r in result["configs"] if r["stage"] == stage):
            mark = " *" if row["config_id"] == result["winner"] else ""
            n, e = row["node"], row["edge"]
            lines.append(
                f"{row['config_id']:<8}{row['low']:>6g}{row['high']:>6g}{row['aperture']:>4}  "
                f"{n['p']:>8.2%}{n['r']:>8.2%}{n['f1']:>9.2%}  {e['p']:>8.2%}{e['r']:>8.2%}{e['f1']:>9.2%}{mark}"
            )
    lines.append(f"Stage 1 winner: {result['stage1_winner']}; overall winner (*): {result['winner']}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# noise diagnostics


def noise_report(manifest: DatasetManifest, out_dir: Optional[Union[str, Path]] = None) -> dict:
    rows = []
    for entry in manifest.entries:
        img = imaging.normalize_alpha(read_image(entry.image_path))
        try:
            rep = imaging.noise_report(img)
            rows.append({"id": entry.id, "sigma": rep.background_noise_sigma,
                         "mu": rep.color_instability_mu})
        except imaging.DiagnosticsError as exc:
            rows.append({"id": entry.id, "sigma": None, "mu": None, "error": str(exc)})
    valid = [r for r in rows if r["sigma"] is not None]
    doc = {
        "entries": rows,
        "mean_sigma": sum(r["sigma"] for r in valid) / len(valid) if valid else None,
        "mean_mu": sum(r["mu"] for r in valid) / len(valid) if valid else None,
    }
    if out_dir is not None:
        _write_json(Path(out_dir) / "noise.json", doc)
    return doc
