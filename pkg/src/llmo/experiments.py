"""Multi-trial campaigns, aggregate statistics and report files."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .benchmark import AttackKind, BenchmarkTable, DatasetKind, Instance
from .llm_optimizer import (
    DEFAULT_TEMPLATE,
    LlmBackend,
    LlmoConfig,
    PromptTemplate,
    llmo_run,
)
from .metaheuristics import OptimizerSpec, run_optimizer
from .records import TrialRecord
from .search_space import format_genotype, parse_genotype

__all__ = [
    "TrialRecord",
    "RunSummary",
    "EmptyCell",
    "derive_seed",
    "run_campaign",
    "summarize",
    "export_summary_csv",
    "export_traces_csv",
    "export_trials_csv",
    "export_convergence_svg",
    "read_records",
]

CampaignEntry = Union[OptimizerSpec, LlmoConfig]


class EmptyCell(ValueError):
    pass


def entry_name(entry: CampaignEntry) -> str:
    return "llmo" if isinstance(entry, LlmoConfig) else entry.name


def derive_seed(master_seed: int, optimizer: str, instance: Instance, trial: int) -> int:
    key = f"{master_seed}|{optimizer}|{instance}|{trial}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def run_campaign(
    optimizers: Sequence[CampaignEntry],
    instances: Sequence[Instance],
    trials: int,
    master_seed: int,
    table: BenchmarkTable,
    backend_factory: Callable[[int], LlmBackend] | None = None,
    jobs: int = 1,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    transcript_dir: str | Path | None = None,
) -> list[TrialRecord]:
    """Run every (optimizer, instance, trial) combination.

    ``backend_factory(seed)`` supplies the LLM backend for each LLMO trial;
    it may hand out one shared (thread-safe) remote backend or a fresh mock
    per trial. Records come back sorted by (optimizer, instance, trial)
    regardless of ``jobs``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    names = [entry_name(e) for e in optimizers]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate optimizer names in {names}")
    if any(isinstance(e, LlmoConfig) for e in optimizers) and backend_factory is None:
        raise ValueError("LLMO needs a backend_factory")

    tasks = [(o, e, inst, t) for o, e in enumerate(optimizers) for inst in instances for t in range(trials)]

    def run(task):
        _, entry, inst, t = task
        seed = derive_seed(master_seed, entry_name(entry), inst, t)
        if isinstance(entry, LlmoConfig):
            backend = backend_factory(derive_seed(seed, "backend", inst, t))
            cfg = dataclasses.replace(entry, seed=seed)
            if transcript_dir is None:
                return llmo_run(cfg, template, table, inst, backend, trial=t)
            path = Path(transcript_dir) / f"llmo_{inst.dataset.value}_{inst.attack.value}_{t}.jsonl"
            with open(path, "w") as fh:
                return llmo_run(cfg, template, table, inst, backend, trial=t, transcript=fh)
        return run_optimizer(entry, seed, table, inst, trial=t)

    if transcript_dir is not None:
        Path(transcript_dir).mkdir(parents=True, exist_ok=True)
    if jobs <= 1:
        records = [run(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run, tasks))
    order = {name: i for i, name in enumerate(names)}
    return sorted(records, key=lambda r: (order[r.optimizer], r.instance, r.trial))


@dataclass(frozen=True)
class RunSummary:
    optimizer: str
    instance: Instance
    trials: int
    budget: int
    mean: float
    std: float
    min: float
    max: float
    mean_trace: tuple[float, ...]
    best_genotype: object
    incomplete: int = 0


def padded_traces(records: Sequence[TrialRecord]) -> np.ndarray:
    """Stack traces, extending shorter ones with their last value."""
    length = max(len(r.trace) for r in records)
    out = np.empty((len(records), length))
    for i, r in enumerate(records):
        tr = np.asarray(r.trace, dtype=float)
        out[i, : len(tr)] = tr
        out[i, len(tr) :] = tr[-1] if len(tr) else np.nan
    return out


def summarize(records: Iterable[TrialRecord]) -> list[RunSummary]:
    cells: OrderedDict[tuple[str, Instance], list[TrialRecord]] = OrderedDict()
    for r in records:
        cells.setdefault((r.optimizer, r.instance), []).append(r)
    if not cells:
        raise EmptyCell("no records to summarize")
    out = []
    for (name, inst), recs in cells.items():
        budgets = {r.budget for r in recs}
        if len(budgets) != 1:
            raise ValueError(f"{name} on {inst}: records mix budgets {sorted(budgets)}")
        finals = np.array([r.final_accuracy for r in recs], dtype=float)
        best = max(recs, key=lambda r: (r.final_accuracy, -r.trial))
        out.append(
            RunSummary(
                optimizer=name,
                instance=inst,
                trials=len(recs),
                budget=budgets.pop(),
                mean=float(np.mean(finals)),
                std=float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0,
                min=float(np.min(finals)),
                max=float(np.max(finals)),
                mean_trace=tuple(float(v) for v in padded_traces(recs).mean(axis=0)),
                best_genotype=best.final_genotype,
                incomplete=sum(not r.complete for r in recs),
            )
        )
    return out


# ---------------------------------------------------------------------------
# CSV export / import

SUMMARY_COLUMNS = ("optimizer", "dataset", "attack", "trials", "budget", "mean", "std", "min", "max", "best_genotype")
TRACE_COLUMNS = ("optimizer", "dataset", "attack", "trial", "fe", "best_accuracy")
TRIAL_COLUMNS = (
    "optimizer", "dataset", "attack", "trial", "seed", "budget", "fes", "complete", "final_accuracy", "final_genotype",
)


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def export_summary_csv(summaries: Sequence[RunSummary], path: str | Path) -> None:
    if not summaries:
        raise EmptyCell("nothing to export")
    fh, w = _writer(path)
    with fh:
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow([
                s.optimizer, s.instance.dataset.value, s.instance.attack.value, s.trials, s.budget,
                f"{s.mean:.6f}", f"{s.std:.6f}", f"{s.min:.6f}", f"{s.max:.6f}",
                format_genotype(s.best_genotype) if s.best_genotype is not None else "",
            ])


def export_traces_csv(records: Sequence[TrialRecord], path: str | Path) -> None:
    if not records:
        raise EmptyCell("nothing to export")
    fh, w = _writer(path)
    with fh:
        w.writerow(TRACE_COLUMNS)
        for r in records:
            ds, at = r.instance.dataset.value, r.instance.attack.value
            for fe, v in enumerate(r.trace, start=1):
                w.writerow([r.optimizer, ds, at, r.trial, fe, repr(float(v))])


def export_trials_csv(records: Sequence[TrialRecord], path: str | Path) -> None:
    """Per-trial metadata that the traces file does not carry."""
    if not records:
        raise EmptyCell("nothing to export")
    fh, w = _writer(path)
    with fh:
        w.writerow(TRIAL_COLUMNS)
        for r in records:
            w.writerow([
                r.optimizer, r.instance.dataset.value, r.instance.attack.value, r.trial, r.seed, r.budget,
                len(r.trace), int(r.complete), repr(float(r.final_accuracy)),
                format_genotype(r.final_genotype) if r.final_genotype is not None else "",
            ])


def read_traces_csv(path: str | Path) -> dict[tuple[str, Instance, int], tuple[float, ...]]:
    traces: dict[tuple[str, Instance, int], list[float]] = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(TRACE_COLUMNS)}")
        for row in reader:
            key = (row["optimizer"], Instance(DatasetKind(row["dataset"]), AttackKind(row["attack"])), int(row["trial"]))
            tr = traces.setdefault(key, [])
            if int(row["fe"]) != len(tr) + 1:
                raise ValueError(f"{path}: trace {key} is not in FE order")
            tr.append(float(row["best_accuracy"]))
    return {k: tuple(v) for k, v in traces.items()}


def read_records(traces_path: str | Path, trials_path: str | Path | None = None) -> list[TrialRecord]:
    """Rebuild trial records from exported CSVs.

    Without the trials file, seeds are unknown (0), the budget is taken as
    the trace length and the final genotype is unknown.
    """
    traces = read_traces_csv(traces_path)
    meta = {}
    if trials_path is not None:
        with open(trials_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != TRIAL_COLUMNS:
                raise ValueError(f"{trials_path}: expected columns {','.join(TRIAL_COLUMNS)}")
            for row in reader:
                key = (row["optimizer"], Instance(DatasetKind(row["dataset"]), AttackKind(row["attack"])), int(row["trial"]))
                meta[key] = row
    records = []
    for key, trace in traces.items():
        name, inst, trial = key
        row = meta.get(key)
        if row is not None:
            genotype = parse_genotype(row["final_genotype"]) if row["final_genotype"] else None
            records.append(TrialRecord(
                optimizer=name, instance=inst, trial=trial, seed=int(row["seed"]), budget=int(row["budget"]),
                trace=trace, final_genotype=genotype, final_accuracy=float(row["final_accuracy"]),
                complete=row["complete"] == "1",
            ))
        else:
            records.append(TrialRecord(
                optimizer=name, instance=inst, trial=trial, seed=0, budget=len(trace), trace=trace,
                final_genotype=None, final_accuracy=trace[-1] if trace else math.nan,
            ))
    return records


# ---------------------------------------------------------------------------
# convergence plot

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22")
_PANEL_W, _PANEL_H = 300, 220
_COLS = 5
_MARGIN = dict(left=48, right=12, top=28, bottom=34)
_LEGEND_H = 36
_MAX_POINTS = 160


def _sample_points(n: int) -> list[int]:
    """FE indices (1-based) roughly evenly spaced on a log axis."""
    if n <= _MAX_POINTS:
        return list(range(1, n + 1))
    pts = np.unique(np.round(np.logspace(0, math.log10(n), _MAX_POINTS)).astype(int))
    return [int(p) for p in pts]


def export_convergence_svg(summaries: Sequence[RunSummary], path: str | Path) -> None:
    """One panel per instance, one mean-trace polyline per optimizer,
    log-scaled FE axis. Output depends only on the summaries."""
    if not summaries:
        raise EmptyCell("nothing to plot")
    instances = list(OrderedDict.fromkeys(s.instance for s in summaries))
    names = list(OrderedDict.fromkeys(s.optimizer for s in summaries))
    color = {n: _PALETTE[i % len(_PALETTE)] for i, n in enumerate(names)}
    rows = math.ceil(len(instances) / _COLS)
    width = _PANEL_W * min(_COLS, len(instances))
    height = _PANEL_H * rows + _LEGEND_H
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" '
        'font-family="sans-serif" font-size="10">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for k, inst in enumerate(instances):
        cell = [s for s in summaries if s.instance == inst]
        ox, oy = (k % _COLS) * _PANEL_W, (k // _COLS) * _PANEL_H
        x0, x1 = ox + _MARGIN["left"], ox + _PANEL_W - _MARGIN["right"]
        y0, y1 = oy + _PANEL_H - _MARGIN["bottom"], oy + _MARGIN["top"]
        n_max = max(len(s.mean_trace) for s in cell)
        lo = min(min(s.mean_trace) for s in cell)
        hi = max(max(s.mean_trace) for s in cell)
        if hi - lo < 1e-9:
            lo, hi = lo - 0.5, hi + 0.5
        span_x = math.log10(n_max) if n_max > 1 else 1.0

        def px(fe):
            return x0 + (x1 - x0) * (math.log10(fe) / span_x)

        def py(v):
            return y0 - (y0 - y1) * ((v - lo) / (hi - lo))

        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{oy + 16}" text-anchor="middle" font-size="12">{inst}</text>')
        out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="#444"/>')
        out.append(f'<text x="{x0 - 4}" y="{y0:.1f}" text-anchor="end">{lo:.2f}</text>')
        out.append(f'<text x="{x0 - 4}" y="{y1 + 8:.1f}" text-anchor="end">{hi:.2f}</text>')
        out.append(f'<text x="{x0}" y="{y0 + 14}" text-anchor="middle">1</text>')
        out.append(f'<text x="{x1}" y="{y0 + 14}" text-anchor="middle">{n_max}</text>')
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{y0 + 26}" text-anchor="middle">FE (log)</text>')
        for s in cell:
            pts = " ".join(f"{px(fe):.2f},{py(s.mean_trace[fe - 1]):.2f}" for fe in _sample_points(len(s.mean_trace)))
            out.append(f'<polyline fill="none" stroke="{color[s.optimizer]}" stroke-width="1.5" points="{pts}"/>')
    ly = _PANEL_H * rows + 22
    for i, n in enumerate(names):
        lx = 20 + i * 110
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" y2="{ly - 4}" stroke="{color[n]}" stroke-width="3"/>')
        out.append(f'<text x="{lx + 30}" y="{ly}">{n}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
