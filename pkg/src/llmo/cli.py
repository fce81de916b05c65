"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .benchmark import (
    ALL_INSTANCES,
    BenchmarkTable,
    FormatError,
    Instance,
    generate_surrogate,
    load_table,
    save_table,
    table_optimum,
)
from .experiments import (
    CampaignEntry,
    export_convergence_svg,
    export_summary_csv,
    export_traces_csv,
    export_trials_csv,
    read_records,
    run_campaign,
    summarize,
)
from .llm_optimizer import (
    API_KEY_ENV,
    FAULTS,
    PROFILES,
    BackendError,
    LlmoConfig,
    MockBackend,
    RemoteConfig,
    remote_backend,
)
from .metaheuristics import InvalidSpec, spec_from_dict

log = logging.getLogger("llmo")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class BackendSettings:
    kind: str = "mock"
    profile: str = "perturb"
    fault_rates: dict[str, float] = field(default_factory=dict)
    remote: RemoteConfig | None = None


@dataclass
class ExperimentConfig:
    table_path: str | None
    surrogate: tuple[int, float] | None
    instances: list[Instance]
    optimizers: list[CampaignEntry]
    trials: int = 30
    master_seed: int = 0
    out: str = "results"
    transcripts: bool = False
    backend: BackendSettings = field(default_factory=BackendSettings)

    def load_table(self) -> BenchmarkTable:
        if self.table_path is not None:
            return load_table(self.table_path)
        seed, ruggedness = self.surrogate
        return generate_surrogate(seed, ruggedness)


def _get(section, key, conv, default=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"[{section.name}] is missing '{key}'")
        return default
    raw = section[key]
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r} is not valid") from None


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(text)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse an INI experiment file. Relative table paths resolve against
    the config file's directory."""
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    if "table" not in cp:
        raise ConfigError("config needs a [table] section")
    tsec = cp["table"]
    table_path = surrogate = None
    if "path" in tsec:
        table_path = str((path.parent / tsec["path"]).resolve())
    else:
        seed = _get(tsec, "surrogate_seed", int)
        rug = _get(tsec, "ruggedness", float, 0.0)
        if not 0.0 <= rug <= 1.0:
            raise ConfigError("[table] ruggedness must lie in [0, 1]")
        surrogate = (seed, rug)

    csec = cp["campaign"] if "campaign" in cp else cp[cp.default_section]
    inst_text = csec.get("instances", "all").strip()
    try:
        if inst_text.lower() == "all":
            instances = list(ALL_INSTANCES)
        else:
            instances = [Instance.parse(t) for t in inst_text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"[campaign] instances: {exc}") from None
    if not instances:
        raise ConfigError("[campaign] needs at least one instance")
    trials = _get(csec, "trials", int, 30)
    if trials < 1:
        raise ConfigError("[campaign] trials must be >= 1")

    optimizers: list[CampaignEntry] = []
    for name in cp.sections():
        if not name.startswith("optimizer."):
            continue
        kind = name.split(".", 1)[1].strip().lower()
        params = dict(cp[name])
        if kind == "llmo":
            try:
                optimizers.append(LlmoConfig(
                    budget=int(params.pop("budget", 30)),
                    parse_retry_cap=int(params.pop("parse_retry_cap", 3)),
                ))
            except ValueError as exc:
                raise ConfigError(f"[{name}] {exc}") from None
            if params:
                raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(params))}")
        else:
            optimizers.append(spec_from_dict(kind, params))
    if not optimizers:
        raise ConfigError("config needs at least one [optimizer.<name>] section")

    backend = BackendSettings()
    if "backend" in cp:
        bsec = cp["backend"]
        backend.kind = bsec.get("kind", "mock").strip().lower()
        if backend.kind == "mock":
            backend.profile = bsec.get("profile", "perturb").strip().lower()
            if backend.profile not in PROFILES:
                raise ConfigError(f"[backend] unknown mock profile {backend.profile!r}")
            for kind in FAULTS:
                key = f"{kind}_rate"
                if key in bsec:
                    backend.fault_rates[kind] = _get(bsec, key, float)
        elif backend.kind == "remote":
            sampling = {}
            if "backend.sampling" in cp:
                for k, v in cp["backend.sampling"].items():
                    try:
                        sampling[k] = float(v) if any(c in v for c in ".eE") else int(v)
                    except ValueError:
                        sampling[k] = v
            backend.remote = RemoteConfig(
                endpoint=_get(bsec, "endpoint", str),
                model=_get(bsec, "model", str),
                timeout_s=_get(bsec, "timeout_s", float, 30.0),
                max_attempts=_get(bsec, "max_attempts", int, 3),
                max_concurrent=_get(bsec, "max_concurrent", int, 4),
                requests_per_minute=_get(bsec, "requests_per_minute", int, 60),
                sampling=sampling,
            )
        else:
            raise ConfigError(f"[backend] kind must be 'mock' or 'remote', not {backend.kind!r}")

    return ExperimentConfig(
        table_path=table_path,
        surrogate=surrogate,
        instances=instances,
        optimizers=optimizers,
        trials=trials,
        master_seed=_get(csec, "master_seed", int, 0),
        out=csec.get("out", "results"),
        transcripts=_get(csec, "transcripts", _parse_bool, False),
        backend=backend,
    )


def make_backend_factory(settings: BackendSettings):
    if settings.kind == "mock":
        return lambda seed: MockBackend(seed=seed, profile=settings.profile, fault_rates=dict(settings.fault_rates))
    shared = remote_backend(settings.remote)
    return lambda seed: shared


# ---------------------------------------------------------------------------
# subcommands


def cmd_surrogate(args) -> int:
    table = generate_surrogate(args.seed, args.ruggedness)
    save_table(table, args.output)
    print(f"wrote surrogate table (seed={args.seed}, ruggedness={args.ruggedness}) to {args.output}")
    return EXIT_OK


def cmd_optimum(args) -> int:
    table = load_table(args.table)
    print("dataset,attack,accuracy,genotype")
    for inst in ALL_INSTANCES:
        g, acc = table_optimum(table, inst.dataset, inst.attack)
        print(f"{inst.dataset.value},{inst.attack.value},{acc!r},{g}")
    return EXIT_OK


def _write_reports(records, out: Path, write_records: bool) -> list:
    out.mkdir(parents=True, exist_ok=True)
    summaries = summarize(records)
    if write_records:
        export_traces_csv(records, out / "traces.csv")
        export_trials_csv(records, out / "trials.csv")
    export_summary_csv(summaries, out / "summary.csv")
    export_convergence_svg(summaries, out / "convergence.svg")
    return summaries


def _print_summaries(summaries) -> None:
    print(f"{'optimizer':<11}{'instance':<17}{'trials':>7}{'budget':>8}{'mean':>10}{'std':>9}{'max':>10}")
    for s in summaries:
        flag = f"  ({s.incomplete} incomplete)" if s.incomplete else ""
        print(f"{s.optimizer:<11}{str(s.instance):<17}{s.trials:>7}{s.budget:>8}{s.mean:>10.4f}{s.std:>9.4f}{s.max:>10.4f}{flag}")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    out = Path(args.out if args.out is not None else cfg.out)
    table = cfg.load_table()
    has_llmo = any(isinstance(e, LlmoConfig) for e in cfg.optimizers)
    factory = make_backend_factory(cfg.backend) if has_llmo else None
    records = run_campaign(
        cfg.optimizers,
        cfg.instances,
        cfg.trials,
        cfg.master_seed,
        table,
        backend_factory=factory,
        jobs=args.jobs,
        transcript_dir=out / "transcripts" if cfg.transcripts and has_llmo else None,
    )
    summaries = _write_reports(records, out, write_records=True)
    _print_summaries(summaries)
    print(f"results written to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.records_dir)
    traces = src / "traces.csv"
    if not traces.exists():
        raise ConfigError(f"{traces} does not exist")
    trials = src / "trials.csv"
    records = read_records(traces, trials if trials.exists() else None)
    out = Path(args.out) if args.out is not None else src
    summaries = _write_reports(records, out, write_records=False)
    _print_summaries(summaries)
    return EXIT_OK


def _ruggedness(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"ruggedness must lie in [0, 1], got {v}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    def add_globals(p, suppress):
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--jobs", type=_positive_int, default=d(os.cpu_count() or 1),
                       help="trial worker threads (default: available CPUs); 1 runs serially")
        p.add_argument("--seed", type=int, default=d(None),
                       help="master seed for run, table seed for surrogate (default: from config, or 0)")
        p.add_argument("--out", default=d(None), help="output directory (default: from config)")
        p.add_argument("-v", "--verbose", action="store_true", default=d(False), help="debug logging")

    parser = argparse.ArgumentParser(
        prog="llmo",
        description="LLM-assisted and metaheuristic architecture search over a tabular robustness benchmark.",
        epilog=f"Remote LLM backends read their API key from ${API_KEY_ENV}.",
    )
    add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("surrogate", help="write a seeded synthetic benchmark CSV")
    add_globals(p, suppress=True)
    p.add_argument("--ruggedness", type=_ruggedness, default=0.2, help="interaction strength in [0, 1] (default 0.2)")
    p.add_argument("-o", "--output", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_surrogate)

    p = sub.add_parser("optimum", help="print the exhaustive optimum of every instance")
    add_globals(p, suppress=True)
    p.add_argument("table", help="benchmark CSV")
    p.set_defaults(func=cmd_optimum)

    p = sub.add_parser("run", help="run a campaign from an INI config and export reports")
    add_globals(p, suppress=True)
    p.add_argument("config", help="experiment config file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="rebuild summary.csv and convergence.svg from exported traces")
    add_globals(p, suppress=True)
    p.add_argument("records_dir", help="directory holding traces.csv (and trials.csv)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "surrogate" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (ConfigError, InvalidSpec, FormatError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
