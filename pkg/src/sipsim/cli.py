"""Command line: ``sipsim simulate | evaluate | sip-test | dataset-stats | report``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 systemic
backend failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .agent import AgentState, BackendAnnotator, NullAnnotator
from .backend import make_backend
from .config import RunConfig, config_from_dict, load_config_data, merge
from .dataset import compute_stats, load_event
from .domain import AgentProfile
from .engine import SimulationTrace, construct_environment, initialize, run
from .errors import ConfigError, DataError, MetricError, SystemicBackendFailure
from .evaluate import EvalReport, evaluate, report_rows, write_alignment_csv, write_propagation_csv
from .memory import SocialMemory
from .prompts import default_templates, template_hashes
from .siptest import (
    administer,
    cohort_stats,
    export_records,
    import_human,
    load_items,
    load_scenarios,
    questionnaire_section,
    write_item_csv,
)

log = logging.getLogger("sipsim")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 2, 3, 4


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def prepare_output(path: str | Path | None, force: bool) -> Path:
    if not path:
        raise ConfigError("no output directory given (--output or output_dir)")
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output {out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_config(args: argparse.Namespace, overrides: dict) -> RunConfig:
    data = load_config_data(args.config) if args.config else {}
    cwd = Path.cwd()
    for key in ("event_path", "output_dir", "backend.script", "questionnaire.human_csv"):
        if overrides.get(key):
            overrides[key] = str((cwd / overrides[key]).resolve())
    return config_from_dict(merge(data, overrides))


def manifest(command: str, config: RunConfig) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
        "template_hashes": template_hashes(default_templates()),
    }


# --- commands ---------------------------------------------------------------

def cmd_simulate(config: RunConfig, force: bool = False) -> int:
    out = prepare_output(config.output_dir, force)
    if not config.event_path:
        raise ConfigError("simulate needs event_path")
    taxonomy = config.taxonomy.build()
    corpus = load_event(config.event_path, taxonomy=taxonomy)
    engine_cfg = config.engine_config()
    backend = make_backend(config.backend)
    annotator = (
        BackendAnnotator(backend, taxonomy, topic=config.topic, model=config.backend.model)
        if config.annotator == "backend"
        else NullAnnotator()
    )
    world = initialize(construct_environment(corpus, engine_cfg), engine_cfg)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    world.dump(ckpt_dir / "step_0000.json")
    _write_json(out / "manifest.json", manifest("simulate", config))

    def on_step(w):
        step = w.clock.step
        if config.checkpoint_every and (step % config.checkpoint_every == 0 or step == config.steps):
            w.dump(ckpt_dir / f"step_{step:04d}.json")

    world, trace = run(world, backend, config.steps, engine_cfg, annotator=annotator, on_step=on_step)
    trace.dump(out / "trace.jsonl")
    world.dump(out / "final_state.json")
    log.info("simulate: %d trace records written to %s", len(trace.records), out)
    return EXIT_OK


def cmd_evaluate(trace_path: str, config: RunConfig, steps: int | None = None, force: bool = False) -> int:
    out = prepare_output(config.output_dir, force)
    if not config.event_path:
        raise ConfigError("evaluate needs an event (--event or event_path)")
    taxonomy = config.taxonomy.build()
    corpus = load_event(config.event_path, taxonomy=taxonomy)
    try:
        trace = SimulationTrace.load(trace_path)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read trace {trace_path}: {exc}") from exc
    report = evaluate(trace, corpus, steps=steps, taxonomy=taxonomy)
    report.meta["trace"] = str(trace_path)
    report.dump(out / "eval_report.json")
    write_propagation_csv(report, out / "propagation.csv")
    write_alignment_csv(report, out / "alignment.csv")
    return EXIT_OK


def _cohort_profiles(config: RunConfig, n: int) -> list[AgentProfile]:
    if config.event_path:
        users = load_event(config.event_path, taxonomy=config.taxonomy.build()).users
        if len(users) < n:
            raise ConfigError(f"event has {len(users)} users, cohort needs {n}")
        return list(users[:n])
    return [AgentProfile(f"r{i:03d}", f"Respondent {i}") for i in range(n)]


def cmd_siptest(config: RunConfig, force: bool = False) -> int:
    out = prepare_output(config.output_dir, force)
    q = config.questionnaire
    items = load_items(q.items_pack)
    scenarios = load_scenarios(q.scenario_pack, items)
    backend = make_backend(config.backend) if (q.baseline_agents or q.sip_agents) else None
    records = []
    for cohort, n in (("AgentBaseline", q.baseline_agents), ("AgentSip", q.sip_agents)):
        if not n:
            continue
        agents = [AgentState(p, SocialMemory(config.memory), p.initial_stance, p.initial_emotion) for p in _cohort_profiles(config, n)]
        records += administer(
            agents, scenarios, items, backend,
            cohort=cohort, seed=config.seed, temperature=q.temperature,
            max_parallel=config.backend.max_parallel, failure_threshold=config.failure_threshold,
            model=config.backend.model,
        )
    if q.human_csv:
        records += import_human(q.human_csv)
    if not records:
        raise ConfigError("sip-test has no cohort to evaluate (cohort sizes 0 and no human_csv)")
    cohorts = {c: cohort_stats(records, c) for c in ("Human", "AgentBaseline", "AgentSip") if any(r.cohort == c for r in records)}
    report = EvalReport(questionnaire=questionnaire_section(cohorts), meta={"items_pack": q.items_pack, "scenario_pack": q.scenario_pack})
    export_records(records, out / "responses.csv")
    with (out / "responses_raw.jsonl").open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    report.dump(out / "eval_report.json")
    write_item_csv(cohorts, out / "items.csv")
    _write_json(out / "manifest.json", manifest("sip-test", config))
    return EXIT_OK


def cmd_dataset_stats(path: str, output: str | None = None, strict: bool = True) -> int:
    stats = compute_stats(load_event(path, strict=strict))
    text = json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n"
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _run_id(path: Path) -> str:
    return path.parent.name if path.name == "eval_report.json" else path.stem


def cmd_report(inputs: Sequence[str], output: str, force: bool = False) -> int:
    """Merge EvalReport files into one CSV; inputs may be ``run_id=path``."""
    out = Path(output)
    if out.exists() and not force:
        raise ConfigError(f"{out} exists (use --force to overwrite)")
    rows = []
    seen = set()
    for entry in inputs:
        run_id, sep, path = entry.partition("=")
        if not sep:
            path = entry
            run_id = _run_id(Path(entry))
        if run_id in seen:
            raise ConfigError(f"duplicate run id {run_id!r}")
        seen.add(run_id)
        try:
            report = EvalReport.load(path)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read report {path}: {exc}") from exc
        rows += report_rows(run_id, report)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("run_id", "section", "metric", "value"), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sipsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, event=True):
        sp.add_argument("--config", help="YAML or JSON run config (a run manifest also works)")
        sp.add_argument("--output", "-o", help="output directory (overrides output_dir)")
        sp.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--script", help="mock backend script (JSON lines)")
        sp.add_argument("--backend", choices=("mock", "http"))
        if event:
            sp.add_argument("--event", help="event file (JSON lines)")

    sp = sub.add_parser("simulate", help="run a simulation and write trace + checkpoints")
    common(sp)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--feed-size", type=int)

    sp = sub.add_parser("evaluate", help="compare a trace with the real event")
    common(sp)
    sp.add_argument("--trace", required=True)
    sp.add_argument("--steps", type=int, help="number of steps (default: taken from the trace)")

    sp = sub.add_parser("sip-test", help="administer the SIP questionnaire")
    common(sp)
    sp.add_argument("--human", help="human responses CSV")
    sp.add_argument("--baseline-agents", type=int)
    sp.add_argument("--sip-agents", type=int)

    sp = sub.add_parser("dataset-stats", help="statistics of an event file")
    sp.add_argument("path")
    sp.add_argument("--output", "-o")
    sp.add_argument("--lenient", action="store_true", help="warn on unknown fields instead of failing")

    sp = sub.add_parser("report", help="merge EvalReport files into one CSV")
    sp.add_argument("inputs", nargs="+", help="eval_report.json paths, optionally run_id=path")
    sp.add_argument("--output", "-o", required=True)
    sp.add_argument("--force", action="store_true")
    return p


def _overrides(args: argparse.Namespace) -> dict:
    o = {
        "output_dir": args.output,
        "seed": args.seed,
        "backend.script": args.script,
        "backend.kind": args.backend,
        "event_path": getattr(args, "event", None),
    }
    if args.command == "simulate":
        o.update({"steps": args.steps, "feed_size": args.feed_size})
    if args.command == "sip-test":
        o.update({
            "questionnaire.human_csv": args.human,
            "questionnaire.baseline_agents": args.baseline_agents,
            "questionnaire.sip_agents": args.sip_agents,
        })
    return o


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "dataset-stats":
            return cmd_dataset_stats(args.path, args.output, strict=not args.lenient)
        if args.command == "report":
            return cmd_report(args.inputs, args.output, args.force)
        config = build_config(args, _overrides(args))
        if args.command == "simulate":
            return cmd_simulate(config, args.force)
        if args.command == "evaluate":
            return cmd_evaluate(args.trace, config, args.steps, args.force)
        return cmd_siptest(config, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MetricError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemicBackendFailure as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
