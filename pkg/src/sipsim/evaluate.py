"""Comparison of a simulation trace with the real event it models.

Two levels: global propagation (bias / diversity deltas and DTW over the
mean-attitude series) and agent alignment (stance, content type, emotion and
behaviour confusion matrices keyed by (agent_id, step)).
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import EventCorpus
from .domain import STANCE_LABELS, Labels, Taxonomy, attitude_of
from .engine import SimulationTrace, trace_action_kind
from .errors import EmptyInput, EmptySeries, TaxonomyMismatch
from .metrics import (
    AttitudeSeries,
    ConfusionMatrix,
    action_frequency_divergence,
    action_histogram,
    delta_series,
    dtw,
    macro_prf,
)

log = logging.getLogger(__name__)

Key = tuple[str, int]  # (agent_id, step)


@dataclass
class EvalReport:
    propagation: dict | None = None
    alignment: dict | None = None
    questionnaire: dict | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "propagation": self.propagation,
            "alignment": self.alignment,
            "questionnaire": self.questionnaire,
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d.get("propagation"), d.get("alignment"), d.get("questionnaire"), d.get("meta") or {})


# --- step assignment --------------------------------------------------------

def assign_steps(corpus: EventCorpus, steps: int) -> dict[str, int]:
    """Map item ids to steps 0..steps-1.

    Items that carry a step keep it. Otherwise the event's time span is cut
    into ``steps`` equal-width bins (last bin closed).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    items = corpus.items
    if all(it.step is not None for it in items):
        return {it.item_id: it.step for it in items if 0 <= it.step < steps}
    if not items:
        return {}
    lo = min(it.timestamp for it in items)
    hi = max(it.timestamp for it in items)
    span = (hi - lo).total_seconds()
    out = {}
    for it in items:
        if span == 0:
            out[it.item_id] = 0
        else:
            offset = (it.timestamp - lo).total_seconds()
            out[it.item_id] = min(steps - 1, int(offset / span * steps))
    return out


def real_observations(corpus: EventCorpus, steps: int) -> dict[Key, tuple[Labels | None, str]]:
    """Latest item per (author, step): its labels and action kind."""
    step_of = assign_steps(corpus, steps)
    chosen = {}
    for it in sorted(corpus.items, key=lambda it: (it.timestamp, it.item_id)):
        if it.item_id in step_of:
            chosen[(it.author_id, step_of[it.item_id])] = (it.labels, it.kind)
    return chosen


def sim_observations(trace: SimulationTrace) -> dict[Key, tuple[Labels | None, str]]:
    out = {}
    for rec in trace.records:
        labels = Labels.from_dict(rec.labels) if rec.labels else None
        out[(rec.agent_id, rec.step)] = (labels, trace_action_kind(rec))
    return out


def attitudes_by_step(obs: Mapping[Key, tuple[Labels | None, str]], steps: int) -> list[list[int]]:
    per_step: list[list[int]] = [[] for _ in range(steps)]
    for (agent, step), (labels, _) in sorted(obs.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        if labels is not None and 0 <= step < steps:
            per_step[step].append(attitude_of(labels.stance))
    return per_step


# --- checks -----------------------------------------------------------------

def check_taxonomy(obs: Mapping[Key, tuple[Labels | None, str]], taxonomy: Taxonomy, source: str) -> None:
    for key, (labels, _) in obs.items():
        if labels is None:
            continue
        problems = taxonomy.check(labels)
        if problems:
            raise TaxonomyMismatch(f"{source} record {key}: {'; '.join(problems)}")


# --- the evaluation ---------------------------------------------------------

def propagation_section(sim: Sequence[Sequence[int]], real: Sequence[Sequence[int]]) -> dict:
    kept = [t for t in range(len(sim)) if sim[t] and real[t]]
    skipped = [t for t in range(len(sim)) if t not in kept]
    if not kept:
        raise EmptySeries("no step has attitudes on both the simulated and the real side")
    s = AttitudeSeries([sim[t] for t in kept])
    r = AttitudeSeries([real[t] for t in kept])
    deltas = delta_series(s, r)
    section = deltas.to_dict()
    section.update(
        steps=kept,
        skipped_steps=skipped,
        sim_bias=s.bias(),
        real_bias=r.bias(),
        sim_div=s.diversity(),
        real_div=r.diversity(),
        sim_mean_attitude=s.mean_attitude(),
        real_mean_attitude=r.mean_attitude(),
        dtw=dtw(s.mean_attitude(), r.mean_attitude()),
    )
    return section


def alignment_section(
    sim: Mapping[Key, tuple[Labels | None, str]],
    real: Mapping[Key, tuple[Labels | None, str]],
    taxonomy: Taxonomy,
) -> dict:
    dims = {
        "stance": (lambda lab: lab.stance.value, STANCE_LABELS.labels),
        "content": (lambda lab: lab.content_type, taxonomy.content_type.labels),
        "emotion": (lambda lab: lab.emotion, taxonomy.emotion.labels),
    }
    keys = sorted(k for k in sim if k in real and sim[k][0] is not None and real[k][0] is not None)
    out: dict = {"n_aligned": len(keys)}
    for name, (get, labels) in dims.items():
        if not keys:
            out[name] = None
            continue
        cm = ConfusionMatrix.from_pairs(((get(real[k][0]), get(sim[k][0])) for k in keys), labels)
        out[name] = {"confusion": cm.to_dict(), **macro_prf(cm).to_dict()}

    sim_kinds = {k: kind for k, (_, kind) in sim.items()}
    real_kinds = {k: real[k][1] if k in real else "nothing" for k in sorted(sim_kinds)}
    cm = ConfusionMatrix.from_pairs(((real_kinds[k], sim_kinds[k]) for k in sorted(sim_kinds)), ("post", "reply", "retweet", "like", "nothing"))
    out["behavior"] = {"confusion": cm.to_dict(), **macro_prf(cm).to_dict()}
    out["action_frequency"] = {
        "sim": action_histogram(sim_kinds.values()),
        "real": action_histogram(real_kinds.values()),
        "l1": action_frequency_divergence(sim_kinds.values(), real_kinds.values()),
    }
    return out


def evaluate(
    trace: SimulationTrace,
    corpus: EventCorpus,
    *,
    steps: int | None = None,
    taxonomy: Taxonomy | None = None,
) -> EvalReport:
    """Propagation and alignment sections for ``trace`` against ``corpus``.

    Raises EmptyInput for an empty trace and TaxonomyMismatch when labels on
    either side fall outside the taxonomy.
    """
    if not trace.records:
        raise EmptyInput("trace has no records")
    taxonomy = taxonomy or Taxonomy()
    if steps is None:
        steps = max(r.step for r in trace.records) + 1
    sim = sim_observations(trace)
    real = real_observations(corpus, steps)
    check_taxonomy(sim, taxonomy, "trace")
    check_taxonomy(real, taxonomy, "event")
    report = EvalReport(meta={"event_id": corpus.event_id, "steps": steps, "n_trace_records": len(trace.records)})
    report.propagation = propagation_section(attitudes_by_step(sim, steps), attitudes_by_step(real, steps))
    report.alignment = alignment_section(sim, real, taxonomy)
    return report


# --- CSV exports ------------------------------------------------------------

def write_propagation_csv(report: EvalReport, path: str | Path) -> None:
    p = report.propagation or {}
    cols = ("sim_bias", "real_bias", "delta_bias", "sim_div", "real_div", "delta_div", "sim_mean_attitude", "real_mean_attitude")
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step",) + cols)
        for i, step in enumerate(p.get("steps", [])):
            w.writerow([step] + [p[c][i] for c in cols])


def write_alignment_csv(report: EvalReport, path: str | Path) -> None:
    a = report.alignment or {}
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dimension", "class", "precision", "recall", "f1", "support"))
        for dim in ("stance", "content", "emotion", "behavior"):
            sec = a.get(dim)
            if not sec:
                continue
            for cls, s in sec["per_class"].items():
                w.writerow([dim, cls, s["precision"], s["recall"], s["f1"], s["support"]])
            m = sec["macro"]
            w.writerow([dim, "macro", m["precision"], m["recall"], m["f1"], sec["n"]])


def report_rows(run_id: str, report: EvalReport) -> list[dict]:
    """Flat metric rows for the merged comparison CSV."""
    rows = []

    def add(section, metric, value):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            rows.append({"run_id": run_id, "section": section, "metric": metric, "value": value})

    p = report.propagation
    if p:
        add("propagation", "mean_delta_bias", p["mean"]["delta_bias"])
        add("propagation", "mean_delta_div", p["mean"]["delta_div"])
        add("propagation", "final_delta_bias", p["final"]["delta_bias"])
        add("propagation", "final_delta_div", p["final"]["delta_div"])
        add("propagation", "dtw", p["dtw"])
    a = report.alignment
    if a:
        for dim in ("stance", "content", "emotion", "behavior"):
            sec = a.get(dim)
            if sec:
                for k in ("precision", "recall", "f1"):
                    add(f"alignment.{dim}", f"macro_{k}", sec["macro"][k])
                add(f"alignment.{dim}", "accuracy", sec["accuracy"])
        if a.get("action_frequency"):
            add("alignment.behavior", "action_frequency_l1", a["action_frequency"]["l1"])
    q = report.questionnaire
    if q:
        for cohort, stats in q.get("cohorts", {}).items():
            for row in stats["per_item"]:
                for k in ("mean", "std", "skewness", "excess_kurtosis"):
                    add(f"questionnaire.{cohort}", f"{row['item_id']}.{k}", row.get(k))
    return rows
