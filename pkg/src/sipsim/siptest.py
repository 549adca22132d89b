"""SIP testing: scenario packs, the 13-item questionnaire, administration over
agent cohorts, human response import, and cohort statistics."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .agent import AgentState, answer_questionnaire, request_seed
from .backend import ChatBackend, ChatMessage, ChatRequest
from .errors import (
    BackendError,
    DuplicateResponse,
    InvalidResponse,
    ItemSetMismatch,
    SchemaError,
    SystemicBackendFailure,
    TooFewRespondents,
)
from .metrics import ITEM_IDS, STAGE_ITEMS, DistributionStats, correlation_matrix, distribution_stats, stage_vector
from .prompts import ContextBundle, PromptTemplate, default_templates, render

log = logging.getLogger(__name__)

PHASES = (
    "EncodingOfCues",
    "InterpretationOfCues",
    "ClassificationOfGoals",
    "ResponseAccess",
    "ResponseEvaluation",
)
COHORTS = ("Human", "AgentBaseline", "AgentSip")
SCENARIO_PACKS = ("MainText", "AppendixVignettes")
ITEM_PACKS = ("v-main", "v-appendix")
HUMAN_CSV_HEADER = ("respondent_id", "cohort", "scenario_id", "item_id", "rating")


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    title: str
    story: str
    situation_text: str
    person_label: str
    pack: str

    def __post_init__(self):
        if not self.situation_text:
            raise ValueError(f"scenario {self.scenario_id}: situation_text is empty")


@dataclass(frozen=True)
class QuestionnaireItem:
    item_id: str
    phase: str
    question_type: str
    prompt: str
    anchors: tuple[str, str]

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(self.anchors))
        if self.phase not in PHASES:
            raise ValueError(f"{self.item_id}: unknown phase {self.phase!r}")
        if len(self.anchors) != 2:
            raise ValueError(f"{self.item_id}: anchors must be a (low, high) pair")

    @property
    def uses_person(self) -> bool:
        return "{PERSON}" in self.prompt


def validate_items(items: Sequence[QuestionnaireItem]) -> None:
    ids = [it.item_id for it in items]
    if tuple(ids) != ITEM_IDS:
        raise SchemaError(f"questionnaire must list Q1..Q13 in order, got {ids}")
    for stage_phase, stage in zip(PHASES, STAGE_ITEMS):
        got = {it.item_id for it in items if it.phase == stage_phase}
        if got != set(stage):
            raise SchemaError(f"phase {stage_phase} should hold {list(stage)}, holds {sorted(got)}")


def _read_pack(name_or_path: str, prefix: str) -> dict:
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text(encoding="utf-8")
    else:
        ref = resources.files("sipsim") / "data" / "questionnaire" / f"{prefix}_{name_or_path}.json"
        if not ref.is_file():
            raise SchemaError(f"no questionnaire pack {name_or_path!r}")
        text = ref.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"pack {name_or_path!r} is not valid JSON: {exc.msg}", exc.lineno) from exc


def load_items(pack: str = "v-main") -> list[QuestionnaireItem]:
    """Questionnaire items from a bundled pack name or a JSON file path."""
    data = _read_pack(pack, "items")
    try:
        items = [QuestionnaireItem(**rec) for rec in data["items"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad item record in pack {pack!r}: {exc}") from exc
    validate_items(items)
    return items


def load_scenarios(pack: str = "MainText", items: Sequence[QuestionnaireItem] = ()) -> list[Scenario]:
    data = _read_pack(pack, "scenarios")
    name = data.get("pack", pack)
    try:
        scenarios = [Scenario(pack=name, **rec) for rec in data["scenarios"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad scenario record in pack {pack!r}: {exc}") from exc
    if any(it.uses_person for it in items):
        for s in scenarios:
            if not s.person_label:
                raise SchemaError(f"scenario {s.scenario_id} has no person_label but items use {{PERSON}}")
    return scenarios


# --- responses --------------------------------------------------------------

@dataclass(frozen=True)
class ResponseRecord:
    respondent_id: str
    cohort: str
    scenario_id: str
    item_id: str
    rating: int | None
    raw_text: str | None = None
    error: str | None = None

    def __post_init__(self):
        if self.cohort not in COHORTS:
            raise ValueError(f"unknown cohort {self.cohort!r}")
        if self.rating is not None and not 1 <= self.rating <= 5:
            raise ValueError(f"rating {self.rating} outside 1..5")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.respondent_id, self.scenario_id, self.item_id)

    def to_dict(self) -> dict:
        return {
            "respondent_id": self.respondent_id,
            "cohort": self.cohort,
            "scenario_id": self.scenario_id,
            "item_id": self.item_id,
            "rating": self.rating,
            "raw_text": self.raw_text,
            "error": self.error,
        }


def check_unique(records: Iterable[ResponseRecord]) -> None:
    seen = set()
    for r in records:
        if r.key in seen:
            raise DuplicateResponse(f"duplicate response {r.key}")
        seen.add(r.key)


def sip_context(
    state: AgentState,
    scenario: Scenario,
    backend: ChatBackend,
    *,
    step: int,
    seed: int = 0,
    temperature: float = 0.0,
    template: PromptTemplate | None = None,
    model: str = "",
) -> tuple[ChatMessage, ChatMessage]:
    """One SIP analysis of the scenario story, returned as a prompt/answer pair."""
    template = template or default_templates()["SipAnalysis"]
    prompt = render(
        template,
        ContextBundle(
            agent_name=state.name,
            current_time="(not applicable)",
            role_description=state.role_description(),
            trigger_news=scenario.story,
            personal_history="(none)",
            chat_history="(none)",
            reddit_feed="(empty)",
            info_box="(none)",
        ),
    )
    req = ChatRequest(
        (ChatMessage("user", prompt),),
        temperature=temperature,
        seed=request_seed(seed, state.agent_id, step, template.template_id),
        model=model,
        agent_id=state.agent_id,
        step=step,
        template_id=template.template_id,
    )
    return ChatMessage("user", prompt), ChatMessage("assistant", backend.complete(req))


def administer(
    agents: Sequence[AgentState],
    scenarios: Sequence[Scenario],
    items: Sequence[QuestionnaireItem],
    backend: ChatBackend,
    *,
    cohort: str = "AgentBaseline",
    use_sip: bool | None = None,
    seed: int = 0,
    temperature: float = 0.0,
    max_parallel: int = 1,
    failure_threshold: float = 0.5,
    model: str = "",
) -> list[ResponseRecord]:
    """Ask every agent every item for every scenario (scenarios outer, Q1..Q13 inner).

    The backend sees ``step`` = scenario index and template id ``Questionnaire:Qn``.
    Unreadable answers become missing ratings with the raw text kept.
    """
    if not agents or not scenarios or not items:
        raise ValueError("administer needs agents, scenarios and items")
    if cohort not in COHORTS:
        raise ValueError(f"unknown cohort {cohort!r}")
    if use_sip is None:
        use_sip = cohort == "AgentSip"
    pairs = [(a, si, s) for a in agents for si, s in enumerate(scenarios)]

    def run_pair(pair) -> tuple[list[ResponseRecord], int]:
        state, step, scenario = pair
        failures = 0
        out = []
        context: tuple[ChatMessage, ...] = ()
        if use_sip:
            try:
                context = sip_context(state, scenario, backend, step=step, seed=seed, temperature=temperature, model=model)
            except BackendError as exc:
                log.warning("SIP context failed for %s / %s: %s", state.agent_id, scenario.scenario_id, exc)
        for item in items:
            rating = raw = err = None
            try:
                rating = answer_questionnaire(
                    state, scenario, item, backend,
                    step=step, temperature=temperature, seed=seed, context=context, model=model,
                )
            except InvalidResponse as exc:
                raw, err = exc.raw, f"{type(exc.cause).__name__}: {exc.cause}"
            except BackendError as exc:
                failures += 1
                err = f"backend_failure: {type(exc).__name__}: {exc}"
            out.append(ResponseRecord(state.agent_id, cohort, scenario.scenario_id, item.item_id, rating, raw, err))
        return out, failures

    if max_parallel > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            results = list(pool.map(run_pair, pairs))
    else:
        results = [run_pair(p) for p in pairs]

    records = [r for recs, _ in results for r in recs]
    failures = sum(f for _, f in results)
    if records and failures / len(records) > failure_threshold:
        raise SystemicBackendFailure(f"{failures}/{len(records)} questionnaire calls failed")
    return records


def import_human(path: str | Path) -> list[ResponseRecord]:
    """Read the response CSV (header ``respondent_id,cohort,scenario_id,item_id,rating``)."""
    records = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HUMAN_CSV_HEADER:
            raise SchemaError(f"expected header {','.join(HUMAN_CSV_HEADER)}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HUMAN_CSV_HEADER):
                raise SchemaError(f"expected {len(HUMAN_CSV_HEADER)} columns, got {len(row)}", line)
            rid, cohort, sid, iid, rating = (c.strip() for c in row)
            if cohort not in COHORTS:
                raise SchemaError(f"unknown cohort {cohort!r}", line)
            if iid not in ITEM_IDS:
                raise SchemaError(f"unknown item {iid!r}", line)
            if not rid or not sid:
                raise SchemaError("respondent_id and scenario_id must be non-empty", line)
            if rating == "":
                value = None
            else:
                try:
                    value = int(rating)
                except ValueError:
                    raise SchemaError(f"rating {rating!r} is not an integer", line) from None
                if not 1 <= value <= 5:
                    raise SchemaError(f"rating {value} outside 1..5", line)
            records.append(ResponseRecord(rid, cohort, sid, iid, value))
    check_unique(records)
    return records


def export_records(records: Iterable[ResponseRecord], path: str | Path) -> None:
    """Write records in the import CSV format (missing ratings left blank)."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HUMAN_CSV_HEADER)
        for r in records:
            w.writerow([r.respondent_id, r.cohort, r.scenario_id, r.item_id, "" if r.rating is None else r.rating])


# --- statistics -------------------------------------------------------------

@dataclass
class CohortStats:
    cohort: str | None
    per_item: dict[str, DistributionStats | None]
    n_respondents: int
    n_complete: int
    matrix13: list | None = None
    matrix5: list | None = None
    matrix_error: str | None = None
    missing: int = 0

    def to_dict(self) -> dict:
        return {
            "cohort": self.cohort,
            "n_respondents": self.n_respondents,
            "n_complete": self.n_complete,
            "missing": self.missing,
            "per_item": [
                {"item_id": iid, **(s.to_dict() if s else {"n": 0})} for iid, s in self.per_item.items()
            ],
            "matrix13": self.matrix13,
            "matrix5": self.matrix5,
            "matrix_error": self.matrix_error,
        }


def respondent_vectors(records: Sequence[ResponseRecord]) -> dict[str, list[float]]:
    """Per-respondent item means across scenarios, for respondents with no missing ratings."""
    by_resp: dict[str, list[ResponseRecord]] = {}
    for r in records:
        by_resp.setdefault(r.respondent_id, []).append(r)
    out = {}
    for rid in sorted(by_resp):
        recs = by_resp[rid]
        if any(r.rating is None for r in recs):
            continue
        per_item: dict[str, list[int]] = {}
        for r in recs:
            per_item.setdefault(r.item_id, []).append(r.rating)
        if set(per_item) != set(ITEM_IDS):
            continue
        out[rid] = [sum(per_item[q]) / len(per_item[q]) for q in ITEM_IDS]
    return out


def cohort_stats(records: Sequence[ResponseRecord], cohort: str | None = None) -> CohortStats:
    """Pooled per-item stats plus 13x13 and stage-level 5x5 correlation matrices.

    Too few complete respondents is recorded in ``matrix_error``; per-item
    stats are still filled in.
    """
    if cohort is not None:
        records = [r for r in records if r.cohort == cohort]
    per_item = {}
    for q in ITEM_IDS:
        ratings = [r.rating for r in records if r.item_id == q and r.rating is not None]
        per_item[q] = distribution_stats(ratings) if ratings else None
    vectors = respondent_vectors(records)
    stats = CohortStats(
        cohort,
        per_item,
        n_respondents=len({r.respondent_id for r in records}),
        n_complete=len(vectors),
        missing=sum(1 for r in records if r.rating is None),
    )
    try:
        vecs = list(vectors.values())
        stats.matrix13 = correlation_matrix(vecs)
        stats.matrix5 = correlation_matrix([stage_vector(v) for v in vecs])
    except TooFewRespondents as exc:
        stats.matrix_error = f"TooFewRespondents: {exc}"
    return stats


STATS_COMPARED = ("mean", "std", "skewness", "excess_kurtosis")


def _gap(a: float | None, b: float | None) -> float | None:
    return None if a is None or b is None else abs(a - b)


def _stat(s: DistributionStats | None, name: str) -> float | None:
    return None if s is None else getattr(s, name)


def compare_cohorts(a: CohortStats, b: CohortStats) -> dict[str, dict[str, float | None]]:
    """Absolute per-item gaps in mean / std / skewness / excess kurtosis."""
    if set(a.per_item) != set(b.per_item):
        raise ItemSetMismatch("cohorts cover different items")
    return {
        q: {f"{name}_gap": _gap(_stat(a.per_item[q], name), _stat(b.per_item[q], name)) for name in STATS_COMPARED}
        for q in a.per_item
    }


@dataclass(frozen=True)
class Improvement:
    percent: float | None
    undefined: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {"percent": self.percent, "undefined": self.undefined, "reason": self.reason}


def improvement_ratio(baseline: float | None, candidate: float | None, human: float | None) -> Improvement:
    """Share of the baseline's distance to humans that the candidate closes, in percent."""
    if baseline is None or candidate is None or human is None:
        return Improvement(None, True, "missing statistic")
    base_gap = abs(baseline - human)
    if base_gap == 0:
        return Improvement(None, True, "baseline equals human")
    return Improvement(100.0 * (base_gap - abs(candidate - human)) / base_gap, False)


def improvements(
    baseline: CohortStats, candidate: CohortStats, human: CohortStats, stat: str = "mean"
) -> dict[str, Improvement]:
    if not set(baseline.per_item) == set(candidate.per_item) == set(human.per_item):
        raise ItemSetMismatch("cohorts cover different items")
    return {
        q: improvement_ratio(_stat(baseline.per_item[q], stat), _stat(candidate.per_item[q], stat), _stat(human.per_item[q], stat))
        for q in baseline.per_item
    }


def questionnaire_section(cohorts: Mapping[str, CohortStats]) -> dict:
    """The questionnaire part of an EvalReport."""
    section: dict = {"cohorts": {name: s.to_dict() for name, s in cohorts.items()}}
    names = list(cohorts)
    section["comparison"] = {
        f"{x}_vs_{y}": compare_cohorts(cohorts[x], cohorts[y]) for i, x in enumerate(names) for y in names[i + 1:]
    }
    if all(k in cohorts for k in COHORTS):
        section["improvement"] = {
            stat: {q: imp.to_dict() for q, imp in improvements(
                cohorts["AgentBaseline"], cohorts["AgentSip"], cohorts["Human"], stat).items()}
            for stat in STATS_COMPARED
        }
    return section


def write_item_csv(cohorts: Mapping[str, CohortStats], path: str | Path) -> None:
    cols = ("n", "mean", "std", "skewness", "excess_kurtosis", "kurtosis", "degenerate")
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cohort", "item_id") + cols)
        for name, s in cohorts.items():
            for q, st in s.per_item.items():
                d = st.to_dict() if st else {"n": 0}
                w.writerow([name, q] + ["" if d.get(c) is None else d.get(c) for c in cols])
