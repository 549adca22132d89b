"""Run configuration: YAML or JSON file, flag overrides, strict key checking."""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Any, Mapping

import yaml

from .agent import AgentConfig
from .backend import BackendConfig
from .domain import DEFAULT_CONTENT_TYPES, DEFAULT_EMOTIONS, Taxonomy, content_type_labels, emotion_labels
from .engine import EngineConfig
from .errors import ConfigError
from .memory import MemoryConfig

ANNOTATORS = ("backend", "none")


@dataclass(frozen=True)
class TaxonomyConfig:
    content_types: tuple[str, ...] = DEFAULT_CONTENT_TYPES
    emotions: tuple[str, ...] = DEFAULT_EMOTIONS

    def build(self) -> Taxonomy:
        try:
            return Taxonomy(content_type_labels(self.content_types), emotion_labels(self.emotions))
        except ValueError as exc:
            raise ConfigError(f"taxonomy: {exc}") from exc


@dataclass(frozen=True)
class QuestionnaireConfig:
    items_pack: str = "v-main"
    scenario_pack: str = "MainText"
    baseline_agents: int = 2
    sip_agents: int = 2
    human_csv: str | None = None
    temperature: float = 0.0

    def __post_init__(self):
        if self.baseline_agents < 0 or self.sip_agents < 0:
            raise ConfigError("questionnaire cohort sizes must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    event_path: str | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    seed: int = 0
    steps: int = 7
    wall_time_per_step: str = "1h"
    feed_size: int = 10
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    taxonomy: TaxonomyConfig = field(default_factory=TaxonomyConfig)
    questionnaire: QuestionnaireConfig = field(default_factory=QuestionnaireConfig)
    annotator: str = "backend"
    output_dir: str | None = None
    temperature: float = 0.7
    reasoning: bool = False
    seed_posts: bool = True
    activity_rate: float = 1.0
    stance_distribution: dict = field(default_factory=lambda: {"support": 1 / 3, "neutral": 1 / 3, "oppose": 1 / 3})
    emotion_distribution: dict | None = None
    failure_threshold: float = 0.5
    trigger_news: str | None = None
    topic: str = ""
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.feed_size < 1:
            raise ConfigError("feed_size must be >= 1")
        if self.annotator not in ANNOTATORS:
            raise ConfigError(f"annotator must be one of {ANNOTATORS}, not {self.annotator!r}")
        if not 0.0 < self.activity_rate <= 1.0:
            raise ConfigError("activity_rate must lie in (0, 1]")
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ConfigError("failure_threshold must lie in [0, 1]")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        parse_duration(self.wall_time_per_step)

    def engine_config(self) -> EngineConfig:
        emotions = self.emotion_distribution or {e: 1 / len(self.taxonomy.emotions) for e in self.taxonomy.emotions}
        try:
            return EngineConfig(
                seed=self.seed,
                feed_size=self.feed_size,
                wall_time_per_step=parse_duration(self.wall_time_per_step),
                seed_posts=self.seed_posts,
                activity_rate=self.activity_rate,
                stance_distribution=dict(self.stance_distribution),
                emotion_distribution=dict(emotions),
                failure_threshold=self.failure_threshold,
                max_parallel=self.backend.max_parallel,
                trigger_news=self.trigger_news,
                agent=AgentConfig(
                    temperature=self.temperature,
                    questionnaire_temperature=self.questionnaire.temperature,
                    reasoning=self.reasoning,
                    model=self.backend.model,
                    seed=self.seed,
                    memory=self.memory,
                ),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


_DURATION = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([smhd]?)\s*$")
_UNITS = {"": 1, "s": 1, "m": 60, "h": 3600, "d": 86400}


def parse_duration(value: str | int | float) -> timedelta:
    """``"1h"``, ``"30m"``, ``"90s"`` or a bare number of seconds."""
    m = _DURATION.match(str(value))
    if m is None:
        raise ConfigError(f"bad duration {value!r}")
    seconds = float(m.group(1)) * _UNITS[m.group(2)]
    if seconds <= 0:
        raise ConfigError("wall_time_per_step must be positive")
    return timedelta(seconds=seconds)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_NESTED = {"backend": BackendConfig, "memory": MemoryConfig, "taxonomy": TaxonomyConfig, "questionnaire": QuestionnaireConfig}


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        nested = _NESTED.get(key) if cls is RunConfig else None
        if nested is not None:
            kwargs[key] = _build(nested, value or {}, key)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config_data(path: str | Path) -> dict:
    """Raw mapping from a YAML/JSON config, or from a run manifest's ``config``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    if "template_hashes" in data and "config" in data:
        data = data["config"]
    return resolve_paths(data, path.parent)


def resolve_paths(data: dict, base: Path) -> dict:
    """Make file paths in the config absolute, relative to ``base``."""
    data = json.loads(json.dumps(data))

    def fix(container: dict, key: str):
        value = container.get(key)
        if isinstance(value, str) and value and not Path(value).is_absolute():
            container[key] = str((base / value).resolve())

    fix(data, "event_path")
    fix(data, "output_dir")
    if isinstance(data.get("backend"), dict):
        fix(data["backend"], "script")
    if isinstance(data.get("questionnaire"), dict):
        fix(data["questionnaire"], "human_csv")
    return data


def merge(data: dict, overrides: Mapping[str, Any]) -> dict:
    """Apply dotted-key overrides (``"backend.script"``); None values are skipped."""
    out = json.loads(json.dumps(data))
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = out
        *parents, last = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{p} is not a section")
        node[last] = value
    return out
