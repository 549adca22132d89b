"""Evaluation metrics: attitude bias/diversity and their deltas, DTW,
confusion-matrix P/R/F1, action-frequency divergence, and the distribution
statistics used for questionnaire ratings.

Everything here is a pure function over plain Python numbers.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

from .domain import ACTION_KINDS
from .errors import (
    DegenerateVariance,
    EmptyInput,
    EmptySeries,
    EmptyStep,
    LengthMismatch,
    TooFewRespondents,
)

# --- propagation ------------------------------------------------------------

def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def bias(values: Sequence[float]) -> float:
    """Distance of the mean attitude from neutral."""
    if not values:
        raise EmptyStep("bias of an empty step")
    return abs(_mean(values))


def diversity(values: Sequence[float]) -> float:
    """Population standard deviation of the attitudes."""
    if not values:
        raise EmptyStep("diversity of an empty step")
    mu = _mean(values)
    return math.sqrt(math.fsum((v - mu) ** 2 for v in values) / len(values))


@dataclass(frozen=True)
class AttitudeSeries:
    steps: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(tuple(s) for s in self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def bias(self) -> list[float]:
        return [bias(s) for s in self.steps]

    def diversity(self) -> list[float]:
        return [diversity(s) for s in self.steps]

    def mean_attitude(self) -> list[float]:
        out = []
        for s in self.steps:
            if not s:
                raise EmptyStep("mean attitude of an empty step")
            out.append(_mean(s))
        return out


@dataclass(frozen=True)
class DeltaSeries:
    delta_bias: tuple[float, ...]
    delta_div: tuple[float, ...]

    @property
    def mean_delta_bias(self) -> float:
        return _mean(self.delta_bias)

    @property
    def mean_delta_div(self) -> float:
        return _mean(self.delta_div)

    @property
    def final_delta_bias(self) -> float:
        return self.delta_bias[-1]

    @property
    def final_delta_div(self) -> float:
        return self.delta_div[-1]

    def to_dict(self) -> dict:
        return {
            "delta_bias": list(self.delta_bias),
            "delta_div": list(self.delta_div),
            "mean": {"delta_bias": self.mean_delta_bias, "delta_div": self.mean_delta_div},
            "final": {"delta_bias": self.final_delta_bias, "delta_div": self.final_delta_div},
        }


def delta_series(sim: AttitudeSeries, real: AttitudeSeries) -> DeltaSeries:
    if len(sim) != len(real):
        raise LengthMismatch(f"simulated series has {len(sim)} steps, real has {len(real)}")
    if not len(sim):
        raise EmptySeries("no steps to compare")
    db = tuple(abs(a - b) for a, b in zip(sim.bias(), real.bias()))
    dd = tuple(abs(a - b) for a, b in zip(sim.diversity(), real.diversity()))
    return DeltaSeries(db, dd)


def dtw(x: Sequence[float], y: Sequence[float]) -> float:
    """Classic DTW, cost |x_i - y_j|, steps (1,0) (0,1) (1,1), no window."""
    if not x or not y:
        raise EmptySeries("dtw needs two non-empty series")
    inf = math.inf
    prev = [inf] * (len(y) + 1)
    prev[0] = 0.0
    for xi in x:
        cur = [inf] * (len(y) + 1)
        for j, yj in enumerate(y, start=1):
            cur[j] = abs(xi - yj) + min(prev[j], cur[j - 1], prev[j - 1])
        prev = cur
    return prev[-1]


# --- alignment --------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    labels: tuple[Hashable, ...]
    counts: dict[Hashable, dict[Hashable, int]] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = tuple(dict.fromkeys(self.labels))
        for t in self.labels:
            row = self.counts.setdefault(t, {})
            for p in self.labels:
                row.setdefault(p, 0)
        extra = set(self.counts) - set(self.labels)
        if extra:
            raise ValueError(f"counts mention labels outside the label set: {sorted(map(str, extra))}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Hashable, Hashable]], labels: Sequence[Hashable] = ()) -> "ConfusionMatrix":
        pairs = list(pairs)
        all_labels = list(labels)
        for t, p in pairs:
            for lab in (t, p):
                if lab not in all_labels:
                    all_labels.append(lab)
        cm = cls(tuple(all_labels))
        for t, p in pairs:
            cm.counts[t][p] += 1
        return cm

    @property
    def total(self) -> int:
        return sum(sum(row.values()) for row in self.counts.values())

    def true_count(self, label) -> int:
        return sum(self.counts[label].values())

    def predicted_count(self, label) -> int:
        return sum(self.counts[t][label] for t in self.labels)

    def to_dict(self) -> dict:
        return {
            "labels": [str(x) for x in self.labels],
            "counts": [[self.counts[t][p] for p in self.labels] for t in self.labels],
        }


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class PRF:
    per_class: Mapping[Hashable, ClassScores]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    accuracy: float
    n: int

    def to_dict(self) -> dict:
        return {
            "per_class": {
                str(k): {"precision": v.precision, "recall": v.recall, "f1": v.f1, "support": v.support}
                for k, v in self.per_class.items()
            },
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1},
            "micro": {"precision": self.micro_precision, "recall": self.micro_recall, "f1": self.micro_f1},
            "accuracy": self.accuracy,
            "n": self.n,
        }


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def macro_prf(cm: ConfusionMatrix) -> PRF:
    """Per-class and macro P/R/F1; macro averages over classes with true support."""
    n = cm.total
    if n < 1:
        raise EmptyInput("confusion matrix is empty")
    per_class = {}
    for lab in cm.labels:
        tp = cm.counts[lab][lab]
        p = _ratio(tp, cm.predicted_count(lab))
        r = _ratio(tp, cm.true_count(lab))
        per_class[lab] = ClassScores(p, r, _f1(p, r), cm.true_count(lab))
    present = [lab for lab in cm.labels if cm.true_count(lab) > 0]
    correct = sum(cm.counts[lab][lab] for lab in cm.labels)
    acc = correct / n
    return PRF(
        per_class=per_class,
        macro_precision=_mean([per_class[lab].precision for lab in present]),
        macro_recall=_mean([per_class[lab].recall for lab in present]),
        macro_f1=_mean([per_class[lab].f1 for lab in present]),
        # single-label classification: every error is one FP and one FN
        micro_precision=acc,
        micro_recall=acc,
        micro_f1=acc,
        accuracy=acc,
        n=n,
    )


def action_histogram(kinds: Iterable[str]) -> dict[str, float]:
    counts = Counter(kinds)
    unknown = set(counts) - set(ACTION_KINDS)
    if unknown:
        raise ValueError(f"unknown action kinds {sorted(unknown)}")
    total = sum(counts.values())
    if not total:
        raise EmptyInput("no actions to histogram")
    return {k: counts.get(k, 0) / total for k in ACTION_KINDS}


def l1_distance(p: Mapping[str, float], q: Mapping[str, float]) -> float:
    keys = set(p) | set(q)
    return math.fsum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def action_frequency_divergence(sim_kinds: Iterable[str], real_kinds: Iterable[str]) -> float:
    """L1 distance between normalized action-kind histograms, in [0, 2]."""
    return l1_distance(action_histogram(sim_kinds), action_histogram(real_kinds))


# --- distributions ----------------------------------------------------------

@dataclass(frozen=True)
class DistributionStats:
    n: int
    mean: float
    std: float | None  # sample std, None when n < 2
    skewness: float | None
    excess_kurtosis: float | None
    kurtosis: float | None  # raw (non-excess)
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "std": self.std,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "kurtosis": self.kurtosis,
            "degenerate": self.degenerate,
        }


def distribution_stats(sample: Sequence[float]) -> DistributionStats:
    """Mean, sample std (n-1), g1 and g2 from 1/n central moments.

    Zero variance is flagged as degenerate; the shape statistics are then None.
    """
    n = len(sample)
    if n < 1:
        raise EmptyInput("distribution_stats needs at least one value")
    mu = _mean(sample)
    dev = [v - mu for v in sample]
    m2 = math.fsum(d * d for d in dev) / n
    std = math.sqrt(m2 * n / (n - 1)) if n >= 2 else None
    if m2 == 0:
        return DistributionStats(n, mu, std, None, None, None, True)
    m3 = math.fsum(d**3 for d in dev) / n
    m4 = math.fsum(d**4 for d in dev) / n
    kurt = m4 / (m2 * m2)
    return DistributionStats(n, mu, std, m3 / m2**1.5, kurt - 3.0, kurt, False)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise LengthMismatch(f"pearson needs paired samples ({len(x)} vs {len(y)})")
    if len(x) < 2:
        raise TooFewRespondents("pearson needs at least two pairs")
    mx, my = _mean(x), _mean(y)
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise DegenerateVariance("zero variance in a pearson argument")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


Matrix = list[list[float | None]]


def correlation_matrix(vectors: Sequence[Sequence[float]]) -> Matrix:
    """Pairwise pearson between columns; degenerate pairs are None (not zero)."""
    if len(vectors) < 2:
        raise TooFewRespondents(f"{len(vectors)} respondent(s); need at least 2")
    width = len(vectors[0])
    if any(len(v) != width for v in vectors):
        raise LengthMismatch("respondent vectors differ in length")
    cols = [[v[i] for v in vectors] for i in range(width)]
    out: Matrix = [[None] * width for _ in range(width)]
    for i in range(width):
        for j in range(i, width):
            try:
                r = pearson(cols[i], cols[j])
            except DegenerateVariance:
                r = None
            if i == j and r is not None:
                r = 1.0
            out[i][j] = out[j][i] = r
    return out


STAGE_ITEMS: tuple[tuple[str, ...], ...] = (
    ("Q1",),
    ("Q2", "Q3", "Q4"),
    ("Q5", "Q6", "Q7"),
    ("Q8", "Q9", "Q10"),
    ("Q11", "Q12", "Q13"),
)
ITEM_IDS = tuple(q for stage in STAGE_ITEMS for q in stage)


def stage_vector(item_vector: Sequence[float]) -> list[float]:
    """13 item scores (Q1..Q13 order) -> 5 per-stage means."""
    if len(item_vector) != len(ITEM_IDS):
        raise LengthMismatch(f"expected {len(ITEM_IDS)} item scores, got {len(item_vector)}")
    by_id = dict(zip(ITEM_IDS, item_vector))
    return [_mean([by_id[q] for q in stage]) for stage in STAGE_ITEMS]


def stage_aggregate(vectors: Sequence[Sequence[float]]) -> tuple[list[list[float]], Matrix]:
    stages = [stage_vector(v) for v in vectors]
    return stages, correlation_matrix(stages)
