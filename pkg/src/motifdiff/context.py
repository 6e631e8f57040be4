"""Demonstration-context construction from labeled molecule records.

Bioassay records score candidates against an anchor by scaled activity
difference; polymer records score by distance in min-max-normalized
property space.  Scored candidates split into positive, medium, and
negative groups, and a packer fits encoded demonstrations into a fixed
motif-token budget around the design target.

Task construction is independent per assay group and output order is
deterministic (assay id, then anchor canonical key).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .molgraph import MolecularGraph, canonical_form
from .smiles import parse_smiles
from .tokenizer import MotifGraph, encode
from .vocab import MotifVocabulary

LOGGER = logging.getLogger(__name__)

POSITIVE_MIN = 0.75  # positive: [0.75, 1]
MEDIUM_MIN = 0.5  # medium: (0.5, 0.75]; negative: [0, 0.5]


class DegenerateRangeError(ValueError):
    """All property values are equal; min-max scaling is undefined."""


class BudgetExceededByTargetError(ValueError):
    """The target alone does not fit in the context budget."""


@dataclass(frozen=True)
class AssayRecord:
    molecule: MolecularGraph
    assay_id: str
    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError("record value must be finite")


@dataclass(frozen=True)
class Demonstration:
    molecule: MolecularGraph
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class DemoGroups:
    positive: tuple[Demonstration, ...] = ()
    medium: tuple[Demonstration, ...] = ()
    negative: tuple[Demonstration, ...] = ()

    def all_empty(self) -> bool:
        return not (self.positive or self.medium or self.negative)

    def __iter__(self):
        yield from self.positive
        yield from self.medium
        yield from self.negative


@dataclass(frozen=True)
class Task:
    """A demonstration context, a query score, and (in training) the target."""

    context: DemoGroups
    query_score: float = 1.0
    target: MolecularGraph | None = None
    assay_id: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.query_score <= 1.0:
            raise ValueError("query score must lie in [0, 1]")


def pchembl_score(v_anchor: float, v_candidate: float) -> float:
    """Similarity-style score from scaled activity difference, clamped to [0, 1]."""
    d = (v_anchor - v_candidate) / 10.0
    d = min(max(d, 0.0), 1.0)
    return 1.0 - d


def normalize_polymer(values: list[float]) -> list[float]:
    """Min-max scale property values to [0, 1].

    Values are shifted to a positive floor when needed, and a natural log is
    applied first when the dynamic range (max/min) exceeds 1000.
    """
    if len(values) < 2:
        raise ValueError("need at least two values")
    if any(not math.isfinite(v) for v in values):
        raise ValueError("values must be finite")
    lo, hi = min(values), max(values)
    if lo == hi:
        raise DegenerateRangeError("all values are equal")
    work = list(values)
    if lo <= 0:
        shift = 1.0 - lo
        work = [v + shift for v in work]
        lo, hi = lo + shift, hi + shift
    if hi / lo > 1000.0:
        work = [math.log(v) for v in work]
        lo, hi = math.log(lo), math.log(hi)
    return [(v - lo) / (hi - lo) for v in work]


def _bin_of(score: float) -> str:
    if score >= POSITIVE_MIN:
        return "positive"
    if score > MEDIUM_MIN:
        return "medium"
    return "negative"


def partition_demos(
    scored: list[Demonstration],
    limit_per_group: int = 15,
    rng: np.random.Generator | None = None,
    selection: str = "top",
) -> DemoGroups:
    """Split demonstrations into score bins, capped at ``limit_per_group`` each.

    Overflowing groups keep the highest-scoring entries (smallest distance to
    the anchor); ``selection='random'`` instead samples the survivors with
    the provided generator.  Groups are ordered by score descending, ties by
    canonical key.
    """
    bins: dict[str, list[Demonstration]] = {"positive": [], "medium": [], "negative": []}
    for demo in scored:
        bins[_bin_of(demo.score)].append(demo)
    out: dict[str, tuple[Demonstration, ...]] = {}
    for name, demos in bins.items():
        demos.sort(key=lambda d: (-d.score, canonical_form(d.molecule)))
        if len(demos) > limit_per_group:
            if selection == "random":
                if rng is None:
                    raise ValueError("random selection needs a generator")
                picks = sorted(rng.choice(len(demos), size=limit_per_group, replace=False))
                demos = [demos[i] for i in picks]
            else:
                demos = demos[:limit_per_group]
        out[name] = tuple(demos)
    return DemoGroups(out["positive"], out["medium"], out["negative"])


def build_tasks(
    records: list[AssayRecord],
    anchor_threshold: float = 6.0,
    limit_per_group: int = 15,
    rng: np.random.Generator | None = None,
    selection: str = "top",
) -> list[Task]:
    """One task per strongly active record, contexted by its assay neighbors.

    Anchors are records with value strictly above ``anchor_threshold``.  The
    anchor molecule never appears in its own context; all other same-assay
    records are scored against the anchor and partitioned.  Tasks come back
    sorted by (assay id, anchor canonical key).
    """
    by_assay: dict[str, list[AssayRecord]] = {}
    for record in records:
        by_assay.setdefault(record.assay_id, []).append(record)
    tasks: list[Task] = []
    for assay_id in sorted(by_assay):
        group = by_assay[assay_id]
        for anchor in group:
            if anchor.value <= anchor_threshold:
                continue
            anchor_key = canonical_form(anchor.molecule)
            demos = [
                Demonstration(r.molecule, pchembl_score(anchor.value, r.value))
                for r in group
                if canonical_form(r.molecule) != anchor_key
            ]
            tasks.append(
                Task(
                    context=partition_demos(demos, limit_per_group, rng, selection),
                    query_score=1.0,
                    target=anchor.molecule,
                    assay_id=assay_id,
                )
            )
    tasks.sort(key=lambda t: (t.assay_id, canonical_form(t.target)))
    return tasks


def build_polymer_tasks(
    records: list[AssayRecord],
    limit_per_group: int = 15,
    rng: np.random.Generator | None = None,
    selection: str = "top",
) -> list[Task]:
    """Tasks for property records: every record anchors once.

    Values are normalized per property; candidate scores are one minus the
    absolute distance in normalized space.  Properties whose values are all
    equal are skipped with a warning.
    """
    by_property: dict[str, list[AssayRecord]] = {}
    for record in records:
        by_property.setdefault(record.assay_id, []).append(record)
    tasks: list[Task] = []
    for property_id in sorted(by_property):
        group = by_property[property_id]
        if len(group) < 2:
            LOGGER.warning("property %s has fewer than two records; skipped", property_id)
            continue
        try:
            normalized = normalize_polymer([r.value for r in group])
        except DegenerateRangeError:
            LOGGER.warning("property %s has a degenerate value range; skipped", property_id)
            continue
        for i, anchor in enumerate(group):
            anchor_key = canonical_form(anchor.molecule)
            demos = [
                Demonstration(r.molecule, 1.0 - abs(normalized[i] - normalized[j]))
                for j, r in enumerate(group)
                if canonical_form(r.molecule) != anchor_key
            ]
            tasks.append(
                Task(
                    context=partition_demos(demos, limit_per_group, rng, selection),
                    query_score=1.0,
                    target=anchor.molecule,
                    assay_id=property_id,
                )
            )
    tasks.sort(key=lambda t: (t.assay_id, canonical_form(t.target)))
    return tasks


def pack_context(
    groups: DemoGroups,
    target: MolecularGraph | None,
    budget_tokens: int = 150,
    vocabulary: MotifVocabulary | None = None,
) -> list[tuple[MotifGraph, float]]:
    """Fit encoded demonstrations into a motif-token budget around the target.

    The target is reserved first, then the remaining budget splits 1/2 to
    positive and 1/4 each to medium and negative demonstrations, filled in
    score-descending order.  The share of an empty group is redistributed
    proportionally.  No delimiter tokens exist; molecule boundaries are the
    edge structure itself.
    """
    if vocabulary is None:
        raise ValueError("pack_context needs a vocabulary to count motif tokens")
    packed: list[tuple[MotifGraph, float]] = []
    remaining = budget_tokens
    if target is not None:
        encoded = encode(target, vocabulary)
        if encoded.n > budget_tokens:
            raise BudgetExceededByTargetError(
                f"target needs {encoded.n} tokens, budget is {budget_tokens}"
            )
        packed.append((encoded, 1.0))
        remaining -= encoded.n

    group_list = [
        ("positive", groups.positive, 0.5),
        ("medium", groups.medium, 0.25),
        ("negative", groups.negative, 0.25),
    ]
    live_fraction = sum(f for _, demos, f in group_list if demos)
    for _, demos, fraction in group_list:
        if not demos or live_fraction == 0.0:
            continue
        quota = remaining * (fraction / live_fraction)
        used = 0
        for demo in sorted(demos, key=lambda d: (-d.score, canonical_form(d.molecule))):
            encoded = encode(demo.molecule, vocabulary)
            if used + encoded.n <= quota:
                packed.append((encoded, demo.score))
                used += encoded.n
    return packed


# ---------------------------------------------------------------------------
# Record files
# ---------------------------------------------------------------------------


def read_records_csv(path) -> tuple[list[AssayRecord], str]:
    """Read (smiles, assay_id|property_id, value) rows; returns records and kind."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        fields = reader.fieldnames or []
        if "assay_id" in fields:
            kind, id_column = "bioassay", "assay_id"
        elif "property_id" in fields:
            kind, id_column = "polymer", "property_id"
        else:
            raise ValueError("CSV needs an 'assay_id' or 'property_id' column")
        if "smiles" not in fields or "value" not in fields:
            raise ValueError("CSV needs 'smiles' and 'value' columns")
        records = [
            AssayRecord(parse_smiles(row["smiles"]), row[id_column], float(row["value"]))
            for row in reader
        ]
    return records, kind
