"""Fingerprints, similarity, context consistency, and generation metrics."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import NamedTuple

from .context import DemoGroups
from .molgraph import MolecularGraph, canonical_form
from .periodic import implied_hydrogens

DEFAULT_RADIUS = 2
DEFAULT_WIDTH = 2048


class WidthMismatchError(ValueError):
    pass


class AllGroupsEmptyError(ValueError):
    pass


class TooFewMoleculesError(ValueError):
    pass


class InsufficientCandidatesError(ValueError):
    pass


@dataclass(frozen=True)
class Fingerprint:
    """Hashed circular fingerprint: ``bits`` is a ``width``-bit mask."""

    bits: int
    width: int
    radius: int


def _hash64(payload: str) -> int:
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def fingerprint(
    g: MolecularGraph, radius: int = DEFAULT_RADIUS, width: int = DEFAULT_WIDTH
) -> Fingerprint:
    """Circular fingerprint from iterated neighborhood identifiers.

    Atom identifiers start from (element, charge, hydrogen count, degree,
    bond orders) and absorb sorted neighbor identifiers for ``radius``
    rounds; every identifier from every round sets one bit.
    """
    adj = g.adjacency
    ids = []
    for i, atom in enumerate(g.atoms):
        h = atom.hydrogens
        if h is None:
            h = implied_hydrogens(atom.element, atom.charge, g.bond_order_sum(i))
        orders = tuple(sorted(order for _, order in adj[i]))
        ids.append(_hash64(f"{atom.element}|{atom.charge}|{h}|{len(adj[i])}|{orders}"))
    bits = 0
    for value in ids:
        bits |= 1 << (value % width)
    for _ in range(radius):
        ids = [
            _hash64(f"{ids[i]}|{sorted((order, ids[j]) for j, order in adj[i])}")
            for i in range(g.n_atoms)
        ]
        for value in ids:
            bits |= 1 << (value % width)
    return Fingerprint(bits, width, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Intersection over union of the bit sets; 1.0 when both are empty."""
    if a.width != b.width:
        raise WidthMismatchError(f"fingerprint widths differ: {a.width} vs {b.width}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


def group_similarity(
    candidate: Fingerprint, members: tuple, radius: int, width: int
) -> float:
    """Mean candidate-to-member similarity; an empty group scores 0."""
    return _mean_similarity(
        candidate, [fingerprint(demo.molecule, radius, width) for demo in members]
    )


def _mean_similarity(candidate: Fingerprint, prints: list[Fingerprint]) -> float:
    if not prints:
        return 0.0
    return sum(tanimoto(candidate, fp) for fp in prints) / len(prints)


def score_from_group_sims(sim_pos: float, sim_med: float, sim_neg: float) -> float:
    """Clamped mean of the pairwise group-similarity margins."""
    d_pos_med = max(sim_pos - sim_med, 0.0)
    d_med_neg = max(sim_med - sim_neg, 0.0)
    d_pos_neg = max(sim_pos - sim_neg, 0.0)
    return min((d_pos_med + d_med_neg + d_pos_neg) / 3.0, 1.0)


def consistency_score(
    candidate: MolecularGraph,
    groups: DemoGroups,
    radius: int = DEFAULT_RADIUS,
    width: int = DEFAULT_WIDTH,
) -> float:
    """How well a candidate follows the positive > medium > negative ordering."""
    if groups.all_empty():
        raise AllGroupsEmptyError("consistency needs at least one non-empty group")
    fp = fingerprint(candidate, radius, width)
    return score_from_group_sims(
        group_similarity(fp, groups.positive, radius, width),
        group_similarity(fp, groups.medium, radius, width),
        group_similarity(fp, groups.negative, radius, width),
    )


def filter_by_consistency(
    candidates: list[MolecularGraph],
    groups: DemoGroups,
    keep: int,
    radius: int = DEFAULT_RADIUS,
    width: int = DEFAULT_WIDTH,
) -> list[MolecularGraph]:
    """The ``keep`` candidates of highest consistency; ties break canonically."""
    if keep > len(candidates):
        raise ValueError(f"cannot keep {keep} of {len(candidates)} candidates")
    if groups.all_empty():
        raise AllGroupsEmptyError("consistency needs at least one non-empty group")
    group_prints = [
        [fingerprint(demo.molecule, radius, width) for demo in members]
        for members in (groups.positive, groups.medium, groups.negative)
    ]

    def score(g: MolecularGraph) -> float:
        fp = fingerprint(g, radius, width)
        return score_from_group_sims(*(_mean_similarity(fp, ps) for ps in group_prints))

    ranked = sorted(candidates, key=lambda g: (-score(g), canonical_form(g)))
    return ranked[:keep]


def int_div(
    molecules: list[MolecularGraph],
    radius: int = DEFAULT_RADIUS,
    width: int = DEFAULT_WIDTH,
    normalization: str = "count-squared",
) -> float:
    """Internal diversity: one minus the root mean of squared similarities.

    The default divides the ordered-pair sum (excluding self pairs) by the
    squared set size; ``normalization='pairs'`` divides by the number of
    ordered pairs instead.
    """
    n = len(molecules)
    if n < 2:
        raise TooFewMoleculesError("internal diversity needs at least two molecules")
    prints = [fingerprint(g, radius, width) for g in molecules]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += tanimoto(prints[i], prints[j]) ** 2
    denom = n * n if normalization == "count-squared" else n * (n - 1)
    return 1.0 - math.sqrt(total / denom)


class EvaluationResult(NamedTuple):
    top_k_mean: float
    diversity: float
    harmonic: float


def evaluate_generation(
    scored: list[tuple[MolecularGraph, float]],
    k: int = 10,
    radius: int = DEFAULT_RADIUS,
    width: int = DEFAULT_WIDTH,
) -> EvaluationResult:
    """Harmonic mean of the top-k score average and their internal diversity."""
    if len(scored) < k:
        raise InsufficientCandidatesError(f"need at least {k} scored molecules")
    ranked = sorted(scored, key=lambda pair: (-pair[1], canonical_form(pair[0])))[:k]
    top_mean = sum(score for _, score in ranked) / k
    diversity = int_div([mol for mol, _ in ranked], radius, width)
    total = top_mean + diversity
    harmonic = 0.0 if total == 0 else 2.0 * top_mean * diversity / total
    return EvaluationResult(top_mean, diversity, harmonic)
