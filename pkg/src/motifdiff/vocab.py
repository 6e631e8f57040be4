"""Motif vocabulary training by frequency-guided pair merging.

Training initializes every molecule with single-atom instances plus one
instance per maximal ring system, seeds the vocabulary with the most
frequent ring systems, then repeatedly merges the most frequent adjacent
instance pair across the corpus until the vocabulary is full or no
candidate clears the frequency floor.  Ring systems only ever merge as
complete units, which keeps decoding unambiguous.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

from ._merge import (
    FragmentStore,
    MoleculeState,
    SignatureTable,
    apply_result,
    result_counts,
)
from .molgraph import AtomNode, MolecularGraph, canonical_form, canonical_order
from .periodic import ALPHABET, ORGANIC_SUBSET, SYMBOL_INDEX, WILDCARD
from .smiles import parse_smiles, write_smiles

VOCAB_FORMAT = "motifdiff-vocab"
VOCAB_VERSION = 1


class CorpusEmptyError(ValueError):
    """Training requires at least one molecule."""


class MergeRecord(NamedTuple):
    left_key: str
    right_key: str
    bond_order: int
    result_key: str


@dataclass(frozen=True)
class Motif:
    """A connected fragment stored with atoms in canonical order."""

    graph: MolecularGraph
    canonical_key: str

    @property
    def size(self) -> int:
        return self.graph.n_atoms

    @property
    def atom_order(self) -> tuple[int, ...]:
        # The stored graph is canonically relabeled, so position == rank.
        return tuple(range(self.graph.n_atoms))


def _base_atom_node(element: str) -> AtomNode:
    # Matches what the parser produces: bare notation leaves hydrogens
    # unspecified for organic-subset atoms and the wildcard, brackets pin 0.
    implicit = element in ORGANIC_SUBSET or element == WILDCARD
    return AtomNode(element, 0, None if implicit else 0)


@dataclass
class MotifVocabulary:
    """Ordered motifs (index = id) plus the merge history that built them."""

    motifs: list[Motif]
    merges: list[MergeRecord]
    k: int
    k_ring: int
    min_frequency: int
    seed_count: int
    corpus_hash: str
    # Canonical SMILES for every key the merge list references; merge sides
    # may name fragments (absorbed rare rings) that are not motifs themselves.
    fragment_smiles: dict[str, str] = field(default_factory=dict)
    _index: dict[str, int] = field(default_factory=dict, repr=False)
    _store: FragmentStore | None = field(default=None, repr=False)
    _table: SignatureTable | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self._index:
            self._index = {m.canonical_key: i for i, m in enumerate(self.motifs)}

    def __len__(self) -> int:
        return len(self.motifs)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def id_of(self, key: str) -> int:
        return self._index[key]

    @property
    def max_motif_size(self) -> int:
        return max(m.size for m in self.motifs)

    def merge_ranks(self) -> dict[str, int]:
        """Result key -> training step, first occurrence wins."""
        ranks: dict[str, int] = {}
        for step, record in enumerate(self.merges):
            ranks.setdefault(record.result_key, step)
        return ranks

    def engine(self) -> tuple[FragmentStore, SignatureTable]:
        """Process-local fragment caches shared by encode calls."""
        if self._store is None:
            store = FragmentStore()
            for motif in self.motifs:
                store.register(motif.graph)
            self._store = store
            self._table = SignatureTable(store)
        return self._store, self._table

    # -- persistence --------------------------------------------------------

    def to_json(self) -> str:
        smiles = self.fragment_smiles
        payload = {
            "format": VOCAB_FORMAT,
            "version": VOCAB_VERSION,
            "k": self.k,
            "k_ring": self.k_ring,
            "min_frequency": self.min_frequency,
            "seed_count": self.seed_count,
            "corpus_hash": self.corpus_hash,
            "motifs": [smiles[m.canonical_key] for m in self.motifs],
            "merges": [
                [smiles[r.left_key], smiles[r.right_key], r.bond_order, smiles[r.result_key]]
                for r in self.merges
            ],
        }
        return json.dumps(payload, indent=None, separators=(",", ":"), sort_keys=False)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_json())
            handle.write("\n")

    @classmethod
    def from_json(cls, text: str) -> "MotifVocabulary":
        payload = json.loads(text)
        if payload.get("format") != VOCAB_FORMAT:
            raise ValueError("not a vocabulary file")
        if payload.get("version") != VOCAB_VERSION:
            raise ValueError(f"unsupported vocabulary version {payload.get('version')}")
        motifs = [_motif_from_smiles(s) for s in payload["motifs"]]
        keys = [m.canonical_key for m in motifs]
        if len(set(keys)) != len(keys):
            raise ValueError("vocabulary contains duplicate motifs")
        fragment_smiles = {m.canonical_key: s for m, s in zip(motifs, payload["motifs"])}
        merges = []
        for left, right, order, result in payload["merges"]:
            record = MergeRecord(
                _key_from_smiles(left), _key_from_smiles(right), order, _key_from_smiles(result)
            )
            merges.append(record)
            fragment_smiles.setdefault(record.left_key, left)
            fragment_smiles.setdefault(record.right_key, right)
            fragment_smiles.setdefault(record.result_key, result)
        return cls(
            motifs=motifs,
            merges=merges,
            k=payload["k"],
            k_ring=payload["k_ring"],
            min_frequency=payload["min_frequency"],
            seed_count=payload["seed_count"],
            corpus_hash=payload["corpus_hash"],
            fragment_smiles=fragment_smiles,
        )

    @classmethod
    def load(cls, path) -> "MotifVocabulary":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_json(handle.read())


def _motif_from_smiles(smiles: str) -> Motif:
    graph = parse_smiles(smiles)
    return Motif(graph.relabeled(canonical_order(graph)), canonical_form(graph))


def _key_from_smiles(smiles: str) -> str:
    return canonical_form(parse_smiles(smiles))


def corpus_fingerprint(corpus: list[MolecularGraph]) -> str:
    """Order-independent corpus digest used for provenance stamps."""
    digest = hashlib.sha256()
    for key in sorted(canonical_form(g) for g in corpus):
        digest.update(key.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def _ring_key_counts(states: list[MoleculeState]) -> Counter:
    counts: Counter = Counter()
    for state in states:
        counts.update(state.ring_keys)
    return counts


def seed_rings(corpus: list[MolecularGraph], k_ring: int) -> list[Motif]:
    """Most frequent ring-system motifs, each molecule counting once per instance.

    Ties break toward smaller systems, then lexicographic canonical key.
    """
    if k_ring <= 0:
        return []
    store = FragmentStore()
    states = [MoleculeState(g, store) for g in corpus]
    counts = _ring_key_counts(states)
    ordered = sorted(
        counts.items(), key=lambda kv: (-kv[1], store.get(kv[0]).n_atoms, kv[0])
    )
    return [Motif(store.get(key), key) for key, _ in ordered[:k_ring]]


def train_vocabulary(
    corpus: list[MolecularGraph],
    k: int,
    k_ring: int,
    min_frequency: int = 2,
) -> MotifVocabulary:
    """Build a motif vocabulary of at most ``k`` entries from ``corpus``.

    The vocabulary starts with the 119 base atoms, the ``k_ring`` most
    frequent ring systems, and any single-atom variants (charges, pinned
    hydrogen counts) observed in the corpus.  Merge steps then add the most
    frequent adjacent-pair union until ``k`` is reached or the best
    candidate occurs fewer than ``min_frequency`` times.  Candidate
    frequency pools over every pairing that produces the same merged
    fragment; ties prefer the smaller fragment, then the lexicographically
    smaller key.
    """
    if not corpus:
        raise CorpusEmptyError("corpus is empty")
    store = FragmentStore()
    table = SignatureTable(store)

    base_keys = []
    for element in ALPHABET:
        key, _ = store.register(MolecularGraph((_base_atom_node(element),), ()))
        base_keys.append(key)
    base_set = set(base_keys)

    states = [MoleculeState(g, store) for g in corpus]

    ring_counts = _ring_key_counts(states)
    seeds = [
        key
        for key, _ in sorted(
            ring_counts.items(), key=lambda kv: (-kv[1], store.get(kv[0]).n_atoms, kv[0])
        )[: max(k_ring, 0)]
    ]
    if k < len(base_keys) + len(seeds):
        raise ValueError(
            f"k={k} is below the initial vocabulary size {len(base_keys) + len(seeds)}"
        )

    variant_keys: set[str] = set()
    for g in corpus:
        for atom in g.atoms:
            key, _ = store.register(MolecularGraph((atom,), ()))
            if key not in base_set:
                variant_keys.add(key)
    variants = sorted(
        variant_keys,
        key=lambda key: (
            SYMBOL_INDEX[store.get(key).atoms[0].element],
            store.get(key).atoms[0].charge,
            store.get(key).atoms[0].hydrogens or 0,
        ),
    )

    motif_keys: list[str] = list(base_keys) + seeds + variants
    known = set(motif_keys)

    contrib: list[Counter] = []
    global_counts: Counter = Counter()
    mols_with: dict[str, set[int]] = {}
    for idx, state in enumerate(states):
        counts = result_counts(state, table)
        contrib.append(counts)
        global_counts.update(counts)
        for key in counts:
            mols_with.setdefault(key, set()).add(idx)

    heap: list[tuple[int, int, str]] = [
        (-count, store.get(key).n_atoms, key) for key, count in global_counts.items()
    ]
    heapq.heapify(heap)

    merges: list[MergeRecord] = []
    while len(motif_keys) < k and heap:
        neg_count, size, key = heapq.heappop(heap)
        count = global_counts.get(key, 0)
        if count != -neg_count:
            continue  # stale entry
        if count < min_frequency:
            break

        combo_tally: Counter = Counter()
        changed: set[str] = set()
        for idx in sorted(mols_with.get(key, ())):
            state = states[idx]
            combos = apply_result(state, table, key)
            combo_tally.update(combos)
            fresh = result_counts(state, table)
            old = contrib[idx]
            for stale_key, stale_count in old.items():
                if stale_key not in fresh:
                    global_counts[stale_key] -= stale_count
                    changed.add(stale_key)
                    members = mols_with.get(stale_key)
                    if members:
                        members.discard(idx)
                    if global_counts[stale_key] <= 0:
                        del global_counts[stale_key]
            for new_key, new_count in fresh.items():
                delta = new_count - old.get(new_key, 0)
                if delta:
                    global_counts[new_key] += delta
                    changed.add(new_key)
                mols_with.setdefault(new_key, set()).add(idx)
            contrib[idx] = fresh
        for changed_key in changed:
            if changed_key in global_counts:
                heapq.heappush(
                    heap,
                    (-global_counts[changed_key], store.get(changed_key).n_atoms, changed_key),
                )

        if not combo_tally:
            continue
        left, right, order = min(
            combo_tally, key=lambda c: (-combo_tally[c], c[0], c[1], c[2])
        )
        merges.append(MergeRecord(left, right, order, key))
        if key not in known:
            known.add(key)
            motif_keys.append(key)

    motifs = [Motif(store.get(key), key) for key in motif_keys]
    referenced = set(motif_keys)
    for record in merges:
        referenced.update((record.left_key, record.right_key, record.result_key))
    vocabulary = MotifVocabulary(
        motifs=motifs,
        merges=merges,
        k=k,
        k_ring=k_ring,
        min_frequency=min_frequency,
        seed_count=len(seeds),
        corpus_hash=corpus_fingerprint(corpus),
        fragment_smiles={key: write_smiles(store.get(key)) for key in referenced},
    )
    vocabulary._store = store
    vocabulary._table = table
    return vocabulary


# ---------------------------------------------------------------------------
# Edge vocabulary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeVocabulary:
    """Distinct directed edge signatures seen in an encoded corpus."""

    entries: frozenset[tuple[int, int, int, int]]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, entry: tuple[int, int, int, int]) -> bool:
        return entry in self.entries

    def to_json(self) -> str:
        return json.dumps(
            {"format": "motifdiff-edges", "version": 1, "entries": sorted(self.entries)},
            separators=(",", ":"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_json())
            handle.write("\n")

    @classmethod
    def from_json(cls, text: str) -> "EdgeVocabulary":
        payload = json.loads(text)
        if payload.get("format") != "motifdiff-edges":
            raise ValueError("not an edge-vocabulary file")
        return cls(frozenset(tuple(e) for e in payload["entries"]))

    @classmethod
    def load(cls, path) -> "EdgeVocabulary":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_json(handle.read())


def build_edge_vocabulary(encoded) -> EdgeVocabulary:
    """Collect (source motif, target motif, bond order, attachment) signatures."""
    entries: set[tuple[int, int, int, int]] = set()
    for graph in encoded:
        for edge in graph.edges:
            entries.add(
                (
                    graph.nodes[edge.source],
                    graph.nodes[edge.target],
                    edge.bond_order,
                    edge.attachment,
                )
            )
    return EdgeVocabulary(frozenset(entries))
