"""Internal machinery for pair-merge tokenization.

A molecule under tokenization is a partition into *instances*, each mapped
isomorphically onto a canonical fragment.  Ring systems collapse to single
instances up front, which makes the instance quotient graph a tree and rules
out parallel inter-instance bonds by construction.

Merging two adjacent instances is described by a *signature*: the two
fragment keys, the canonical position of the bond endpoint on each side, and
the bond order.  A signature fully determines the merged fragment, so the
canonical form of every distinct union is computed once per process and
reused through a template that maps old fragment positions to positions in
the merged fragment.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .molgraph import (
    Bond,
    MolecularGraph,
    canonical_form,
    canonical_order,
    canonical_ranks,
    extract_ring_systems,
)

Signature = tuple[str, int, str, int, int]


class AmbiguousEncodingError(ValueError):
    """A merge would create a second bond between the same instance pair."""


class FragmentStore:
    """Canonical fragment graphs keyed by canonical form."""

    def __init__(self) -> None:
        self._by_key: dict[str, MolecularGraph] = {}

    def __contains__(self, key: str) -> bool:
        return key in self._by_key

    def get(self, key: str) -> MolecularGraph:
        return self._by_key[key]

    def register(self, graph: MolecularGraph) -> tuple[str, tuple[int, ...]]:
        """Store the canonical relabeling of ``graph``; return (key, order)."""
        order = canonical_order(graph)
        key = canonical_form(graph)
        if key not in self._by_key:
            self._by_key[key] = graph.relabeled(order)
        return key, order


@dataclass(frozen=True)
class MergeTemplate:
    """How two fragments combine: position maps into the merged fragment."""

    result_key: str
    left_map: tuple[int, ...]
    right_map: tuple[int, ...]


class SignatureTable:
    """Lazily built signature -> :class:`MergeTemplate` cache."""

    def __init__(self, store: FragmentStore) -> None:
        self.store = store
        self._templates: dict[Signature, MergeTemplate] = {}

    def template(self, sig: Signature) -> MergeTemplate:
        tpl = self._templates.get(sig)
        if tpl is not None:
            return tpl
        left_key, left_att, right_key, right_att, order = sig
        left = self.store.get(left_key)
        right = self.store.get(right_key)
        shift = left.n_atoms
        atoms = left.atoms + right.atoms
        bonds = (
            list(left.bonds)
            + [Bond(b.a + shift, b.b + shift, b.order) for b in right.bonds]
            + [Bond(left_att, right_att + shift, order)]
        )
        union = MolecularGraph(tuple(atoms), tuple(bonds))
        result_key, out_order = self.store.register(union)
        position = {old: rank for rank, old in enumerate(out_order)}
        tpl = MergeTemplate(
            result_key,
            tuple(position[i] for i in range(shift)),
            tuple(position[i + shift] for i in range(right.n_atoms)),
        )
        self._templates[sig] = tpl
        return tpl


def pair_signature(
    key_a: str, pos_a: int, key_b: str, pos_b: int, order: int
) -> tuple[Signature, bool]:
    """Direction-normalized signature; second value is True when side A is left."""
    if (key_a, pos_a) <= (key_b, pos_b):
        return (key_a, pos_a, key_b, pos_b, order), True
    return (key_b, pos_b, key_a, pos_a, order), False


class MoleculeState:
    """Mutable instance partition of one molecule."""

    __slots__ = (
        "graph",
        "ranks",
        "inst_key",
        "inst_atoms",
        "inst_min_rank",
        "atom_inst",
        "atom_pos",
        "adj",
        "ring_keys",
        "_next_id",
    )

    def __init__(self, graph: MolecularGraph, store: FragmentStore):
        self.graph = graph
        self.ranks = canonical_ranks(graph)
        self.inst_key: dict[int, str] = {}
        self.inst_atoms: dict[int, list[int]] = {}
        self.inst_min_rank: dict[int, int] = {}
        self.atom_inst = [-1] * graph.n_atoms
        self.atom_pos = [0] * graph.n_atoms
        self.adj: dict[int, dict[int, tuple[int, int, int]]] = {}
        self.ring_keys: list[str] = []
        self._next_id = 0

        in_ring: set[int] = set()
        for system in extract_ring_systems(graph):
            sub, originals = graph.induced_subgraph(system.atom_indices)
            key, order = store.register(sub)
            positions = [originals[i] for i in order]
            self._add_instance(key, positions)
            self.ring_keys.append(key)
            in_ring |= system.atom_indices
        for i in range(graph.n_atoms):
            if i not in in_ring:
                key, _ = store.register(MolecularGraph((graph.atoms[i],), ()))
                self._add_instance(key, [i])

        for bond in graph.bonds:
            ia, ib = self.atom_inst[bond.a], self.atom_inst[bond.b]
            if ia == ib:
                continue
            if ib in self.adj[ia]:
                raise AmbiguousEncodingError(
                    "two bonds between the same initial instances"
                )
            self.adj[ia][ib] = (bond.a, bond.b, bond.order)
            self.adj[ib][ia] = (bond.b, bond.a, bond.order)

    def _add_instance(self, key: str, positions: list[int]) -> int:
        nid = self._next_id
        self._next_id += 1
        self.inst_key[nid] = key
        self.inst_atoms[nid] = positions
        self.inst_min_rank[nid] = min(self.ranks[a] for a in positions)
        for pos, atom in enumerate(positions):
            self.atom_inst[atom] = nid
            self.atom_pos[atom] = pos
        self.adj[nid] = {}
        return nid

    def alive(self, nid: int) -> bool:
        return nid in self.inst_key

    def iter_pairs(self):
        for ia, nbrs in self.adj.items():
            for ib in nbrs:
                if ia < ib:
                    yield ia, ib

    def order_key(self, ia: int, ib: int) -> tuple[int, int]:
        ra, rb = self.inst_min_rank[ia], self.inst_min_rank[ib]
        return (ra, rb) if ra < rb else (rb, ra)

    def signature(self, ia: int, ib: int) -> tuple[Signature, bool]:
        atom_a, atom_b, order = self.adj[ia][ib]
        return pair_signature(
            self.inst_key[ia],
            self.atom_pos[atom_a],
            self.inst_key[ib],
            self.atom_pos[atom_b],
            order,
        )

    def merge(self, ia: int, ib: int, tpl: MergeTemplate, a_is_left: bool) -> int:
        left, right = (ia, ib) if a_is_left else (ib, ia)
        size = len(tpl.left_map) + len(tpl.right_map)
        positions: list[int] = [-1] * size
        for pos, atom in enumerate(self.inst_atoms[left]):
            positions[tpl.left_map[pos]] = atom
        for pos, atom in enumerate(self.inst_atoms[right]):
            positions[tpl.right_map[pos]] = atom

        merged_adj: dict[int, tuple[int, int, int]] = {}
        for old in (ia, ib):
            for nbr, (atom_self, atom_other, order) in self.adj[old].items():
                if nbr == ia or nbr == ib:
                    continue
                if nbr in merged_adj:
                    raise AmbiguousEncodingError(
                        "merge would create a parallel inter-instance bond"
                    )
                merged_adj[nbr] = (atom_self, atom_other, order)

        for old in (ia, ib):
            for nbr in self.adj[old]:
                if nbr not in (ia, ib):
                    del self.adj[nbr][old]
            del self.adj[old]
            del self.inst_key[old]
            del self.inst_atoms[old]
            del self.inst_min_rank[old]

        nid = self._add_instance(tpl.result_key, positions)
        self.adj[nid] = merged_adj
        for nbr, (atom_self, atom_other, order) in merged_adj.items():
            self.adj[nbr][nid] = (atom_other, atom_self, order)
        return nid

    def explode(self, nid: int, store: FragmentStore) -> list[int]:
        """Replace a multi-atom instance by one instance per atom."""
        atoms = self.inst_atoms[nid]
        for nbr in list(self.adj[nid]):
            del self.adj[nbr][nid]
        del self.adj[nid]
        del self.inst_key[nid]
        del self.inst_atoms[nid]
        del self.inst_min_rank[nid]
        created = []
        for atom in atoms:
            key, _ = store.register(MolecularGraph((self.graph.atoms[atom],), ()))
            created.append(self._add_instance(key, [atom]))
        atom_set = set(atoms)
        for bond in self.graph.bonds:
            if bond.a in atom_set or bond.b in atom_set:
                ia, ib = self.atom_inst[bond.a], self.atom_inst[bond.b]
                if ia == ib:
                    continue
                self.adj[ia][ib] = (bond.a, bond.b, bond.order)
                self.adj[ib][ia] = (bond.b, bond.a, bond.order)
        return created


def result_counts(state: MoleculeState, table: SignatureTable) -> Counter:
    """Greedy non-overlapping candidate counts per merged-fragment key.

    Instances are consumed left to right in original canonical order,
    independently per candidate key, so each atom backs at most one counted
    occurrence of any one candidate.
    """
    groups: dict[str, list[tuple[tuple[int, int], int, int]]] = {}
    for ia, ib in state.iter_pairs():
        sig, _ = state.signature(ia, ib)
        tpl = table.template(sig)
        groups.setdefault(tpl.result_key, []).append((state.order_key(ia, ib), ia, ib))
    counts: Counter = Counter()
    for key, pairs in groups.items():
        pairs.sort()
        used: set[int] = set()
        total = 0
        for _, ia, ib in pairs:
            if ia in used or ib in used:
                continue
            used.add(ia)
            used.add(ib)
            total += 1
        counts[key] = total
    return counts


def apply_result(
    state: MoleculeState, table: SignatureTable, result_key: str
) -> list[tuple[str, str, int]]:
    """Merge every non-overlapping pair whose union matches ``result_key``.

    Returns the (left key, right key, bond order) combination of each merge
    actually performed, in application order.
    """
    matches = []
    for ia, ib in state.iter_pairs():
        sig, a_is_left = state.signature(ia, ib)
        tpl = table.template(sig)
        if tpl.result_key == result_key:
            matches.append((state.order_key(ia, ib), ia, ib, sig, a_is_left, tpl))
    matches.sort(key=lambda m: m[0])
    combos: list[tuple[str, str, int]] = []
    for _, ia, ib, sig, a_is_left, tpl in matches:
        if not (state.alive(ia) and state.alive(ib)):
            continue
        state.merge(ia, ib, tpl, a_is_left)
        combos.append((sig[0], sig[2], sig[4]))
    return combos
