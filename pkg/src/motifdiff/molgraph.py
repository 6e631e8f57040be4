"""Atom-level molecular graphs, canonical labeling, and ring-system extraction.

A molecule is an undirected labeled graph: atoms carry (element, formal
charge, explicit hydrogen count or None), bonds carry an integer order in
{1, 2, 3}.  Canonical labeling uses iterative neighborhood refinement with
individualization on ties, so isomorphic graphs map to identical strings
without any external toolkit.

Graphs are immutable and every operation here is a pure function, so
concurrent use needs no coordination.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

from .periodic import SYMBOL_INDEX

SINGLE, DOUBLE, TRIPLE = 1, 2, 3
BOND_ORDERS = (SINGLE, DOUBLE, TRIPLE)


@dataclass(frozen=True, slots=True)
class AtomNode:
    """One heavy atom: element symbol, formal charge, explicit H count.

    ``hydrogens`` is None when the source notation left the count implicit
    (bare organic-subset atoms); bracket atoms always pin an explicit count.
    """

    element: str
    charge: int = 0
    hydrogens: int | None = None

    def __post_init__(self) -> None:
        if self.element not in SYMBOL_INDEX:
            raise ValueError(f"unknown element symbol {self.element!r}")
        if self.hydrogens is not None and self.hydrogens < 0:
            raise ValueError("explicit hydrogen count must be >= 0")


@dataclass(frozen=True, slots=True)
class Bond:
    """Undirected bond between two atom indices, order in {1, 2, 3}."""

    a: int
    b: int
    order: int = SINGLE

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("self-loop bond")
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)
        if self.order not in BOND_ORDERS:
            raise ValueError(f"bond order must be 1, 2, or 3, got {self.order}")

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.a, self.b)


@dataclass(frozen=True)
class MolecularGraph:
    """Immutable molecular graph over :class:`AtomNode` and :class:`Bond`."""

    atoms: tuple[AtomNode, ...]
    bonds: tuple[Bond, ...]

    def __post_init__(self) -> None:
        n = len(self.atoms)
        seen: set[tuple[int, int]] = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond {bond.endpoints} out of range for {n} atoms")
            if bond.endpoints in seen:
                raise ValueError(f"duplicate bond {bond.endpoints}")
            seen.add(bond.endpoints)

    @classmethod
    def from_parts(cls, atoms, bonds) -> "MolecularGraph":
        return cls(tuple(atoms), tuple(Bond(*b) if isinstance(b, tuple) else b for b in bonds))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per-atom tuple of (neighbor index, bond order), sorted."""
        nbrs: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            nbrs[bond.a].append((bond.b, bond.order))
            nbrs[bond.b].append((bond.a, bond.order))
        return tuple(tuple(sorted(n)) for n in nbrs)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def bond_order_sum(self, i: int) -> int:
        return sum(order for _, order in self.adjacency[i])

    def is_connected(self) -> bool:
        if self.n_atoms <= 1:
            return True
        return len(_component_of(self.adjacency, 0)) == self.n_atoms

    def induced_subgraph(self, atom_indices) -> tuple["MolecularGraph", list[int]]:
        """Subgraph on ``atom_indices``; returns (graph, original index per new atom)."""
        order = sorted(atom_indices)
        index = {old: new for new, old in enumerate(order)}
        atoms = tuple(self.atoms[i] for i in order)
        bonds = tuple(
            Bond(index[b.a], index[b.b], b.order)
            for b in self.bonds
            if b.a in index and b.b in index
        )
        return MolecularGraph(atoms, bonds), order

    def relabeled(self, order) -> "MolecularGraph":
        """Graph with atoms permuted so that new index i is old ``order[i]``."""
        position = {old: new for new, old in enumerate(order)}
        atoms = tuple(self.atoms[i] for i in order)
        bonds = tuple(
            sorted(
                (Bond(position[b.a], position[b.b], b.order) for b in self.bonds),
                key=lambda b: (b.a, b.b, b.order),
            )
        )
        return MolecularGraph(atoms, bonds)


@dataclass(frozen=True)
class RingSystem:
    """A maximal connected set of cycle bonds with its participating atoms."""

    atom_indices: frozenset[int]
    bond_indices: frozenset[int]


def _component_of(adjacency, start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v, _ in adjacency[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def connected_components(g: MolecularGraph) -> list[list[int]]:
    remaining = set(range(g.n_atoms))
    parts: list[list[int]] = []
    while remaining:
        comp = _component_of(g.adjacency, min(remaining))
        parts.append(sorted(comp))
        remaining -= comp
    return parts


# ---------------------------------------------------------------------------
# Canonical labeling
# ---------------------------------------------------------------------------


def _refine(colors: list[int], adj) -> list[int]:
    """Color refinement until stable; color ids preserve the previous order."""
    n = len(colors)
    while True:
        keys = [
            (colors[i], tuple(sorted((order, colors[j]) for j, order in adj[i])))
            for i in range(n)
        ]
        ranking = {key: rank for rank, key in enumerate(sorted(set(keys)))}
        new = [ranking[k] for k in keys]
        if len(set(new)) == len(set(colors)):
            return new
        colors = new


def _canonical_component(atom_keys, adj, nodes: list[int]):
    """Canonical (string, node order) for one connected component.

    ``atom_keys`` are hashable invariant labels, ``adj`` maps local index to
    ((local neighbor, order), ...).  Ties after refinement are broken by
    individualizing every member of the first ambiguous class and keeping the
    lexicographically smallest rendering.
    """
    n = len(nodes)
    initial = [
        (atom_keys[i], tuple(sorted(order for _, order in adj[i])))
        for i in range(n)
    ]
    ranking = {key: rank for rank, key in enumerate(sorted(set(initial)))}
    colors = _refine([ranking[k] for k in initial], adj)

    best: tuple[str, list[int]] | None = None
    stack = [colors]
    while stack:
        colors = stack.pop()
        if len(set(colors)) == n:
            order = sorted(range(n), key=colors.__getitem__)
            rendering = _render(atom_keys, adj, order)
            if best is None or rendering < best[0]:
                best = (rendering, order)
            continue
        counts: dict[int, int] = {}
        for c in colors:
            counts[c] = counts.get(c, 0) + 1
        target = min(c for c, k in counts.items() if k > 1)
        for i in range(n):
            if colors[i] != target:
                continue
            split = [(c, 0 if j == i else 1) for j, c in enumerate(colors)]
            ranking = {key: rank for rank, key in enumerate(sorted(set(split)))}
            stack.append(_refine([ranking[k] for k in split], adj))
    assert best is not None
    return best[0], [nodes[i] for i in best[1]]


def _render(atom_keys, adj, order) -> str:
    position = {old: new for new, old in enumerate(order)}
    atom_part = ";".join(_format_key(atom_keys[i]) for i in order)
    edges = sorted(
        (min(position[i], position[j]), max(position[i], position[j]), o)
        for i in range(len(order))
        for j, o in adj[i]
        if i < j
    )
    edge_part = ";".join(f"{a}-{b}-{o}" for a, b, o in edges)
    return atom_part + "|" + edge_part


def _format_key(key) -> str:
    element, charge, hydrogens = key
    h = "~" if hydrogens < 0 else str(hydrogens)
    return f"{element},{charge},{h}"


def _atom_key(atom: AtomNode):
    # -1 stands in for "unspecified" so keys sort without mixing types.
    return (atom.element, atom.charge, -1 if atom.hydrogens is None else atom.hydrogens)


@lru_cache(maxsize=65536)
def _canonical_label(g: MolecularGraph) -> tuple[str, tuple[int, ...]]:
    parts = []
    for comp in connected_components(g):
        local = {old: new for new, old in enumerate(comp)}
        keys = [_atom_key(g.atoms[i]) for i in comp]
        adj = [
            tuple((local[j], order) for j, order in g.adjacency[i] if j in local)
            for i in comp
        ]
        text, order = _canonical_component(keys, adj, comp)
        parts.append((text, min(order), order))
    parts.sort(key=lambda p: (p[0], p[1]))
    text = ".".join(p[0] for p in parts)
    order = tuple(i for p in parts for i in p[2])
    return text, order


def labeled_canonical_order(atom_keys, adjacency) -> tuple[str, tuple[int, ...]]:
    """Canonical (string, order) for an arbitrary labeled simple graph.

    ``atom_keys`` are hashable (element, charge, hydrogens)-style triples and
    ``adjacency`` maps each index to ((neighbor, order), ...).  Used by the
    aromatic pre-kekulization form, where bond order carries a sentinel.
    """
    n = len(atom_keys)
    remaining = set(range(n))
    parts = []
    while remaining:
        start = min(remaining)
        comp = sorted(_component_of(adjacency, start))
        local = {old: new for new, old in enumerate(comp)}
        keys = [atom_keys[i] for i in comp]
        adj = [tuple((local[j], o) for j, o in adjacency[i]) for i in comp]
        text, order = _canonical_component(keys, adj, comp)
        parts.append((text, min(order), order))
        remaining -= set(comp)
    parts.sort(key=lambda p: (p[0], p[1]))
    return ".".join(p[0] for p in parts), tuple(i for p in parts for i in p[2])


def canonical_form(g: MolecularGraph) -> str:
    """Label-invariant string: equal iff the graphs are isomorphic."""
    return _canonical_label(g)[0]


def canonical_order(g: MolecularGraph) -> tuple[int, ...]:
    """Atom indices listed in canonical order (rank -> original index)."""
    return _canonical_label(g)[1]


def canonical_ranks(g: MolecularGraph) -> list[int]:
    """Canonical rank of each atom (original index -> rank)."""
    ranks = [0] * g.n_atoms
    for rank, i in enumerate(canonical_order(g)):
        ranks[i] = rank
    return ranks


def graphs_equal(a: MolecularGraph, b: MolecularGraph) -> bool:
    """Isomorphism over (element, charge, explicit H, bond order)."""
    if a.n_atoms != b.n_atoms or len(a.bonds) != len(b.bonds):
        return False
    return canonical_form(a) == canonical_form(b)


# ---------------------------------------------------------------------------
# Ring systems
# ---------------------------------------------------------------------------


def bridge_bonds(g: MolecularGraph) -> set[int]:
    """Indices of bonds that are bridges (lie on no cycle); iterative Tarjan."""
    index_of = {bond.endpoints: i for i, bond in enumerate(g.bonds)}
    n = g.n_atoms
    visited = [False] * n
    disc = [0] * n
    low = [0] * n
    bridges: set[int] = set()
    timer = 0
    for root in range(n):
        if visited[root]:
            continue
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]
        while stack:
            u, parent, ptr = stack.pop()
            if ptr == 0:
                visited[u] = True
                disc[u] = low[u] = timer
                timer += 1
            nbrs = g.adjacency[u]
            if ptr < len(nbrs):
                stack.append((u, parent, ptr + 1))
                v = nbrs[ptr][0]
                if v == parent:
                    # Skip one edge back to the parent; parallel bonds are
                    # impossible, so this is exact.
                    continue
                if visited[v]:
                    low[u] = min(low[u], disc[v])
                else:
                    stack.append((v, u, 0))
            else:
                if parent >= 0:
                    low[parent] = min(low[parent], low[u])
                    if low[u] > disc[parent]:
                        key = (min(u, parent), max(u, parent))
                        bridges.add(index_of[key])
    return bridges


def cycle_bonds(g: MolecularGraph) -> set[int]:
    """Indices of bonds participating in at least one cycle."""
    return set(range(len(g.bonds))) - bridge_bonds(g)


def extract_ring_systems(g: MolecularGraph) -> list[RingSystem]:
    """Maximal connected ring systems: components of the cycle-bond subgraph."""
    in_cycle = cycle_bonds(g)
    if not in_cycle:
        return []
    nbrs: dict[int, list[tuple[int, int]]] = {}
    for bi in in_cycle:
        bond = g.bonds[bi]
        nbrs.setdefault(bond.a, []).append((bond.b, bi))
        nbrs.setdefault(bond.b, []).append((bond.a, bi))
    systems: list[RingSystem] = []
    unvisited = set(nbrs)
    while unvisited:
        start = min(unvisited)
        atoms = {start}
        bond_ids: set[int] = set()
        stack = [start]
        while stack:
            u = stack.pop()
            for v, bi in nbrs[u]:
                bond_ids.add(bi)
                if v not in atoms:
                    atoms.add(v)
                    stack.append(v)
        systems.append(RingSystem(frozenset(atoms), frozenset(bond_ids)))
        unvisited -= atoms
    systems.sort(key=lambda s: min(s.atom_indices))
    return systems
