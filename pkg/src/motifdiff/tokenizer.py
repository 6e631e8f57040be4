"""Motif-level encoding of molecules and the dense token-feature layout.

``encode`` replays a vocabulary's merge history against a molecule (lowest
training step first, BPE style) after collapsing every ring system to a
single unit; unit fragments the vocabulary does not know fall back to
single atoms.  ``decode`` reverses the mapping exactly.  ``featurize`` and
``defeaturize`` convert motif graphs to and from one-hot-blocked matrices
where every non-edge is an explicit null bond.

A loaded vocabulary is immutable and shareable across threads; its fragment
caches only ever grow, so concurrent encodes are safe.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._merge import AmbiguousEncodingError, MoleculeState
from .molgraph import Bond, MolecularGraph
from .smiles import parse_smiles
from .vocab import MotifVocabulary, train_vocabulary

__all__ = [
    "DirectedEdge",
    "MotifGraph",
    "FeatureLayout",
    "GraphTokenMatrix",
    "encode",
    "decode",
    "featurize",
    "defeaturize",
    "MotifTokenizer",
    "GraphFeaturizer",
    "DisconnectedInputError",
    "AmbiguousEncodingError",
    "UnknownMotifIdError",
    "DanglingAttachmentError",
    "MissingReverseEdgeError",
    "LayoutOverflowError",
    "InvalidOneHotError",
    "InconsistentBondBlocksError",
]

NULL_BOND = 0  # bond categories: 0 null, 1 single, 2 double, 3 triple


class DisconnectedInputError(ValueError):
    """Encoding requires a connected molecule."""


class UnknownMotifIdError(ValueError):
    pass


class DanglingAttachmentError(ValueError):
    pass


class MissingReverseEdgeError(ValueError):
    pass


class LayoutOverflowError(ValueError):
    pass


class InvalidOneHotError(ValueError):
    pass


class InconsistentBondBlocksError(ValueError):
    pass


@dataclass(frozen=True)
class DirectedEdge:
    """Inter-motif bond seen from one side; ``attachment`` indexes the atom
    inside the source motif (canonical order) where the bond starts."""

    source: int
    target: int
    bond_order: int
    attachment: int


@dataclass(frozen=True)
class MotifGraph:
    """Motif ids plus directed, attachment-annotated edges (both directions)."""

    nodes: tuple[int, ...]
    edges: tuple[DirectedEdge, ...]

    @property
    def n(self) -> int:
        return len(self.nodes)


def validate_motif_graph(h: MotifGraph, vocabulary: MotifVocabulary) -> None:
    """Check structural invariants; raises the matching error type."""
    seen: dict[tuple[int, int], DirectedEdge] = {}
    for edge in h.edges:
        if not (0 <= edge.source < h.n and 0 <= edge.target < h.n) or edge.source == edge.target:
            raise ValueError(f"edge endpoints out of range: {edge}")
        if (edge.source, edge.target) in seen:
            raise ValueError(f"duplicate directed edge {edge.source}->{edge.target}")
        seen[(edge.source, edge.target)] = edge
    for edge in h.edges:
        motif_id = h.nodes[edge.source]
        if not (0 <= motif_id < len(vocabulary)):
            raise UnknownMotifIdError(f"motif id {motif_id} not in vocabulary")
        if edge.attachment >= vocabulary.motifs[motif_id].size:
            raise DanglingAttachmentError(
                f"attachment {edge.attachment} outside motif of size "
                f"{vocabulary.motifs[motif_id].size}"
            )
        reverse = seen.get((edge.target, edge.source))
        if reverse is None or reverse.bond_order != edge.bond_order:
            raise MissingReverseEdgeError(
                f"edge {edge.source}->{edge.target} lacks a matching reverse edge"
            )
    for i, motif_id in enumerate(h.nodes):
        if not (0 <= motif_id < len(vocabulary)):
            raise UnknownMotifIdError(f"motif id {motif_id} not in vocabulary")


def encode(g: MolecularGraph, vocabulary: MotifVocabulary) -> MotifGraph:
    """Tokenize a connected molecule into a motif graph.

    Unknown single-atom variants cannot be represented losslessly and raise
    :class:`UnknownMotifIdError`; everything else falls back to atoms in the
    worst case.
    """
    return encode_with_partition(g, vocabulary)[0]


def encode_with_partition(
    g: MolecularGraph, vocabulary: MotifVocabulary
) -> tuple[MotifGraph, list[list[int]]]:
    """Like :func:`encode`, also returning the atom indices behind each node."""
    if not g.is_connected():
        raise DisconnectedInputError("cannot encode a disconnected molecule")
    store, table = vocabulary.engine()
    ranks = vocabulary.merge_ranks()
    state = MoleculeState(g, store)

    heap: list[tuple[int, tuple[int, int], int, int]] = []

    def push_pairs(pairs) -> None:
        for ia, ib in pairs:
            sig, _ = state.signature(ia, ib)
            tpl = table.template(sig)
            rank = ranks.get(tpl.result_key)
            if rank is not None:
                heapq.heappush(heap, (rank, state.order_key(ia, ib), ia, ib))

    push_pairs(state.iter_pairs())
    while heap:
        rank, _, ia, ib = heapq.heappop(heap)
        if not (state.alive(ia) and state.alive(ib)):
            continue
        sig, a_is_left = state.signature(ia, ib)
        tpl = table.template(sig)
        if ranks.get(tpl.result_key) != rank:
            continue
        nid = state.merge(ia, ib, tpl, a_is_left)
        push_pairs((nid, nbr) for nbr in state.adj[nid])

    # Units the vocabulary does not know (rare ring systems) fall back to
    # single atoms; merges are not re-applied inside them.
    for nid in sorted(state.inst_key):
        if state.inst_key[nid] not in vocabulary and len(state.inst_atoms[nid]) > 1:
            state.explode(nid, store)

    order = sorted(state.inst_key, key=state.inst_min_rank.__getitem__)
    node_index = {nid: i for i, nid in enumerate(order)}
    nodes = []
    for nid in order:
        key = state.inst_key[nid]
        if key not in vocabulary:
            atom = state.graph.atoms[state.inst_atoms[nid][0]]
            raise UnknownMotifIdError(
                f"atom variant {atom} has no motif in this vocabulary"
            )
        nodes.append(vocabulary.id_of(key))

    edges = []
    for ia in order:
        for ib, (atom_a, atom_b, bond_order) in state.adj[ia].items():
            edges.append(
                DirectedEdge(
                    node_index[ia], node_index[ib], bond_order, state.atom_pos[atom_a]
                )
            )
    edges.sort(key=lambda e: (e.source, e.target))
    partition = [list(state.inst_atoms[nid]) for nid in order]
    return MotifGraph(tuple(nodes), tuple(edges)), partition


def decode(h: MotifGraph, vocabulary: MotifVocabulary) -> MolecularGraph:
    """Expand a motif graph back to the atom-level molecule."""
    validate_motif_graph(h, vocabulary)
    atoms = []
    offsets = []
    for motif_id in h.nodes:
        offsets.append(len(atoms))
        atoms.extend(vocabulary.motifs[motif_id].graph.atoms)
    bonds: list[Bond] = []
    for motif_id, offset in zip(h.nodes, offsets):
        for bond in vocabulary.motifs[motif_id].graph.bonds:
            bonds.append(Bond(bond.a + offset, bond.b + offset, bond.order))
    directed = {(e.source, e.target): e for e in h.edges}
    for (i, j), edge in directed.items():
        if i > j:
            continue
        reverse = directed[(j, i)]
        bonds.append(
            Bond(
                offsets[i] + edge.attachment,
                offsets[j] + reverse.attachment,
                edge.bond_order,
            )
        )
    return MolecularGraph(tuple(atoms), tuple(bonds))


# ---------------------------------------------------------------------------
# Dense feature layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureLayout:
    """Widths of the one-hot blocks in a graph-token row."""

    f_motif: int
    f_attach: int
    n_max: int
    f_bond: int = 4

    @property
    def width(self) -> int:
        return self.f_motif + self.n_max * (self.f_bond + self.f_attach)

    @classmethod
    def for_vocabulary(cls, vocabulary: MotifVocabulary, n_max: int) -> "FeatureLayout":
        return cls(f_motif=len(vocabulary), f_attach=vocabulary.max_motif_size, n_max=n_max)

    def bond_block(self, j: int) -> slice:
        start = self.f_motif + j * self.f_bond
        return slice(start, start + self.f_bond)

    def attach_block(self, j: int) -> slice:
        start = self.f_motif + self.n_max * self.f_bond + j * self.f_attach
        return slice(start, start + self.f_attach)


@dataclass(eq=False)
class GraphTokenMatrix:
    """One one-hot-blocked row per motif node, width ``layout.width``."""

    data: np.ndarray
    layout: FeatureLayout
    n: int

    def motif_ids(self) -> np.ndarray:
        return np.argmax(self.data[:, : self.layout.f_motif], axis=1)

    def bond_categories(self) -> np.ndarray:
        """(n, n_max) int matrix of bond categories, 0 = null."""
        lay = self.layout
        block = self.data[:, lay.f_motif : lay.f_motif + lay.n_max * lay.f_bond]
        return np.argmax(block.reshape(self.n, lay.n_max, lay.f_bond), axis=2)

    def attachment_blocks(self) -> np.ndarray:
        lay = self.layout
        start = lay.f_motif + lay.n_max * lay.f_bond
        return self.data[:, start:].reshape(self.n, lay.n_max, lay.f_attach)

    def copy(self) -> "GraphTokenMatrix":
        return GraphTokenMatrix(self.data.copy(), self.layout, self.n)


def featurize(h: MotifGraph, layout: FeatureLayout) -> GraphTokenMatrix:
    """Dense one-hot rows; absent edges become explicit null bonds."""
    if h.n > layout.n_max:
        raise LayoutOverflowError(f"{h.n} nodes exceed n_max={layout.n_max}")
    data = np.zeros((h.n, layout.width), dtype=np.float64)
    for i, motif_id in enumerate(h.nodes):
        if motif_id >= layout.f_motif:
            raise LayoutOverflowError(f"motif id {motif_id} exceeds f_motif={layout.f_motif}")
        data[i, motif_id] = 1.0
    for i in range(h.n):
        for j in range(layout.n_max):
            data[i, layout.bond_block(j).start + NULL_BOND] = 1.0
    for edge in h.edges:
        if edge.attachment >= layout.f_attach:
            raise LayoutOverflowError(
                f"attachment {edge.attachment} exceeds f_attach={layout.f_attach}"
            )
        block = layout.bond_block(edge.target)
        data[edge.source, block.start + NULL_BOND] = 0.0
        data[edge.source, block.start + edge.bond_order] = 1.0
        data[edge.source, layout.attach_block(edge.target).start + edge.attachment] = 1.0
    return GraphTokenMatrix(data, layout, h.n)


def _onehot_index(row: np.ndarray, what: str) -> int:
    hits = np.flatnonzero(row == 1.0)
    if len(hits) != 1 or not np.all((row == 0.0) | (row == 1.0)):
        raise InvalidOneHotError(f"{what} block is not a valid one-hot")
    return int(hits[0])


def defeaturize(mat: GraphTokenMatrix, layout: FeatureLayout) -> MotifGraph:
    """Strict inverse of :func:`featurize`; every block must be well formed."""
    if mat.layout != layout:
        raise LayoutOverflowError("matrix layout disagrees with the requested layout")
    n = mat.n
    nodes = tuple(_onehot_index(mat.data[i, : layout.f_motif], f"motif row {i}") for i in range(n))
    bond = np.zeros((n, layout.n_max), dtype=int)
    for i in range(n):
        for j in range(layout.n_max):
            bond[i, j] = _onehot_index(mat.data[i, layout.bond_block(j)], f"bond ({i},{j})")
    for i in range(n):
        if bond[i, i] != NULL_BOND:
            raise InconsistentBondBlocksError(f"diagonal bond block ({i},{i}) is not null")
        for j in range(layout.n_max):
            if j < n:
                if bond[i, j] != bond[j, i]:
                    raise InconsistentBondBlocksError(
                        f"bond blocks ({i},{j}) and ({j},{i}) disagree"
                    )
            elif bond[i, j] != NULL_BOND:
                raise InconsistentBondBlocksError(f"padding bond block ({i},{j}) is not null")
    edges = []
    for i in range(n):
        for j in range(layout.n_max):
            attach_row = mat.data[i, layout.attach_block(j)]
            if j < n and i != j and bond[i, j] != NULL_BOND:
                attachment = _onehot_index(attach_row, f"attachment ({i},{j})")
                edges.append(DirectedEdge(i, j, int(bond[i, j]), attachment))
            else:
                if np.any(attach_row != 0.0):
                    raise InvalidOneHotError(
                        f"attachment block ({i},{j}) must be all-zero for a null bond"
                    )
    return MotifGraph(nodes, tuple(edges))


# ---------------------------------------------------------------------------
# Encoded-corpus records
# ---------------------------------------------------------------------------

ENCODED_FORMAT = "motifdiff-encoded"
ENCODED_VERSION = 1


def motif_graph_to_record(h: MotifGraph) -> dict:
    return {
        "motifs": list(h.nodes),
        "edges": [[e.source, e.target, e.bond_order, e.attachment] for e in h.edges],
    }


def motif_graph_from_record(record: dict) -> MotifGraph:
    return MotifGraph(
        tuple(record["motifs"]),
        tuple(DirectedEdge(*edge) for edge in record["edges"]),
    )


def write_encoded_corpus(path, graphs, vocab_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as handle:
        header = {"format": ENCODED_FORMAT, "version": ENCODED_VERSION, "vocab_hash": vocab_hash}
        handle.write(json.dumps(header, separators=(",", ":")) + "\n")
        for h in graphs:
            handle.write(json.dumps(motif_graph_to_record(h), separators=(",", ":")) + "\n")


def read_encoded_corpus(path) -> list[MotifGraph]:
    graphs = []
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline()
        header = json.loads(first) if first.strip() else {}
        if header.get("format") != ENCODED_FORMAT:
            raise ValueError("not an encoded-corpus file")
        for line in handle:
            line = line.strip()
            if line:
                graphs.append(motif_graph_from_record(json.loads(line)))
    return graphs


# ---------------------------------------------------------------------------
# Estimator-style wrappers
# ---------------------------------------------------------------------------


class MotifTokenizer(BaseEstimator, TransformerMixin):
    """Vocabulary trainer and tokenizer with a fit/transform surface.

    ``fit`` trains the motif vocabulary on molecules (graphs or SMILES
    strings), ``transform`` encodes to motif graphs, and
    ``inverse_transform`` reconstructs the molecules.
    """

    def __init__(self, k: int = 3000, k_ring: int = 300, min_frequency: int = 2):
        self.k = k
        self.k_ring = k_ring
        self.min_frequency = min_frequency

    def fit(self, X, y=None) -> "MotifTokenizer":
        corpus = [self._as_graph(x) for x in X]
        self.vocabulary_ = train_vocabulary(
            corpus, k=self.k, k_ring=self.k_ring, min_frequency=self.min_frequency
        )
        return self

    def transform(self, X) -> list[MotifGraph]:
        self._check_fitted()
        return [encode(self._as_graph(x), self.vocabulary_) for x in X]

    def inverse_transform(self, H) -> list[MolecularGraph]:
        self._check_fitted()
        return [decode(h, self.vocabulary_) for h in H]

    def _check_fitted(self) -> None:
        if not hasattr(self, "vocabulary_"):
            raise NotFittedError("MotifTokenizer is not fitted; call fit first")

    @staticmethod
    def _as_graph(x) -> MolecularGraph:
        return parse_smiles(x) if isinstance(x, str) else x


class GraphFeaturizer(BaseEstimator, TransformerMixin):
    """Maps motif graphs to dense token matrices under a fixed layout."""

    def __init__(self, vocabulary: MotifVocabulary | None = None, n_max: int | None = None):
        self.vocabulary = vocabulary
        self.n_max = n_max

    def fit(self, X, y=None) -> "GraphFeaturizer":
        if self.vocabulary is None:
            raise ValueError("GraphFeaturizer requires a vocabulary")
        n_max = self.n_max if self.n_max is not None else max((h.n for h in X), default=1)
        self.layout_ = FeatureLayout.for_vocabulary(self.vocabulary, n_max)
        return self

    def transform(self, X) -> list[GraphTokenMatrix]:
        self._check_fitted()
        return [featurize(h, self.layout_) for h in X]

    def inverse_transform(self, mats) -> list[MotifGraph]:
        self._check_fitted()
        return [defeaturize(m, self.layout_) for m in mats]

    def _check_fitted(self) -> None:
        if not hasattr(self, "layout_"):
            raise NotFittedError("GraphFeaturizer is not fitted; call fit first")
