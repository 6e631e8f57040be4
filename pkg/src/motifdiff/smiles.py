"""SMILES subset parser, kekulization, and canonical writer.

Supported notation: organic-subset and bracket atoms, branches, ring
closures (digits and %nn), bond symbols ``- = # :``, aromatic lowercase
atoms, and the ``*`` polymerization point.  Disconnection dots are
rejected.  Stereo marks, isotopes, and atom-class tags are stripped with a
warning.  Aromatic notation is resolved to alternating single/double bonds
before a graph is returned, so every bond order is one of {1, 2, 3}.
Parsing and writing are pure functions and thread-safe.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import networkx as nx

from .molgraph import (
    SINGLE,
    DOUBLE,
    TRIPLE,
    AtomNode,
    Bond,
    MolecularGraph,
    canonical_order,
    canonical_ranks,
    labeled_canonical_order,
)
from .periodic import (
    AROMATIC_BRACKET,
    AROMATIC_ORGANIC,
    ORGANIC_SUBSET,
    SYMBOL_INDEX,
    WILDCARD,
)

LOGGER = logging.getLogger(__name__)

AROMATIC = 4  # internal bond-order sentinel, eliminated by kekulize()

_BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}

_BRACKET = re.compile(
    r"(?P<isotope>\d+)?"
    r"(?P<symbol>se|as|[A-Z][a-z]?|[bcnops]|\*)"
    r"(?P<stereo>@{1,2})?"
    r"(?P<hcount>H\d*)?"
    r"(?P<charge>\+{1,3}|-{1,3}|[+-]\d{1,2})?"
    r"(?P<cls>:\d+)?",
    re.ASCII,
)


class ParseError(ValueError):
    """Malformed SMILES; carries the character offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnsupportedFeatureError(ParseError):
    """Input uses notation outside the supported dialect."""


class KekulizationError(ValueError):
    """No valid alternating single/double assignment exists."""


@dataclass(frozen=True)
class AromaticForm:
    """Parse result before kekulization: bonds may carry the aromatic sentinel."""

    atoms: tuple[AtomNode, ...]
    bonds: tuple[tuple[int, int, int], ...]
    aromatic_atoms: frozenset[int]

    @property
    def has_aromatic(self) -> bool:
        return bool(self.aromatic_atoms) or any(o == AROMATIC for _, _, o in self.bonds)


@dataclass
class _PendingAtom:
    element: str
    charge: int
    hydrogens: int | None
    aromatic: bool


def parse_smiles(text: str) -> MolecularGraph:
    """Parse one SMILES string into a kekulized :class:`MolecularGraph`."""
    form = parse_aromatic_form(text)
    return kekulize(form)


def parse_aromatic_form(text: str) -> AromaticForm:
    """Parse into the intermediate form that still carries aromatic flags."""
    if not text:
        raise ParseError("empty input", 0)
    atoms: list[_PendingAtom] = []
    bonds: list[tuple[int, int, int]] = []
    bonded: set[tuple[int, int]] = set()
    prev: int | None = None
    branch_stack: list[tuple[int, int]] = []
    pending: int | None = None
    ring_open: dict[int, tuple[int, int | None, int]] = {}

    def add_bond(a: int, b: int, order: int | None, pos: int) -> None:
        if a == b:
            raise ParseError("ring bond to the same atom", pos)
        key = (min(a, b), max(a, b))
        if key in bonded:
            raise ParseError("duplicate bond between atoms", pos)
        bonded.add(key)
        if order is None:
            order = AROMATIC if atoms[a].aromatic and atoms[b].aromatic else SINGLE
        bonds.append((key[0], key[1], order))

    def new_atom(atom: _PendingAtom, pos: int) -> None:
        nonlocal prev, pending
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending, pos)
        prev = idx
        pending = None

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == ".":
            raise UnsupportedFeatureError("disconnected structures ('.') are not supported", i)
        if ch in _BOND_SYMBOLS:
            if pending is not None:
                raise ParseError("two bond symbols in a row", i)
            pending = _BOND_SYMBOLS[ch]
            i += 1
            continue
        if ch in "/\\":
            LOGGER.warning("stripping bond stereo mark %r at offset %d", ch, i)
            if pending is not None:
                raise ParseError("two bond symbols in a row", i)
            pending = SINGLE
            i += 1
            continue
        if ch == "(":
            if prev is None:
                raise ParseError("branch opened before any atom", i)
            if pending is not None:
                raise ParseError("bond symbol before '('", i)
            branch_stack.append((prev, i))
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise ParseError("unmatched ')'", i)
            if pending is not None:
                raise ParseError("dangling bond symbol before ')'", i)
            prev = branch_stack.pop()[0]
            i += 1
            continue
        if ch in "0123456789" or ch == "%":
            if ch == "%":
                if i + 2 >= n or not all(c in "0123456789" for c in text[i + 1 : i + 3]):
                    raise ParseError("'%' ring closure needs two digits", i)
                num = int(text[i + 1 : i + 3])
                width = 3
            else:
                num = int(ch)
                width = 1
            if prev is None:
                raise ParseError("ring closure before any atom", i)
            if num in ring_open:
                other, other_pending, _ = ring_open.pop(num)
                if pending is not None and other_pending is not None and pending != other_pending:
                    raise ParseError("conflicting bond orders on ring closure", i)
                order = pending if pending is not None else other_pending
                add_bond(other, prev, order, i)
            else:
                ring_open[num] = (prev, pending, i)
            pending = None
            i += width
            continue
        if ch == "[":
            end = text.find("]", i)
            if end < 0:
                raise ParseError("unclosed bracket atom", i)
            new_atom(_parse_bracket(text[i + 1 : end], i), i)
            i = end + 1
            continue
        if ch == "*":
            new_atom(_PendingAtom(WILDCARD, 0, None, False), i)
            i += 1
            continue
        two = text[i : i + 2]
        if two in ("Cl", "Br"):
            new_atom(_PendingAtom(two, 0, None, False), i)
            i += 2
            continue
        if ch in "BCNOPSFI":
            new_atom(_PendingAtom(ch, 0, None, False), i)
            i += 1
            continue
        if ch in AROMATIC_ORGANIC:
            new_atom(_PendingAtom(AROMATIC_ORGANIC[ch], 0, None, True), i)
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", i)

    if branch_stack:
        raise ParseError("unclosed branch", branch_stack[-1][1])
    if ring_open:
        raise ParseError("unclosed ring closure", min(pos for _, _, pos in ring_open.values()))
    if pending is not None:
        raise ParseError("dangling bond symbol at end of input", n - 1)
    if not atoms:
        raise ParseError("no atoms in input", 0)

    nodes = tuple(AtomNode(a.element, a.charge, a.hydrogens) for a in atoms)
    aromatic = frozenset(i for i, a in enumerate(atoms) if a.aromatic)
    return AromaticForm(nodes, tuple(bonds), aromatic)


def _parse_bracket(body: str, pos: int) -> _PendingAtom:
    match = _BRACKET.fullmatch(body)
    if match is None:
        raise ParseError(f"malformed bracket atom [{body}]", pos)
    if match.group("isotope"):
        LOGGER.warning("stripping isotope label in [%s]", body)
    if match.group("stereo"):
        LOGGER.warning("stripping stereo descriptor in [%s]", body)
    if match.group("cls"):
        LOGGER.warning("stripping atom-class tag in [%s]", body)
    symbol = match.group("symbol")
    aromatic = False
    if symbol in AROMATIC_BRACKET:
        symbol = AROMATIC_BRACKET[symbol]
        aromatic = True
    if symbol != WILDCARD and symbol not in SYMBOL_INDEX:
        raise ParseError(f"unknown element {symbol!r}", pos)
    hcount = match.group("hcount")
    hydrogens = 0
    if hcount is not None:
        hydrogens = int(hcount[1:]) if len(hcount) > 1 else 1
    charge_text = match.group("charge")
    charge = 0
    if charge_text:
        if charge_text[0] in "+-" and charge_text[1:].isdigit():
            charge = int(charge_text)
        else:
            charge = len(charge_text) * (1 if charge_text[0] == "+" else -1)
    return _PendingAtom(symbol, charge, hydrogens, aromatic)


# ---------------------------------------------------------------------------
# Kekulization
# ---------------------------------------------------------------------------


def _needs_pi_bond(form: AromaticForm, index: int, order_sum_explicit: dict[int, int]) -> bool:
    """Whether an aromatic atom must receive exactly one double bond.

    The decision follows the electron each atom donates to the conjugated
    system: donors of a single electron pair up in the matching, lone-pair
    donors and empty-orbital atoms do not.
    """
    if order_sum_explicit.get(index, 0) > 0:
        return False  # the pi electron already sits in an explicit multiple bond
    atom = form.atoms[index]
    degree = sum(1 for a, b, _ in form.bonds if index in (a, b))
    h = atom.hydrogens or 0
    connections = degree + h
    el, q = atom.element, atom.charge
    if el == "C":
        return q == 0
    if el in ("N", "P", "As"):
        if q == 0:
            return connections <= 2
        if q == 1:
            return connections >= 3
        return False
    if el in ("O", "S", "Se"):
        return q == 1
    return False


def kekulize(form: AromaticForm) -> MolecularGraph:
    """Resolve aromatic notation to single/double bonds.

    Non-aromatic input converts unchanged.  Raises
    :class:`KekulizationError` when the atoms that need a double bond admit
    no perfect matching over the aromatic bonds.
    """
    if not form.has_aromatic:
        return MolecularGraph(form.atoms, tuple(Bond(a, b, o) for a, b, o in form.bonds))

    explicit_multi: dict[int, int] = {}
    for a, b, order in form.bonds:
        if order in (DOUBLE, TRIPLE):
            explicit_multi[a] = explicit_multi.get(a, 0) + order - 1
            explicit_multi[b] = explicit_multi.get(b, 0) + order - 1

    needs = {
        i
        for i in range(len(form.atoms))
        if i in form.aromatic_atoms and _needs_pi_bond(form, i, explicit_multi)
    }

    # Canonical ranks of the flagged form make the matching, and therefore
    # the assignment, independent of how the input string was written.
    keys = [
        (
            a.element + ("'" if i in form.aromatic_atoms else ""),
            a.charge,
            -1 if a.hydrogens is None else a.hydrogens,
        )
        for i, a in enumerate(form.atoms)
    ]
    adjacency: list[list[tuple[int, int]]] = [[] for _ in form.atoms]
    for a, b, order in form.bonds:
        adjacency[a].append((b, order))
        adjacency[b].append((a, order))
    _, order_out = labeled_canonical_order(keys, [tuple(sorted(x)) for x in adjacency])
    rank = {atom: r for r, atom in enumerate(order_out)}

    pi_graph = nx.Graph()
    pi_graph.add_nodes_from(sorted(rank[i] for i in needs))
    for a, b, order in sorted(form.bonds, key=lambda e: (rank[e[0]], rank[e[1]])):
        if order == AROMATIC and a in needs and b in needs:
            pi_graph.add_edge(rank[a], rank[b])
    matching = nx.max_weight_matching(pi_graph, maxcardinality=True)
    matched_ranks = {u for pair in matching for u in pair}
    unmatched = [i for i in needs if rank[i] not in matched_ranks]
    if unmatched:
        raise KekulizationError(
            f"no perfect matching for aromatic system (atoms {sorted(unmatched)})"
        )
    double_pairs = {frozenset(pair) for pair in matching}

    bonds = []
    for a, b, order in form.bonds:
        if order == AROMATIC:
            order = DOUBLE if frozenset((rank[a], rank[b])) in double_pairs else SINGLE
        bonds.append(Bond(a, b, order))
    return MolecularGraph(form.atoms, tuple(bonds))


# ---------------------------------------------------------------------------
# Writer
# ---------------------------------------------------------------------------


def write_smiles(g: MolecularGraph) -> str:
    """Canonical SMILES for a connected graph.

    Equal graphs (under :func:`graphs_equal`) emit identical strings, and the
    output reparses to an equal graph for any parser-producible input.
    """
    if g.n_atoms == 0:
        raise ValueError("cannot write an empty graph")
    if not g.is_connected():
        raise ValueError("writer requires a connected graph ('.' is outside the dialect)")

    ranks = canonical_ranks(g)
    root = canonical_order(g)[0]

    # DFS spanning tree with neighbors in canonical-rank order; non-tree
    # bonds become ring closures.
    children: dict[int, list[int]] = {i: [] for i in range(g.n_atoms)}
    closures: dict[int, list[tuple[int, int]]] = {i: [] for i in range(g.n_atoms)}
    seen = {root}
    recorded: set[tuple[int, int]] = set()
    stack = [(root, iter(sorted(g.adjacency[root], key=lambda x: ranks[x[0]])))]
    parent = {root: None}
    while stack:
        u, it = stack[-1]
        advanced = False
        for v, order in it:
            if v not in seen:
                seen.add(v)
                parent[v] = u
                children[u].append(v)
                stack.append((v, iter(sorted(g.adjacency[v], key=lambda x: ranks[x[0]]))))
                advanced = True
                break
            if v != parent[u]:
                key = (min(u, v), max(u, v))
                if key not in recorded:
                    recorded.add(key)
                    closures[u].append((v, order))
                    closures[v].append((u, order))
        if not advanced:
            stack.pop()

    bond_order = {}
    for bond in g.bonds:
        bond_order[(bond.a, bond.b)] = bond.order
        bond_order[(bond.b, bond.a)] = bond.order

    tokens: list[str] = []
    closure_numbers: dict[tuple[int, int], int] = {}
    free_numbers: list[int] = []
    next_number = 1

    def closure_token(u: int, v: int, order: int) -> str:
        nonlocal next_number
        key = (min(u, v), max(u, v))
        if key in closure_numbers:
            num = closure_numbers.pop(key)
            free_numbers.append(num)
            bond = ""
        else:
            if free_numbers:
                free_numbers.sort()
                num = free_numbers.pop(0)
            else:
                num = next_number
                next_number += 1
            closure_numbers[key] = num
            bond = _bond_token(order)
        digit = str(num) if num < 10 else f"%{num:02d}"
        return bond + digit

    work: list[tuple[str, ...]] = [("atom", root)]
    while work:
        item = work.pop()
        kind = item[0]
        if kind == "text":
            tokens.append(item[1])
            continue
        u = item[1]
        tokens.append(_atom_token(g.atoms[u]))
        for v, order in sorted(closures[u], key=lambda x: ranks[x[0]]):
            tokens.append(closure_token(u, v, order))
        kids = children[u]
        tail: list[tuple[str, ...]] = []
        for i, v in enumerate(kids):
            bond = _bond_token(bond_order[(u, v)])
            if i < len(kids) - 1:
                tail.append(("text", "(" + bond))
                tail.append(("atom", v))
                tail.append(("text", ")"))
            else:
                if bond:
                    tail.append(("text", bond))
                tail.append(("atom", v))
        work.extend(reversed(tail))

    return "".join(tokens)


def _bond_token(order: int) -> str:
    return {SINGLE: "", DOUBLE: "=", TRIPLE: "#"}[order]


def _atom_token(atom: AtomNode) -> str:
    bare_ok = atom.element in ORGANIC_SUBSET or atom.element == WILDCARD
    if bare_ok and atom.charge == 0 and atom.hydrogens is None:
        return atom.element
    h = atom.hydrogens or 0
    if h == 0:
        h_part = ""
    elif h == 1:
        h_part = "H"
    else:
        h_part = f"H{h}"
    q = atom.charge
    if q == 0:
        q_part = ""
    elif q == 1:
        q_part = "+"
    elif q == -1:
        q_part = "-"
    else:
        q_part = f"{q:+d}"
    return f"[{atom.element}{h_part}{q_part}]"


# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------


def read_corpus(path) -> list[MolecularGraph]:
    """Read a corpus file: one SMILES per line, tab-separated extras ignored."""
    graphs = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            graphs.append(parse_smiles(line.split("\t")[0]))
    return graphs


def iter_corpus_lines(path):
    """Yield (line_number, smiles) for non-empty corpus lines."""
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if line:
                yield number, line.split("\t")[0]
