import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motifdiff.molgraph import (
    AtomNode,
    Bond,
    MolecularGraph,
    canonical_form,
    canonical_order,
    cycle_bonds,
    extract_ring_systems,
    graphs_equal,
)
from motifdiff.smiles import parse_smiles


def permuted(g: MolecularGraph, rng: np.random.Generator) -> MolecularGraph:
    order = rng.permutation(g.n_atoms).tolist()
    return g.relabeled(order)


# -- strategies --------------------------------------------------------------

elements = st.sampled_from(["C", "N", "O", "S", "F", "Cl"])


@st.composite
def molecular_graphs(draw, max_atoms=10):
    n = draw(st.integers(min_value=1, max_value=max_atoms))
    atoms = tuple(AtomNode(draw(elements)) for _ in range(n))
    bonds = []
    used = set()
    for i in range(1, n):
        j = draw(st.integers(min_value=0, max_value=i - 1))
        bonds.append(Bond(j, i, draw(st.sampled_from([1, 2, 3]))))
        used.add((j, i))
    extra = draw(st.integers(min_value=0, max_value=2))
    for _ in range(extra):
        if n < 3:
            break
        a = draw(st.integers(min_value=0, max_value=n - 2))
        b = draw(st.integers(min_value=a + 1, max_value=n - 1))
        if (a, b) not in used:
            used.add((a, b))
            bonds.append(Bond(a, b, draw(st.sampled_from([1, 2, 3]))))
    return MolecularGraph(atoms, tuple(bonds))


# -- canonical form ----------------------------------------------------------


def test_relabeling_invariance_simple():
    assert canonical_form(parse_smiles("CCO")) == canonical_form(parse_smiles("OCC"))


def test_determinism_repeated_calls():
    g = parse_smiles("C")
    first = canonical_form(g)
    assert all(canonical_form(parse_smiles("C")) == first for _ in range(1000))


def test_permutation_sweep_on_twenty_atom_molecule():
    g = parse_smiles("CC(C)Cc1ccc(cc1)C(C)C(=O)OCCN(C)C(=O)c1ccccc1")
    assert g.n_atoms >= 20
    reference = canonical_form(g)
    rng = np.random.default_rng(7)
    for _ in range(500):
        assert canonical_form(permuted(g, rng)) == reference


@given(molecular_graphs())
@settings(max_examples=150, deadline=None)
def test_canonical_form_invariant_under_permutation(g):
    rng = np.random.default_rng(0)
    assert canonical_form(permuted(g, rng)) == canonical_form(g)


def test_canonical_order_is_permutation():
    g = parse_smiles("c1ccc2ccccc2c1")
    order = canonical_order(g)
    assert sorted(order) == list(range(g.n_atoms))


def test_distinct_graphs_have_distinct_forms():
    assert canonical_form(parse_smiles("CCO")) != canonical_form(parse_smiles("CCN"))
    assert canonical_form(parse_smiles("CC=O")) != canonical_form(parse_smiles("CCO"))
    assert canonical_form(parse_smiles("[CH4]")) != canonical_form(parse_smiles("C"))


# -- graphs_equal ------------------------------------------------------------


def test_graphs_equal_reflexive_isomorphic_distinct():
    g = parse_smiles("CCO")
    assert graphs_equal(g, g)
    assert graphs_equal(parse_smiles("CCO"), parse_smiles("OCC"))
    assert not graphs_equal(parse_smiles("CCO"), parse_smiles("CCN"))


@given(st.lists(molecular_graphs(max_atoms=6), min_size=3, max_size=3))
@settings(max_examples=60, deadline=None)
def test_graphs_equal_is_an_equivalence_relation(graphs):
    a, b, c = graphs
    rng = np.random.default_rng(1)
    b_iso = permuted(a, rng)
    assert graphs_equal(a, a)
    assert graphs_equal(a, b_iso) and graphs_equal(b_iso, a)
    if graphs_equal(a, b) and graphs_equal(b, c):
        assert graphs_equal(a, c)


# -- ring systems ------------------------------------------------------------


def test_acyclic_chain_has_no_ring_systems():
    assert extract_ring_systems(parse_smiles("CCCC")) == []


def test_single_triangle():
    systems = extract_ring_systems(parse_smiles("C1CC1"))
    assert len(systems) == 1
    assert len(systems[0].atom_indices) == 3
    assert len(systems[0].bond_indices) == 3


def test_naphthalene_is_one_fused_system():
    g = parse_smiles("c1ccc2ccccc2c1")
    systems = extract_ring_systems(g)
    assert len(systems) == 1
    assert len(systems[0].atom_indices) == 10
    assert len(systems[0].bond_indices) == 11


def _cycle_bonds_oracle(g: MolecularGraph) -> set[int]:
    """A bond is on a cycle iff removing it leaves its endpoints connected."""
    result = set()
    for index, bond in enumerate(g.bonds):
        adjacency = {i: set() for i in range(g.n_atoms)}
        for other in g.bonds:
            if other is not bond:
                adjacency[other.a].add(other.b)
                adjacency[other.b].add(other.a)
        seen, stack = {bond.a}, [bond.a]
        while stack:
            u = stack.pop()
            for v in adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if bond.b in seen:
            result.add(index)
    return result


@pytest.mark.parametrize(
    "smiles",
    [
        "c1ccc2ccccc2c1",
        "C1CC1CC2CCC2",
        "c1ccc(cc1)C2CCN(CC2)C(=O)C3CC3",
        "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
        "C1CC2(C1)CCC2",
    ],
)
def test_ring_systems_match_cycle_bond_oracle(smiles):
    g = parse_smiles(smiles)
    expected = _cycle_bonds_oracle(g)
    assert cycle_bonds(g) == expected
    systems = extract_ring_systems(g)
    union = set()
    for system in systems:
        assert not union & system.atom_indices  # pairwise disjoint atoms
        union |= system.atom_indices
    all_bonds = set()
    for system in systems:
        for bi in system.bond_indices:
            bond = g.bonds[bi]
            assert bond.a in system.atom_indices and bond.b in system.atom_indices
        all_bonds |= system.bond_indices
    assert all_bonds == expected


# -- construction validation -------------------------------------------------


def test_bond_validation():
    with pytest.raises(ValueError):
        Bond(1, 1)
    with pytest.raises(ValueError):
        Bond(0, 1, order=5)
    with pytest.raises(ValueError):
        MolecularGraph((AtomNode("C"),), (Bond(0, 1),))
    with pytest.raises(ValueError):
        MolecularGraph(
            (AtomNode("C"), AtomNode("C")), (Bond(0, 1), Bond(1, 0, 2))
        )


def test_atom_validation():
    with pytest.raises(ValueError):
        AtomNode("Xx")
    with pytest.raises(ValueError):
        AtomNode("C", hydrogens=-1)
    assert AtomNode("*").element == "*"
