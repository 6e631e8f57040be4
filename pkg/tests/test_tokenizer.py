import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from motifdiff.molgraph import canonical_form, graphs_equal
from motifdiff.smiles import parse_smiles, write_smiles
from motifdiff.tokenizer import (
    DanglingAttachmentError,
    DirectedEdge,
    DisconnectedInputError,
    FeatureLayout,
    GraphFeaturizer,
    GraphTokenMatrix,
    InconsistentBondBlocksError,
    InvalidOneHotError,
    LayoutOverflowError,
    MissingReverseEdgeError,
    MotifGraph,
    MotifTokenizer,
    UnknownMotifIdError,
    decode,
    defeaturize,
    encode,
    featurize,
    motif_graph_from_record,
    motif_graph_to_record,
)
from motifdiff.vocab import train_vocabulary
from conftest import corpus_lines


@pytest.fixture(scope="module")
def atom_vocab():
    return train_vocabulary([parse_smiles("C")], k=121, k_ring=0, min_frequency=1)


# -- encode --------------------------------------------------------------------


def test_single_atom_encodes_to_one_node(atom_vocab):
    h = encode(parse_smiles("C"), atom_vocab)
    assert h.n == 1 and not h.edges


def test_trained_chain_collapses_to_one_motif():
    vocabulary = train_vocabulary([parse_smiles("CCC")], k=121, k_ring=0, min_frequency=1)
    h = encode(parse_smiles("CCC"), vocabulary)
    assert h.n == 1 and not h.edges


def test_unseen_molecule_falls_back_to_atoms(atom_vocab):
    g = parse_smiles("CCN")
    h = encode(g, atom_vocab)
    assert h.n == 3
    assert graphs_equal(decode(h, atom_vocab), g)


def test_rare_ring_is_decomposed_to_atoms(atom_vocab):
    g = parse_smiles("C1CC1")
    h = encode(g, atom_vocab)
    assert h.n == 3
    assert graphs_equal(decode(h, atom_vocab), g)


def test_disconnected_input_rejected(atom_vocab):
    from motifdiff.molgraph import AtomNode, MolecularGraph

    with pytest.raises(DisconnectedInputError):
        encode(MolecularGraph((AtomNode("C"), AtomNode("C")), ()), atom_vocab)


def test_unknown_atom_variant_is_reported(atom_vocab):
    with pytest.raises(UnknownMotifIdError):
        encode(parse_smiles("[NH4+]"), atom_vocab)


def test_compression_never_exceeds_atom_count(mini_corpus, mini_vocab):
    for g in mini_corpus:
        h = encode(g, mini_vocab)
        assert h.n <= g.n_atoms


def test_direction_pairing_structure(mini_encoded):
    for h in mini_encoded:
        directed = {(e.source, e.target): e for e in h.edges}
        assert len(directed) == len(h.edges)
        for (i, j), e in directed.items():
            assert (j, i) in directed
            assert directed[(j, i)].bond_order == e.bond_order


def test_roundtrip_sweep(mini_corpus, mini_vocab):
    for g in mini_corpus:
        assert graphs_equal(decode(encode(g, mini_vocab), mini_vocab), g)


@pytest.mark.parametrize(
    "smiles",
    [
        "[NH4+]",
        "C[N+](C)(C)CCCC[N+](C)(C)C",
        "c1cc[nH+]cc1",
        "c1ccc2c(c1)c1ccccc1c1ccccc21",
        "*C(*)C(*)C*",
        "C1CC2CCC1CC2",
        "C1CC2(CC1)CC2",
        "C12C3C4C1C5C2C3C45",  # cubane
        "[O-]C(=O)c1ccccc1[N+](=O)[O-]",
        "C(F)(F)(F)c1ccc(S(=O)(=O)N2CCOCC2)cc1",
        "c1cnc2[nH]ccc2c1",
        "O=S(=O)(O)O",
        "C%11CCCCC%11",
        "[CH3]C([CH2]C)[CH]C",
    ],
)
def test_roundtrip_on_awkward_structures(smiles):
    g = parse_smiles(smiles)
    vocabulary = train_vocabulary([g], k=200, k_ring=10, min_frequency=1)
    assert graphs_equal(decode(encode(g, vocabulary), vocabulary), g)


def test_training_corpus_reencodes_with_vocabulary_ids_only(mini_corpus, mini_vocab):
    for g in mini_corpus:
        h = encode(g, mini_vocab)
        assert all(0 <= node < len(mini_vocab) for node in h.nodes)


# -- decode --------------------------------------------------------------------


def test_two_motif_join_is_ethane(atom_vocab):
    carbon = atom_vocab.id_of(canonical_form(parse_smiles("C")))
    h = MotifGraph(
        (carbon, carbon),
        (DirectedEdge(0, 1, 1, 0), DirectedEdge(1, 0, 1, 0)),
    )
    assert write_smiles(decode(h, atom_vocab)) == "CC"


def test_decode_error_unknown_motif(atom_vocab):
    h = MotifGraph((10_000,), ())
    with pytest.raises(UnknownMotifIdError):
        decode(h, atom_vocab)


def test_decode_error_dangling_attachment(atom_vocab):
    carbon = atom_vocab.id_of(canonical_form(parse_smiles("C")))
    h = MotifGraph(
        (carbon, carbon),
        (DirectedEdge(0, 1, 1, 5), DirectedEdge(1, 0, 1, 0)),
    )
    with pytest.raises(DanglingAttachmentError):
        decode(h, atom_vocab)


def test_decode_error_missing_reverse(atom_vocab):
    carbon = atom_vocab.id_of(canonical_form(parse_smiles("C")))
    with pytest.raises(MissingReverseEdgeError):
        decode(MotifGraph((carbon, carbon), (DirectedEdge(0, 1, 1, 0),)), atom_vocab)
    with pytest.raises(MissingReverseEdgeError):
        decode(
            MotifGraph(
                (carbon, carbon),
                (DirectedEdge(0, 1, 1, 0), DirectedEdge(1, 0, 2, 0)),
            ),
            atom_vocab,
        )


# -- featurize / defeaturize -----------------------------------------------------


def test_layout_width_formula(mini_vocab):
    layout = FeatureLayout.for_vocabulary(mini_vocab, n_max=12)
    assert layout.width == len(mini_vocab) + 12 * 4 + 12 * layout.f_attach
    assert layout.f_attach == mini_vocab.max_motif_size


def test_featurize_single_node(atom_vocab):
    h = encode(parse_smiles("C"), atom_vocab)
    layout = FeatureLayout.for_vocabulary(atom_vocab, n_max=4)
    mat = featurize(h, layout)
    assert mat.data.shape == (1, layout.width)
    assert mat.motif_ids().tolist() == list(h.nodes)
    assert (mat.bond_categories() == 0).all()
    assert (mat.attachment_blocks() == 0).all()


def test_featurize_mirror_blocks(atom_vocab):
    h = encode(parse_smiles("CC"), atom_vocab)
    layout = FeatureLayout.for_vocabulary(atom_vocab, n_max=4)
    mat = featurize(h, layout)
    cats = mat.bond_categories()
    assert cats[0, 1] == 1 and cats[1, 0] == 1
    assert cats[0, 0] == 0 and cats[1, 1] == 0


def test_featurize_defeaturize_identity(mini_encoded, mini_vocab):
    n_max = max(h.n for h in mini_encoded)
    layout = FeatureLayout.for_vocabulary(mini_vocab, n_max=n_max)
    for h in mini_encoded:
        assert defeaturize(featurize(h, layout), layout) == h


def test_layout_overflow(atom_vocab):
    h = encode(parse_smiles("CCCCC"), atom_vocab)
    layout = FeatureLayout.for_vocabulary(atom_vocab, n_max=3)
    with pytest.raises(LayoutOverflowError):
        featurize(h, layout)


def test_defeaturize_inconsistent_bond_blocks(atom_vocab):
    h = encode(parse_smiles("CC"), atom_vocab)
    layout = FeatureLayout.for_vocabulary(atom_vocab, n_max=4)
    mat = featurize(h, layout)
    block = layout.bond_block(0)
    mat.data[1, block] = 0.0
    mat.data[1, block.start] = 1.0  # claim null while the mirror says single
    with pytest.raises(InconsistentBondBlocksError):
        defeaturize(mat, layout)


def test_defeaturize_invalid_one_hot(atom_vocab):
    h = encode(parse_smiles("C"), atom_vocab)
    layout = FeatureLayout.for_vocabulary(atom_vocab, n_max=2)
    mat = featurize(h, layout)
    mat.data[0, 0:4] = 0.5
    with pytest.raises(InvalidOneHotError):
        defeaturize(mat, layout)


def test_defeaturize_fuzz_never_crashes(atom_vocab):
    layout = FeatureLayout.for_vocabulary(atom_vocab, n_max=3)
    rng = np.random.default_rng(5)
    outcomes = {"ok": 0, "rejected": 0}
    for _ in range(200):
        data = (rng.random((2, layout.width)) < 0.1).astype(float)
        mat = GraphTokenMatrix(data, layout, 2)
        try:
            h = defeaturize(mat, layout)
        except (InvalidOneHotError, InconsistentBondBlocksError):
            outcomes["rejected"] += 1
        else:
            outcomes["ok"] += 1
            decode(h, atom_vocab)
    assert outcomes["rejected"] > 0


def test_encoded_record_roundtrip(mini_encoded):
    for h in mini_encoded[:20]:
        assert motif_graph_from_record(motif_graph_to_record(h)) == h


def test_parallel_edge_guard_fires_on_forced_ring_merges():
    """Merging around an exploded ring must hit the ambiguity guard.

    Real encodings never split a ring, so this drives the internal state
    directly: collapsing a six-cycle pair by pair eventually asks two
    instances to share two bonds.
    """
    from motifdiff._merge import (
        AmbiguousEncodingError,
        FragmentStore,
        MoleculeState,
        SignatureTable,
    )

    g = parse_smiles("C1CCCCC1")
    store = FragmentStore()
    table = SignatureTable(store)
    state = MoleculeState(g, store)
    (ring_instance,) = list(state.inst_key)
    state.explode(ring_instance, store)
    with pytest.raises(AmbiguousEncodingError):
        for _ in range(6):
            ia, ib = next(iter(state.iter_pairs()))
            sig, a_is_left = state.signature(ia, ib)
            state.merge(ia, ib, table.template(sig), a_is_left)


# -- estimators ------------------------------------------------------------------


def test_motif_tokenizer_estimator_roundtrip():
    smiles = corpus_lines(40)
    tok = MotifTokenizer(k=200, k_ring=5, min_frequency=2)
    assert clone(tok).get_params()["k"] == 200
    with pytest.raises(NotFittedError):
        tok.transform(smiles)
    tok.fit(smiles)
    encoded = tok.transform(smiles)
    decoded = tok.inverse_transform(encoded)
    for text, graph in zip(smiles, decoded):
        assert graphs_equal(parse_smiles(text), graph)


def test_graph_featurizer_estimator(mini_vocab, mini_encoded):
    feat = GraphFeaturizer(vocabulary=mini_vocab)
    with pytest.raises(NotFittedError):
        feat.transform(mini_encoded)
    mats = feat.fit(mini_encoded).transform(mini_encoded[:10])
    back = feat.inverse_transform(mats)
    assert back == mini_encoded[:10]
    assert feat.layout_.n_max == max(h.n for h in mini_encoded)


def test_estimator_params_follow_sklearn_conventions():
    tok = MotifTokenizer(k=500, k_ring=50, min_frequency=1)
    params = tok.get_params()
    assert params == {"k": 500, "k_ring": 50, "min_frequency": 1}
    tok.set_params(k=600)
    assert tok.k == 600
