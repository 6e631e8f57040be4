"""Motif-level molecular tokenization, discrete graph diffusion, and
demonstration-context tooling."""

__version__ = "0.1.0"

from .molgraph import (
    AtomNode,
    Bond,
    MolecularGraph,
    RingSystem,
    canonical_form,
    canonical_order,
    extract_ring_systems,
    graphs_equal,
)
from .smiles import (
    KekulizationError,
    ParseError,
    UnsupportedFeatureError,
    kekulize,
    parse_smiles,
    write_smiles,
)
from .vocab import (
    EdgeVocabulary,
    Motif,
    MotifVocabulary,
    build_edge_vocabulary,
    seed_rings,
    train_vocabulary,
)
from .tokenizer import (
    DirectedEdge,
    FeatureLayout,
    GraphFeaturizer,
    GraphTokenMatrix,
    MotifGraph,
    MotifTokenizer,
    decode,
    defeaturize,
    encode,
    featurize,
)
from .diffusion import (
    DenoiserOutput,
    LossBreakdown,
    Marginals,
    OracleDenoiser,
    Schedule,
    TransitionSet,
    UniformDenoiser,
    alpha_bar,
    assemble_graph_transition,
    build_transitions,
    estimate_marginals,
    forward_sample,
    posterior,
    pretrain_loss,
    reverse_sample,
)
from .context import (
    AssayRecord,
    DemoGroups,
    Demonstration,
    Task,
    build_polymer_tasks,
    build_tasks,
    normalize_polymer,
    pack_context,
    partition_demos,
    pchembl_score,
)
from .metrics import (
    Fingerprint,
    consistency_score,
    evaluate_generation,
    filter_by_consistency,
    fingerprint,
    int_div,
    tanimoto,
)
