import pathlib

import pytest

from motifdiff.smiles import parse_smiles
from motifdiff.vocab import train_vocabulary

DATA_DIR = pathlib.Path(__file__).resolve().parent.parent / "data"
CORPUS_PATH = DATA_DIR / "drug_like_10k.smi"


def corpus_lines(limit=None):
    with open(CORPUS_PATH, "r", encoding="utf-8") as handle:
        lines = [line.strip() for line in handle if line.strip()]
    return lines[:limit] if limit else lines


@pytest.fixture(scope="session")
def corpus_path():
    return CORPUS_PATH


@pytest.fixture(scope="session")
def mini_corpus():
    """First 200 bundled molecules, parsed once per session."""
    return [parse_smiles(s) for s in corpus_lines(200)]


@pytest.fixture(scope="session")
def mini_vocab(mini_corpus):
    """Small trained vocabulary shared by tokenizer/diffusion tests."""
    return train_vocabulary(mini_corpus, k=400, k_ring=25, min_frequency=2)


@pytest.fixture(scope="session")
def mini_encoded(mini_corpus, mini_vocab):
    from motifdiff.tokenizer import encode

    return [encode(g, mini_vocab) for g in mini_corpus]
