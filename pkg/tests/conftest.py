import pytest

from rotnli import dataset as D


@pytest.fixture(scope="session")
def corpus():
    """Default generated corpus, seed 0: {mode: {split: [NliExample]}}."""
    return D.generate_corpus(D.synthesize_triples(0), D.SplitConfig())


@pytest.fixture(scope="session")
def corpus_vocab(corpus):
    from rotnli.encoder import Vocabulary

    return Vocabulary.from_texts(
        t for splits in corpus.values() for exs in splits.values() for ex in exs for t in (ex.premise, ex.hypothesis)
    )
