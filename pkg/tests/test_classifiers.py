import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_knn
from rotnli import dataset as D
from rotnli.classifiers import (
    FIXED,
    LEARNT,
    KnnConfig,
    LabelStore,
    build_store,
    classify_head,
    classify_nearest_label,
    example_labels,
    knn_classify,
    knn_classify_many,
    probe_pretrained,
)
from rotnli.encoder import Vocabulary, encode_single, init_params
from rotnli.metric import ComplexVector, PhaseVector, extract_label, hadamard_rotate, rotate_distance
from rotnli.objectives import HeadParams, LabelEmbeddingBank, init_head, init_label_bank


def random_store(rng, n, d, n_classes=2):
    return LabelStore(rng.uniform(-np.pi, np.pi, size=(n, d)), rng.integers(0, n_classes, size=n))


def rand_cv(rng, d):
    return ComplexVector(rng.normal(size=d), rng.normal(size=d))


# ---------------------------------------------------------------------------
# nearest label


def test_exact_rotation_picks_its_label():
    rng = np.random.default_rng(0)
    for seed in range(50):
        bank = init_label_bank(seed, 8)
        p = rand_cv(rng, 8)
        for c in (0, 1):
            assert classify_nearest_label(p, hadamard_rotate(p, bank[c]), bank) == c


def test_nearest_label_ties_go_to_entailment():
    bank = LabelEmbeddingBank(np.zeros((2, 3)))
    p = ComplexVector([1.0, 2.0, 3.0], [0.5, 0.0, -1.0])
    assert classify_nearest_label(p, p, bank) == 0


def test_nearest_label_matches_exhaustive_recomputation():
    rng = np.random.default_rng(1)
    for seed in range(200):
        bank, p, h = init_label_bank(seed, 4), rand_cv(rng, 4), rand_cv(rng, 4)
        d0, d1 = rotate_distance(p, h, bank[0]), rotate_distance(p, h, bank[1])
        assert classify_nearest_label(p, h, bank) == (0 if d0 <= d1 else 1)


# ---------------------------------------------------------------------------
# head


def test_head_argmax_and_tie():
    p = q = ComplexVector([0.0], [0.0])
    assert classify_head(HeadParams(np.zeros((2, 4)), np.array([2.0, -1.0])), p, q) == 0
    assert classify_head(HeadParams(np.zeros((2, 4)), np.array([-1.0, 2.0])), p, q) == 1
    assert classify_head(HeadParams(np.zeros((2, 4)), np.zeros(2)), p, q) == 0


def test_head_matches_independent_logits():
    rng = np.random.default_rng(2)
    for seed in range(100):
        head = init_head(seed, 3, scale=2.0)
        p, h = rand_cv(rng, 3), rand_cv(rng, 3)
        x = np.concatenate([p.realized(), h.realized()])
        z = [sum(w * v for w, v in zip(head.weight[c], x)) + head.bias[c] for c in range(2)]
        assert classify_head(head, p, h) == (0 if z[0] >= z[1] else 1)


# ---------------------------------------------------------------------------
# k-NN


def test_store_validation():
    with pytest.raises(ValueError):
        LabelStore(np.zeros((0, 3)), [])
    with pytest.raises(ValueError):
        LabelStore(np.zeros((2, 3)), [0])
    with pytest.raises(ValueError):
        LabelStore(np.zeros((1, 3)), [0], mode="other")
    with pytest.raises(ValueError):
        KnnConfig(0)


def test_exact_hit_with_k1():
    rng = np.random.default_rng(3)
    store = random_store(rng, 30, 6)
    for i in range(30):
        assert knn_classify(PhaseVector(store.thetas[i]), store, KnnConfig(1)) == store.classes[i]


def test_majority_of_three():
    # neighbors at distance ~0, ~0, small are E, E, C; a far C entry never votes
    thetas = np.array([[0.0, 0.0], [0.01, 0.0], [0.0, 0.02], [3.0, 3.0]])
    store = LabelStore(thetas, [0, 0, 1, 1])
    assert knn_classify(PhaseVector([0.0, 0.0]), store, KnnConfig(3)) == 0
    store = LabelStore(thetas, [1, 0, 0, 1])
    assert knn_classify(PhaseVector([0.0, 0.0]), store, KnnConfig(3)) == 0


def test_vote_tie_broken_by_summed_distance_then_ordinal():
    thetas = np.array([[0.0], [0.5], [0.1], [1.0]])
    # k=2 picks entries 0 (class 1) and 2 (class 0); class 1 is closer in total
    assert knn_classify(PhaseVector([0.0]), LabelStore(thetas, [1, 0, 0, 0]), KnnConfig(2)) == 1
    # identical rows make summed distances equal; the lower ordinal wins
    same = np.zeros((2, 3))
    assert knn_classify(PhaseVector([0.2, 0.1, 0.0]), LabelStore(same, [1, 0]), KnnConfig(2)) == 0


def test_distance_ties_keep_insertion_order():
    store = LabelStore(np.zeros((3, 2)), [1, 0, 0])
    assert knn_classify(PhaseVector([0.5, 0.5]), store, KnnConfig(1)) == 1


def test_k_larger_than_store_is_an_error():
    store = random_store(np.random.default_rng(0), 2, 3)
    with pytest.raises(ValueError, match="exceeds"):
        knn_classify(PhaseVector([0.0, 0.0, 0.0]), store, KnnConfig(3))
    with pytest.raises(ValueError):
        knn_classify_many(np.zeros((1, 3)), store, KnnConfig(3))


def test_k1_equals_nearest_neighbour_argmin():
    rng = np.random.default_rng(4)
    store = random_store(rng, 50, 5)
    for _ in range(200):
        q = PhaseVector(rng.uniform(-np.pi, np.pi, 5))
        dists = 1 - np.cos(store.thetas - q.theta).mean(axis=1)
        assert knn_classify(q, store, KnnConfig(1)) == store.classes[np.argmin(dists)]


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 2**31),
    st.integers(1, 40),
    st.integers(1, 6),
    st.integers(1, 9),
    st.integers(2, 3),
    st.booleans(),
)
def test_knn_agrees_with_brute_force(seed, n, d, k, n_classes, duplicate_rows):
    rng = np.random.default_rng(seed)
    k = min(k, n)
    store = random_store(rng, n, d, n_classes)
    if duplicate_rows and n > 1:
        # exact distance ties exercise the tie-break chain
        store = LabelStore(np.repeat(store.thetas[: (n + 1) // 2], 2, axis=0)[:n], store.classes, store.mode)
    queries = rng.uniform(-np.pi, np.pi, size=(20, d))
    many = knn_classify_many(queries, store, KnnConfig(k), chunk=7)
    for q, got in zip(queries, many):
        want = brute_force_knn(q, store.thetas, store.classes, k)
        assert knn_classify(PhaseVector(q), store, KnnConfig(k)) == want
        assert got == want


def test_store_file_round_trip(tmp_path):
    store = random_store(np.random.default_rng(5), 40, 7)
    store.save(tmp_path / "s.json")
    back = LabelStore.load(tmp_path / "s.json")
    assert back.thetas.tobytes() == store.thetas.tobytes()
    assert np.array_equal(back.classes, store.classes) and back.mode == store.mode
    q = np.random.default_rng(6).uniform(-np.pi, np.pi, size=(50, 7))
    assert np.array_equal(knn_classify_many(q, back), knn_classify_many(q, store))


def test_store_rejects_unknown_version(tmp_path):
    path = tmp_path / "s.json"
    random_store(np.random.default_rng(0), 3, 2).save(path)
    path.write_text(path.read_text().replace('"format_version": 1', '"format_version": 9'))
    with pytest.raises(ValueError, match="format"):
        LabelStore.load(path)


# ---------------------------------------------------------------------------
# store construction and the untrained probe


@pytest.fixture(scope="module")
def small(corpus):
    train = corpus[D.LEXICALIZED]["train"][:120]
    vocab = Vocabulary.from_texts(t for ex in train for t in (ex.premise, ex.hypothesis))
    return train, init_params(2, 8, vocab)


def test_store_preserves_cardinality_and_classes(small):
    train, params = small
    for mode in (FIXED, LEARNT):
        store = build_store(train, params, mode)
        assert len(store) == len(train) and store.mode == mode
        assert sorted(store.classes.tolist()) == sorted(ex.label_index for ex in train)
        again = build_store(train, params, mode)
        assert again.thetas.tobytes() == store.thetas.tobytes()


def test_fixed_store_entries_are_extracted_labels(small):
    train, params = small
    store = build_store(train[:10], params, FIXED)
    for ex, row in zip(train[:10], store.thetas):
        p = encode_single(params, params.vocab.tokenize(ex.premise))[0]
        h = encode_single(params, params.vocab.tokenize(ex.hypothesis))[0]
        assert np.allclose(np.cos(extract_label(p, h).theta - row), 1.0, rtol=0, atol=1e-12)


def test_degenerate_encoder_raises_instead_of_nan(small):
    train, params = small
    flat = init_params(0, 8, params.vocab, scale=0.0)
    with pytest.raises(ValueError, match="modulus"):
        build_store(train, flat, FIXED)


def test_empty_store_input():
    with pytest.raises(ValueError):
        build_store([], init_params(0, 4, 10))


def test_self_probe_is_perfect(small):
    train, params = small
    assert probe_pretrained(train, train, params) == 1.0


def test_untrained_probe_is_near_chance(corpus):
    lex = corpus[D.LEXICALIZED]
    texts = [t for split in lex.values() for ex in split for t in (ex.premise, ex.hypothesis)]
    params = init_params(0, 32, Vocabulary.from_texts(texts))
    test = lex["test"][:500]
    acc = probe_pretrained(test, lex["train"], params)
    assert 0.40 <= acc <= 0.60
    assert probe_pretrained(test, lex["train"], params) == acc
    with pytest.raises(ValueError):
        probe_pretrained([], lex["train"], params)


def test_example_labels_mode_check(small):
    train, params = small
    with pytest.raises(ValueError):
        example_labels(params, train[:2], "other")
