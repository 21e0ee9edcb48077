import numpy as np
import pytest

from rotnli import dataset as D
from rotnli import training as T
from rotnli.classifiers import KnnConfig, classify_head, classify_nearest_label, example_labels, knn_classify
from rotnli.encoder import encode_single, init_params
from rotnli.metric import PhaseVector
from rotnli.objectives import TrainingDivergence, init_head, init_label_bank

FAST = dict(lr=1e-2, d=8, max_epochs=2, seed=1)


@pytest.fixture(scope="module")
def lex(corpus):
    return corpus[D.LEXICALIZED]


@pytest.fixture(scope="module")
def small(lex):
    return lex["train"][::10], lex["dev"][::4]


def run(method, small, vocab, **kw):
    cfg = T.RunConfig(method=method, **{**FAST, **kw})
    return cfg, T.train(cfg, small[0], small[1], init_params(cfg.seed, cfg.d, vocab))


def test_config_defaults_and_validation():
    cfg = T.RunConfig()
    assert (cfg.lr, cfg.batch_size, cfg.margin, cfg.k) == (2e-5, 16, 0.5, 3)
    for bad in (dict(method="svm"), dict(lr=0.0), dict(batch_size=0), dict(margin=3.0), dict(k=0), dict(rate_min_df=2.0)):
        with pytest.raises(ValueError):
            T.RunConfig(**bad)


@pytest.mark.parametrize("method", T.METHODS)
def test_method_parameter_contract(method, small, corpus_vocab):
    cfg, result = run(method, small, corpus_vocab)
    art = result.artifact
    init = init_params(cfg.seed, cfg.d, corpus_vocab)
    assert np.array_equal(art.params.embedding, init.embedding), "token table is frozen by default"
    assert not np.array_equal(art.params.projection, init.projection)
    if method == T.FINE_TUNE:
        assert art.bank is None and art.store is None
        assert not np.array_equal(art.head.weight, init_head(cfg.seed, cfg.d).weight)
    else:
        assert art.head is None
    if method == T.RANDOM_LABEL:
        assert art.bank.thetas.tobytes() == init_label_bank(cfg.seed, cfg.d).thetas.tobytes()
    if method in (T.KNN_FIXED, T.KNN_LEARNT):
        assert len(art.store) == len(small[0])


def test_unfrozen_training_moves_the_token_table(small, corpus_vocab):
    cfg, result = run(T.KNN_FIXED, small, corpus_vocab, frozen="")
    assert not np.array_equal(result.artifact.params.embedding, init_params(cfg.seed, cfg.d, corpus_vocab).embedding)


@pytest.mark.parametrize("method", T.METHODS)
def test_training_is_deterministic(method, small, corpus_vocab):
    _, a = run(method, small, corpus_vocab)
    _, b = run(method, small, corpus_vocab)
    assert a.log == b.log
    for name, arr in a.artifact.params.arrays().items():
        assert arr.tobytes() == b.artifact.params.arrays()[name].tobytes()


def test_log_records(small, corpus_vocab):
    cfg, result = run(T.KNN_LEARNT, small, corpus_vocab)
    steps = [r for r in result.log if "step" in r]
    assert [r["step"] for r in steps] == list(range(1, result.steps + 1))
    assert set(steps[0]) == {"step", "epoch", "objective", "loss", "grad_norm", "seed"}
    assert all(np.isfinite(r["loss"]) and r["grad_norm"] >= 0 for r in steps)
    assert any("dev_accuracy" in r for r in result.log)


def test_max_steps_and_zero_steps(small, corpus_vocab):
    cfg = T.RunConfig(method=T.KNN_FIXED, **FAST)
    init = init_params(cfg.seed, cfg.d, corpus_vocab)
    assert T.train(cfg, small[0], [], init, max_steps=3).steps == 3
    zero = T.train(cfg, small[0], [], init, max_steps=0)
    assert zero.steps == 0
    assert np.array_equal(zero.artifact.params.projection, init.projection)


def test_divergence_names_the_step(small, corpus_vocab, monkeypatch):
    calls = {"n": 0}
    real = T.loss_and_grads

    def flaky(*args, **kw):
        calls["n"] += 1
        loss, grads = real(*args, **kw)
        return (float("nan") if calls["n"] == 4 else loss), grads

    monkeypatch.setattr(T, "loss_and_grads", flaky)
    cfg = T.RunConfig(method=T.RANDOM_LABEL, **FAST)
    with pytest.raises(TrainingDivergence, match="step 4"):
        T.train(cfg, small[0], [], init_params(1, cfg.d, corpus_vocab))


def test_empty_and_single_corpora(small, corpus_vocab):
    cfg, result = run(T.FINE_TUNE, small, corpus_vocab)
    with pytest.raises(ValueError):
        T.evaluate(result.artifact, [])
    with pytest.raises(ValueError):
        T.train(cfg, [], [], init_params(1, cfg.d, corpus_vocab))
    assert T.evaluate(result.artifact, small[1][:1]) in (0.0, 1.0)


@pytest.mark.parametrize("method", T.METHODS)
def test_inference_dispatch(method, small, corpus_vocab):
    """``predict`` follows each method's own probing path, example by example."""
    _, result = run(method, small, corpus_vocab)
    art = result.artifact
    exs = small[1][:25]
    preds = T.predict(art, exs)
    for ex, pred in zip(exs, preds):
        p = encode_single(art.params, art.params.vocab.tokenize(ex.premise))[0]
        h = encode_single(art.params, art.params.vocab.tokenize(ex.hypothesis))[0]
        if method == T.RANDOM_LABEL:
            want = classify_nearest_label(p, h, art.bank)
        elif method == T.FINE_TUNE:
            want = classify_head(art.head, p, h)
        else:
            mode = art.store.mode
            query = PhaseVector(example_labels(art.params, [ex], mode)[0])
            want = knn_classify(query, art.store, KnnConfig(art.k))
        assert pred == want


@pytest.mark.parametrize("method", T.METHODS)
def test_artifact_round_trip(method, small, corpus_vocab, tmp_path):
    _, result = run(method, small, corpus_vocab)
    T.save_artifact(result.artifact, tmp_path)
    back = T.load_artifact(tmp_path)
    assert back.method == method and back.k == result.artifact.k
    assert np.array_equal(T.predict(back, small[1]), T.predict(result.artifact, small[1]))


def test_artifact_version_check(small, corpus_vocab, tmp_path):
    _, result = run(T.RANDOM_LABEL, small, corpus_vocab)
    T.save_artifact(result.artifact, tmp_path)
    header = tmp_path / "artifact.json"
    header.write_text(header.read_text().replace('"format_version": 1', '"format_version": 7'))
    with pytest.raises(ValueError):
        T.load_artifact(tmp_path)


def test_converged_knn_fixed_fits_its_training_slice(lex, corpus_vocab):
    cfg = T.RunConfig(method=T.KNN_FIXED, lr=1e-2)
    result = T.train(cfg, lex["train"], lex["dev"], init_params(cfg.seed, cfg.d, corpus_vocab))
    assert result.converged and result.epochs <= cfg.max_epochs
    assert T.evaluate(result.artifact, lex["train"]) >= 0.99
