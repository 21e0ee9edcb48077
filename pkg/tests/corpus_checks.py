"""Exhaustive soundness checks over a generated corpus {mode: {split: [NliExample]}}."""

from collections import Counter

from rotnli import dataset as D


def all_examples(corpus):
    return [(mode, split, ex) for mode, splits in corpus.items() for split, exs in splits.items() for ex in exs]


def check_labels(corpus):
    for _, _, ex in all_examples(corpus):
        symmetric = D.RELATION_BY_ID[ex.property_id].symmetric
        assert (ex.label == D.ENTAILMENT) == symmetric, ex


def check_swap_closure(corpus):
    for mode, splits in corpus.items():
        for split, exs in splits.items():
            keys = Counter((ex.premise, ex.hypothesis, ex.label) for ex in exs)
            for (p, h, label), n in keys.items():
                assert keys[(h, p, label)] == n, (mode, split, p, h)


def check_mode_parity(corpus):
    def sig(mode, split):
        return Counter((ex.label, ex.property_id, ex.subject_id, ex.object_id) for ex in corpus[mode][split])

    for split in D.SPLITS:
        assert sig(D.LEXICALIZED, split) == sig(D.DELEXICALIZED, split), split


def check_templates(corpus, names):
    """Re-parse every sentence; ``names`` maps entity id to its label."""
    for mode, _, ex in all_examples(corpus):
        spec = D.RELATION_BY_ID[ex.property_id]
        render = (lambda q: names[q]) if mode == D.LEXICALIZED else (lambda q: q)
        assert spec.parse(ex.premise) == (render(ex.subject_id), render(ex.object_id)), ex
        assert spec.parse(ex.hypothesis) == (render(ex.object_id), render(ex.subject_id)), ex
        assert spec.render(*spec.parse(ex.premise)) == ex.premise


def check_entity_disjoint(corpus):
    for mode, splits in corpus.items():
        ids = {s: D.entity_ids(exs) for s, exs in splits.items()}
        assert not ids["train"] & ids["dev"] and not ids["train"] & ids["test"] and not ids["dev"] & ids["test"], mode
