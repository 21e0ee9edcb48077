"""Experiment drivers: few-shot sample counts, forgetting deltas, proxy task."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import training as T
from .classifiers import FIXED, KnnConfig, LabelStore, build_store, example_labels, knn_classify_many
from .dataset import CONTRADICTION, ENTAILMENT, RELATIONS, DataError, NliExample
from .encoder import EncoderParams, split_words

DEFAULT_SCHEDULE = (8, 16, 32, 48, 64, 96, 128, 192, 256, 400, 512)

PROXY = "proxy"
NEGATION = "not"

# Proxy words are consonant-vowel syllables opening with letters no entity
# name or relation template word starts with, so the vocabularies stay apart.
_PROXY_ONSETS = ("h", "w", "j", "y", "ch")
_PROXY_VOWELS = ("a", "e", "i", "o", "u")


class ProxyError(RuntimeError):
    """Proxy pretraining never got above chance, so a delta would be meaningless."""


# ---------------------------------------------------------------------------
# proxy corpus


def proxy_words(seed: int, n: int = 40) -> list[str]:
    rng = np.random.default_rng([seed, 41])
    words: list[str] = []
    while len(words) < n:
        syllables = int(rng.integers(2, 4))
        w = "".join(
            _PROXY_ONSETS[rng.integers(len(_PROXY_ONSETS))] + _PROXY_VOWELS[rng.integers(len(_PROXY_VOWELS))]
            for _ in range(syllables)
        )
        if w not in words and w != NEGATION:
            words.append(w)
    return words


def make_proxy_corpus(seed: int, n: int, fractions=(0.7, 0.1, 0.2)) -> dict[str, list[NliExample]]:
    """Two-class stand-in NLI task, independent of the 14 relations.

    Entailment: the hypothesis keeps an ordered subset of the premise words.
    Contradiction: the same kind of subset with ``not`` inserted somewhere.
    Labels are balanced to within one example.
    """
    if n < 100:
        raise ValueError("proxy corpus needs n >= 100")
    rng = np.random.default_rng([seed, 43])
    words = proxy_words(seed)
    labels = [ENTAILMENT, CONTRADICTION] * (n // 2) + [ENTAILMENT] * (n % 2)
    labels = [labels[i] for i in rng.permutation(n)]
    examples = []
    for i, label in enumerate(labels):
        length = int(rng.integers(4, 7))
        premise = [words[j] for j in rng.choice(len(words), size=length, replace=False)]
        keep = np.sort(rng.choice(length, size=int(rng.integers(2, length)), replace=False))
        hyp = [premise[j] for j in keep]
        if label == CONTRADICTION:
            hyp.insert(int(rng.integers(0, len(hyp) + 1)), NEGATION)
        examples.append(
            NliExample(" ".join(premise), " ".join(hyp), label, PROXY, PROXY, f"proxy{i}", f"proxy{i}")
        )
    bounds = np.round(np.cumsum(fractions) * n).astype(int)
    return {"train": examples[: bounds[0]], "dev": examples[bounds[0] : bounds[1]], "test": examples[bounds[1] :]}


def proxy_vocabulary(corpus: dict[str, list[NliExample]]) -> set[str]:
    return {w for split in corpus.values() for ex in split for t in (ex.premise, ex.hypothesis) for w in split_words(t)}


# ---------------------------------------------------------------------------
# few-shot


def balanced_subset(examples: Sequence[NliExample], n: int, seed: int) -> list[NliExample]:
    """``n`` examples spread round-robin over relations (and so over labels).

    Labels follow from the relation, so balancing relations balances labels
    in proportion to the symmetric/antisymmetric split of the relation set.
    """
    if n > len(examples):
        raise ValueError(f"asked for {n} examples from a pool of {len(examples)}")
    rng = np.random.default_rng([seed, 53, n])
    pools: dict[str, list[int]] = {}
    for i, ex in enumerate(examples):
        pools.setdefault(ex.property_id, []).append(i)
    keys = sorted(pools)
    queues = {k: list(rng.permutation(pools[k])) for k in keys}
    order = [keys[i] for i in rng.permutation(len(keys))]
    chosen: list[int] = []
    while len(chosen) < n:
        progressed = False
        for k in order:
            if queues[k] and len(chosen) < n:
                chosen.append(int(queues[k].pop()))
                progressed = True
        if not progressed:
            break
    return [examples[i] for i in sorted(chosen)]


@dataclass
class FewShotResult:
    method: str
    samples: int | None  # None: target never reached within the schedule
    curve: list[tuple[int, float]]


def measure_few_shot(
    cfg: T.RunConfig,
    corpus: dict[str, list[NliExample]],
    init,
    schedule: Sequence[int] = DEFAULT_SCHEDULE,
) -> FewShotResult:
    """Smallest schedule entry whose seeded subset trains to the target on test.

    ``init`` maps a seed to fresh :class:`EncoderParams`; every schedule
    point trains from scratch.
    """
    schedule = list(schedule)
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] < 1:
        raise ValueError("schedule must be a strictly increasing list of positive counts")
    curve = []
    for n in schedule:
        if n > len(corpus["train"]):
            break
        subset = balanced_subset(corpus["train"], n, cfg.seed)
        run_cfg = replace(cfg, max_epochs=few_shot_epochs(cfg, n))
        result = T.train(run_cfg, subset, corpus["dev"], init(cfg.seed))
        acc = T.evaluate(result.artifact, corpus["test"])
        curve.append((n, acc))
        if acc >= cfg.accuracy_target:
            return FewShotResult(cfg.method, n, curve)
    return FewShotResult(cfg.method, None, curve)


def few_shot_epochs(cfg: T.RunConfig, n: int) -> int:
    """Epoch cap giving small subsets the step budget of ``max_epochs`` at 400 examples.

    Early stopping on dev still applies, so the cap only bounds runs that
    never converge.
    """
    steps_per_epoch = -(-n // cfg.batch_size)
    budget = cfg.max_epochs * -(-400 // cfg.batch_size)
    return max(cfg.max_epochs, -(-budget // steps_per_epoch))


# ---------------------------------------------------------------------------
# forgetting


@dataclass
class ForgettingResult:
    method: str
    before: float
    after: float

    @property
    def delta(self) -> float:
        return self.before - self.after

    @property
    def improved(self) -> bool:
        return self.delta < 0


def pretrain_proxy(cfg: T.RunConfig, proxy: dict[str, list[NliExample]], params: EncoderParams):
    """Train the whole encoder on the proxy task with the extracted-label objective.

    Pretraining learns the token table too; downstream runs then freeze
    whatever ``cfg.frozen`` names. Returns the encoder and the 1-NN label
    store that later measurements reuse unchanged.
    """
    proxy_cfg = replace(cfg, method=T.KNN_FIXED, frozen="")
    result = T.train(proxy_cfg, proxy["train"], proxy["dev"], params)
    store = build_store(proxy["train"], result.artifact.params, FIXED)
    return result.artifact.params, store


def proxy_accuracy(params: EncoderParams, store: LabelStore, examples: Sequence[NliExample]) -> float:
    queries = example_labels(params, examples, FIXED)
    pred = knn_classify_many(queries, store, KnnConfig(k=1))
    gold = np.array([ex.label_index for ex in examples])
    return float(np.mean(pred == gold))


def measure_forgetting(
    cfg: T.RunConfig,
    corpus: dict[str, list[NliExample]],
    proxy: dict[str, list[NliExample]],
    params: EncoderParams,
    max_steps: int | None = None,
    chance: float = 0.5,
) -> ForgettingResult:
    """Proxy accuracy before minus after the method's symmetry training.

    The proxy evaluation path (1-NN over labels stored right after proxy
    pretraining) is held fixed; only the encoder moves.
    """
    base, store = pretrain_proxy(cfg, proxy, params)
    before = proxy_accuracy(base, store, proxy["test"])
    if before <= chance:
        raise ProxyError(f"proxy accuracy {before:.3f} does not exceed chance {chance}")
    result = T.train(cfg, corpus["train"], corpus["dev"], base.copy(), max_steps=max_steps)
    after = proxy_accuracy(result.artifact.params, store, proxy["test"])
    return ForgettingResult(cfg.method, before, after)


def check_proxy_disjoint(proxy: dict[str, list[NliExample]], entity_tokens: set[str]) -> None:
    clash = proxy_vocabulary(proxy) & entity_tokens
    if clash:
        raise DataError(f"proxy vocabulary overlaps entity tokens: {sorted(clash)[:5]}")


def relation_words() -> set[str]:
    return {w for r in RELATIONS for w in split_words(r.render("", ""))}
