"""Training and evaluation for the four methods.

``random-label``  frozen random label phases, rotation distance, nearest label.
``knn-fixed``     labels extracted as phase(h / p), pairwise margin loss, k-NN.
``knn-learnt``    labels from jointly encoding the pair, pairwise loss, k-NN.
``fine-tune``     linear head over [p, h], cross entropy, argmax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .classifiers import FIXED, LEARNT, KnnConfig, LabelStore, build_store, example_labels, knn_classify_many
from .dataset import NliExample
from .metric import rotate_distances
from .encoder import (
    EncoderParams,
    attach,
    encode_texts,
    forward_batch,
    load_checkpoint,
    pair_tokens,
    save_checkpoint,
    share_rare_rates,
)
from .objectives import (
    AdamState,
    HeadParams,
    LabelEmbeddingBank,
    MarginConfig,
    TrainingDivergence,
    adam_step,
    batch_cross_entropy,
    batch_pairwise,
    batch_random_label,
    init_head,
    init_label_bank,
    sample_pairs,
    unit_phase,
    unit_quotient,
)

RANDOM_LABEL, KNN_FIXED, KNN_LEARNT, FINE_TUNE = "random-label", "knn-fixed", "knn-learnt", "fine-tune"
METHODS = (RANDOM_LABEL, KNN_FIXED, KNN_LEARNT, FINE_TUNE)


@dataclass(frozen=True)
class RunConfig:
    method: str = KNN_FIXED
    seed: int = 0
    d: int = 32
    lr: float = 2e-5
    batch_size: int = 16
    margin: float = 0.5
    k: int = 3
    max_epochs: int = 50
    accuracy_target: float = 0.99
    init_scale: float = 0.5
    patience: int = 2
    frozen: str = "embedding"
    rate_min_df: float = 0.05
    lexicalized: str = ""
    delexicalized: str = ""
    proxy: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.max_epochs < 0 or self.d < 1:
            raise ValueError("batch_size and d must be >= 1, max_epochs >= 0")
        if not 0.0 <= self.rate_min_df <= 1.0:
            raise ValueError("rate_min_df must lie in [0, 1]")
        MarginConfig(self.margin)
        KnnConfig(self.k)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}


@dataclass(eq=False)
class Artifact:
    method: str
    params: EncoderParams
    bank: LabelEmbeddingBank | None = None
    head: HeadParams | None = None
    store: LabelStore | None = None
    k: int = 3


@dataclass
class TrainResult:
    artifact: Artifact
    log: list[dict] = field(default_factory=list)
    epochs: int = 0
    steps: int = 0
    converged: bool = False


def _texts(batch, attr):
    return [getattr(ex, attr) for ex in batch]


def _batch_loss(method, params, leaves, batch, bank, head_leaves, cfg, rng):
    vocab = params.vocab
    gold = np.array([ex.label_index for ex in batch])
    margin = MarginConfig(cfg.margin)
    if method == KNN_LEARNT:
        seqs = [pair_tokens(vocab.tokenize(ex.premise), vocab.tokenize(ex.hypothesis)) for ex in batch]
        u_re, u_im = unit_phase(forward_batch(params, leaves, seqs))
        pairs, same = sample_pairs(gold, rng)
        return batch_pairwise(u_re, u_im, pairs, same, margin)
    P = forward_batch(params, leaves, [vocab.tokenize(t) for t in _texts(batch, "premise")])
    H = forward_batch(params, leaves, [vocab.tokenize(t) for t in _texts(batch, "hypothesis")])
    if method == RANDOM_LABEL:
        return batch_random_label(P, H, gold, bank, margin)
    if method == KNN_FIXED:
        u_re, u_im = unit_quotient(P, H)
        pairs, same = sample_pairs(gold, rng)
        return batch_pairwise(u_re, u_im, pairs, same, margin)
    if method == FINE_TUNE:
        return batch_cross_entropy(P, H, gold, head_leaves["head_weight"], head_leaves["head_bias"])
    raise ValueError(method)


def loss_and_grads(method, params, batch, bank=None, head=None, cfg=None, rng=None):
    """Batch-mean loss and gradients for every trainable array."""
    cfg = cfg or RunConfig(method=method)
    rng = rng if rng is not None else np.random.default_rng(0)
    tape = ad.Tape()
    leaves = attach(params, tape)
    head_leaves = {n: tape.leaf(a, n) for n, a in head.arrays().items()} if head is not None else None
    loss = _batch_loss(method, params, leaves, batch, bank, head_leaves, cfg, rng)
    grads = tape.backward(loss)
    if head is None:
        grads.pop("head_weight", None)
        grads.pop("head_bias", None)
    return float(loss.value), grads


def finalize(artifact: Artifact, train_examples: Sequence[NliExample]) -> Artifact:
    """Rebuild the k-NN store from the current encoder (no-op for other methods)."""
    if artifact.method in (KNN_FIXED, KNN_LEARNT):
        mode = FIXED if artifact.method == KNN_FIXED else LEARNT
        artifact.store = build_store(train_examples, artifact.params, mode)
    return artifact


def predict(artifact: Artifact, examples: Sequence[NliExample]) -> np.ndarray:
    """Class ordinals via the method's own inference path."""
    params = artifact.params
    if artifact.method in (KNN_FIXED, KNN_LEARNT):
        mode = FIXED if artifact.method == KNN_FIXED else LEARNT
        queries = example_labels(params, examples, mode)
        return knn_classify_many(queries, artifact.store, KnnConfig(min(artifact.k, len(artifact.store))))
    P = encode_texts(params, _texts(examples, "premise"))
    H = encode_texts(params, _texts(examples, "hypothesis"))
    if artifact.method == RANDOM_LABEL:
        dists = np.stack([rotate_distances(P, H, theta) for theta in artifact.bank.thetas], axis=1)
        return np.argmin(dists, axis=1)
    if artifact.method == FINE_TUNE:
        logits = np.concatenate([P, H], axis=1) @ artifact.head.weight.T + artifact.head.bias
        return np.argmax(logits, axis=1)
    raise ValueError(artifact.method)


def evaluate(artifact: Artifact, examples: Sequence[NliExample]) -> float:
    if not examples:
        raise ValueError("cannot evaluate on an empty corpus")
    gold = np.array([ex.label_index for ex in examples])
    return float(np.mean(predict(artifact, examples) == gold))


def new_artifact(cfg: RunConfig, params: EncoderParams) -> Artifact:
    bank = init_label_bank(cfg.seed, cfg.d) if cfg.method == RANDOM_LABEL else None
    head = init_head(cfg.seed, cfg.d) if cfg.method == FINE_TUNE else None
    return Artifact(cfg.method, params, bank=bank, head=head, k=cfg.k)


def train(
    cfg: RunConfig,
    train_examples: Sequence[NliExample],
    dev_examples: Sequence[NliExample],
    params: EncoderParams,
    max_steps: int | None = None,
) -> TrainResult:
    """Adam on the method's objective until dev accuracy holds the target.

    Stops once dev accuracy reaches ``accuracy_target`` for ``patience``
    consecutive epochs, after ``max_epochs``, or after ``max_steps``.
    """
    if not train_examples:
        raise ValueError("no training examples")
    texts = [t for ex in train_examples for t in (ex.premise, ex.hypothesis)]
    artifact = new_artifact(cfg, share_rare_rates(params, texts, cfg.rate_min_df))
    result = TrainResult(artifact)
    rng = np.random.default_rng([cfg.seed, 303])
    state = AdamState()
    head = artifact.head
    streak = 0
    n = len(train_examples)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if max_steps is not None and result.steps >= max_steps:
                break
            batch = [train_examples[i] for i in order[start : start + cfg.batch_size]]
            loss, grads = loss_and_grads(cfg.method, artifact.params, batch, artifact.bank, head, cfg, rng)
            for name in filter(None, cfg.frozen.split(",")):
                grads.pop(name, None)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at step {result.steps + 1}")
            arrays = dict(artifact.params.arrays())
            if head is not None:
                arrays.update(head.arrays())
            new, state = adam_step(arrays, grads, state, lr=cfg.lr)
            artifact.params = artifact.params.with_arrays(
                {k: new[k] for k in artifact.params.arrays()}
            )
            if head is not None:
                head = HeadParams(new["head_weight"], new["head_bias"])
                artifact.head = head
            result.steps += 1
            gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
            result.log.append(
                {
                    "step": result.steps,
                    "epoch": epoch,
                    "objective": cfg.method,
                    "loss": loss,
                    "grad_norm": gnorm,
                    "seed": cfg.seed,
                }
            )
        result.epochs = epoch
        finalize(artifact, train_examples)
        if dev_examples:
            acc = evaluate(artifact, dev_examples)
            result.log.append({"epoch": epoch, "dev_accuracy": acc, "seed": cfg.seed})
            streak = streak + 1 if acc >= cfg.accuracy_target else 0
            if streak >= cfg.patience:
                result.converged = True
                break
        if max_steps is not None and result.steps >= max_steps:
            break
    finalize(artifact, train_examples)
    return result


# ---------------------------------------------------------------------------
# persistence

ARTIFACT_FORMAT_VERSION = 1


def save_artifact(artifact: Artifact, out_dir) -> None:
    """Encoder checkpoint plus the method's bank, head or store, and a header."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(artifact.params, out / "encoder.npz")
    header = {"format_version": ARTIFACT_FORMAT_VERSION, "method": artifact.method, "k": artifact.k}
    if artifact.bank is not None:
        header["bank"] = [[repr(float(x)) for x in row] for row in artifact.bank.thetas]
    if artifact.head is not None:
        np.savez(out / "head.npz", weight=artifact.head.weight, bias=artifact.head.bias)
    if artifact.store is not None:
        artifact.store.save(out / "store.json")
    (out / "artifact.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_artifact(in_dir) -> Artifact:
    src = Path(in_dir)
    header = json.loads((src / "artifact.json").read_text())
    if header.get("format_version") != ARTIFACT_FORMAT_VERSION:
        raise ValueError(f"unsupported artifact format {header.get('format_version')}")
    artifact = Artifact(header["method"], load_checkpoint(src / "encoder.npz"), k=header["k"])
    if "bank" in header:
        artifact.bank = LabelEmbeddingBank(np.array([[float(x) for x in row] for row in header["bank"]]))
    if (src / "head.npz").exists():
        with np.load(src / "head.npz") as z:
            artifact.head = HeadParams(z["weight"].copy(), z["bias"].copy())
    if (src / "store.json").exists():
        artifact.store = LabelStore.load(src / "store.json")
    return artifact
