"""Inference paths: nearest label embedding, k-NN over label stores, head argmax."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import LABELS, NliExample
from .encoder import EncoderParams, encode_pair_texts, encode_texts
from .metric import EPS_DIV, ComplexVector, PhaseVector, label_distances, rotate_distance
from .objectives import HeadParams, LabelEmbeddingBank

FIXED, LEARNT = "fixed", "learnt"
STORE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class KnnConfig:
    k: int = 3
    tie_break: str = "index-then-summed-distance"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")


@dataclass(eq=False)
class LabelStore:
    thetas: np.ndarray  # (n, d)
    classes: np.ndarray  # (n,) class ordinals
    mode: str = FIXED

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=np.float64))
        self.classes = np.asarray(self.classes, dtype=np.int64)
        if self.thetas.shape[0] != self.classes.size:
            raise ValueError("store phases and classes differ in length")
        if self.classes.size == 0:
            raise ValueError("label store must be nonempty")
        if self.mode not in (FIXED, LEARNT):
            raise ValueError(f"unknown store mode {self.mode!r}")

    def __len__(self):
        return self.classes.size

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    def save(self, path) -> None:
        payload = {
            "format_version": STORE_FORMAT_VERSION,
            "dim": self.dim,
            "mode": self.mode,
            # repr round-trips float64 exactly
            "entries": [
                {"class": int(c), "phases": [repr(float(x)) for x in row]}
                for row, c in zip(self.thetas, self.classes)
            ],
        }
        Path(path).write_text(json.dumps(payload) + "\n")

    @classmethod
    def load(cls, path) -> "LabelStore":
        payload = json.loads(Path(path).read_text())
        if payload.get("format_version") != STORE_FORMAT_VERSION:
            raise ValueError(f"unsupported store format {payload.get('format_version')}")
        thetas = np.array([[float(x) for x in e["phases"]] for e in payload["entries"]])
        store = cls(thetas, [e["class"] for e in payload["entries"]], payload["mode"])
        if store.dim != payload["dim"]:
            raise ValueError("store dimension does not match its header")
        return store


def fixed_labels(params: EncoderParams, premises, hypotheses, eps_div: float = EPS_DIV) -> np.ndarray:
    """Phases of ``h / p`` for every pair, each side encoded on its own."""
    P = encode_texts(params, list(premises))
    H = encode_texts(params, list(hypotheses))
    p_re, p_im = P[:, 0::2], P[:, 1::2]
    h_re, h_im = H[:, 0::2], H[:, 1::2]
    mod = np.hypot(p_re, p_im)
    bad = np.argwhere(mod < eps_div)
    if bad.size:
        row, comp = bad[0]
        raise ValueError(
            f"example {row}: premise component {comp} has modulus {mod[row, comp]:.3g} below floor {eps_div:g}"
        )
    return np.arctan2(h_im * p_re - h_re * p_im, h_re * p_re + h_im * p_im)


def example_labels(params: EncoderParams, examples: Sequence[NliExample], mode: str) -> np.ndarray:
    premises = [ex.premise for ex in examples]
    hypotheses = [ex.hypothesis for ex in examples]
    if mode == FIXED:
        return fixed_labels(params, premises, hypotheses)
    if mode == LEARNT:
        return encode_pair_texts(params, premises, hypotheses)
    raise ValueError(f"unknown store mode {mode!r}")


def build_store(training_samples: Sequence[NliExample], encoder_params: EncoderParams, mode: str = FIXED) -> LabelStore:
    if not training_samples:
        raise ValueError("cannot build a label store from zero samples")
    thetas = example_labels(encoder_params, training_samples, mode)
    classes = [ex.label_index for ex in training_samples]
    return LabelStore(thetas, classes, mode)


def _vote(order: np.ndarray, dists: np.ndarray, classes: np.ndarray, k: int) -> int:
    top = order[:k]
    top_classes = classes[top]
    n_classes = max(len(LABELS), int(classes.max()) + 1)
    counts = np.bincount(top_classes, minlength=n_classes)
    summed = np.bincount(top_classes, weights=dists[top], minlength=n_classes)
    best = counts.max()
    candidates = [c for c in range(n_classes) if counts[c] == best]
    # vote ties: smallest summed distance, then lowest ordinal
    return min(candidates, key=lambda c: (summed[c], c))


def knn_classify(query: PhaseVector, store: LabelStore, cfg: KnnConfig = KnnConfig()) -> int:
    if cfg.k > len(store):
        raise ValueError(f"k = {cfg.k} exceeds store size {len(store)}")
    dists = label_distances(query, store.thetas)
    order = np.argsort(dists, kind="stable")  # distance ties keep insertion order
    return _vote(order, dists, store.classes, cfg.k)


def knn_classify_many(queries: np.ndarray, store: LabelStore, cfg: KnnConfig = KnnConfig(), chunk: int = 64) -> np.ndarray:
    """:func:`knn_classify` applied to every row of ``queries`` (N, d)."""
    if cfg.k > len(store):
        raise ValueError(f"k = {cfg.k} exceeds store size {len(store)}")
    queries = np.atleast_2d(queries)
    if queries.shape[1] != store.dim:
        raise ValueError(f"dimension mismatch: {queries.shape[1]} vs {store.dim}")
    n_classes = max(len(LABELS), int(store.classes.max()) + 1)
    out = np.empty(queries.shape[0], dtype=np.int64)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        # same expression as label_distances, row by row
        sim = np.sum(np.cos(store.thetas[None, :, :] - q[:, None, :]), axis=2) / store.dim
        dists = 1.0 - np.clip(sim, -1.0, 1.0)
        order = np.argsort(dists, axis=1, kind="stable")
        top_classes = store.classes[order[:, : cfg.k]]
        counts = np.stack([(top_classes == c).sum(axis=1) for c in range(n_classes)], axis=1)
        best = counts.max(axis=1, keepdims=True)
        winners = counts == best
        pred = np.argmax(winners, axis=1)
        for r in np.flatnonzero(winners.sum(axis=1) > 1):
            pred[r] = _vote(order[r], dists[r], store.classes, cfg.k)
        out[start : start + len(q)] = pred
    return out


def classify_nearest_label(p_emb: ComplexVector, h_emb: ComplexVector, bank: LabelEmbeddingBank) -> int:
    dists = [rotate_distance(p_emb, h_emb, bank[c]) for c in range(len(bank))]
    return int(np.argmin(dists))  # argmin returns the first (lowest ordinal) on ties


def classify_head(head: HeadParams, p_emb: ComplexVector, h_emb: ComplexVector) -> int:
    return int(np.argmax(head.logits(p_emb, h_emb)))


def probe_pretrained(test_samples, train_samples, encoder_params: EncoderParams) -> float:
    """1-NN accuracy of an untrained encoder's fixed-mode label embeddings."""
    if not test_samples or not train_samples:
        raise ValueError("probe needs nonempty train and test samples")
    store = build_store(train_samples, encoder_params, FIXED)
    queries = example_labels(encoder_params, test_samples, FIXED)
    pred = knn_classify_many(queries, store, KnnConfig(k=1))
    gold = np.array([ex.label_index for ex in test_samples])
    return float(np.mean(pred == gold))
