"""Toy sentence encoder: token embeddings, position phase, mean pool, affine map.

Every token embedding is a complex vector of dimension ``d`` stored in
interleaved ``[re, im]`` layout (2d reals). Before pooling, the embedding of
the token at position ``j`` is rotated componentwise by ``exp(i*j*w_k)``.
Without that rotation mean pooling would be order-invariant, and a sentence
and its subject/object swap would encode identically. ``positional=False``
recovers the plain bag-of-embeddings encoder.

Rate shifts are looked up through ``rate_rows``: a token either owns a row
of the rate table or shares the ``<unk>`` row. An untrained encoder gives
every token its own random row. :func:`share_rare_rates` fits the mapping to
training text so that rare training words and never-seen words behave alike.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .metric import ComplexVector, PhaseVector

UNK, SEP = "<unk>", "<sep>"
UNK_ID, SEP_ID = 0, 1

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class Vocabulary:
    """Dense token -> index map with ``<unk>`` = 0 and ``<sep>`` = 1."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.index: dict[str, int] = {UNK: UNK_ID, SEP: SEP_ID}
        self._cache: dict[str, tuple[int, ...]] = {}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.index)
            self._cache.clear()
        return self.index[token]

    def __len__(self):
        return len(self.index)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.index == other.index

    def tokens(self) -> list[str]:
        return sorted(self.index, key=self.index.__getitem__)

    def tokenize(self, text: str) -> list[int]:
        ids = self._cache.get(text)
        if ids is None:
            ids = self._cache[text] = tuple(self.index.get(tok, UNK_ID) for tok in split_words(text))
        return list(ids)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for text in texts:
            for tok in split_words(text):
                vocab.add(tok)
        return vocab


def split_words(text: str) -> list[str]:
    """Lowercase; whitespace-separated words with punctuation split off."""
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.tokenize(text)


def position_frequencies(d: int, base: float = 64.0) -> np.ndarray:
    """Geometric ladder from 1 rad/token down to ~1/base rad/token."""
    if d == 1:
        return np.ones(1)
    return base ** (-np.arange(d) / (d - 1))


@dataclass(eq=False)
class EncoderParams:
    embedding: np.ndarray  # (|V|, 2d)
    projection: np.ndarray  # (2d, 2d)
    bias: np.ndarray  # (2d,)
    rates: np.ndarray  # (|V|, d) per-token shift of the position rotation rate
    vocab: Vocabulary
    seed: int
    positional: bool = True
    freqs: np.ndarray = field(default=None)
    rate_rows: np.ndarray = field(default=None)  # (|V|,) row of ``rates`` used by each token
    rates_fitted: bool = False

    def __post_init__(self):
        if self.freqs is None:
            self.freqs = position_frequencies(self.dim)
        if self.rate_rows is None:
            self.rate_rows = np.arange(len(self.vocab), dtype=np.int64)
        self.rate_rows = np.asarray(self.rate_rows, dtype=np.int64)
        if self.rate_rows.shape != (len(self.vocab),) or np.any(self.rate_rows < 0) or np.any(self.rate_rows >= len(self.vocab)):
            raise ValueError("rate_rows must map every token to a row of the rate table")
        v, two_d = self.embedding.shape
        if two_d % 2 or self.projection.shape != (two_d, two_d) or self.bias.shape != (two_d,):
            raise ValueError("inconsistent encoder parameter shapes")
        if self.rates.shape != (v, two_d // 2):
            raise ValueError("rate table must be |V| x d")
        if v != len(self.vocab):
            raise ValueError(f"embedding rows {v} != vocabulary size {len(self.vocab)}")

    @property
    def dim(self) -> int:
        return self.embedding.shape[1] // 2

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "embedding": self.embedding,
            "projection": self.projection,
            "bias": self.bias,
            "rates": self.rates,
        }

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "EncoderParams":
        return replace(self, **arrays)

    def copy(self) -> "EncoderParams":
        out = self.with_arrays({k: v.copy() for k, v in self.arrays().items()})
        out.rate_rows = self.rate_rows.copy()
        return out


def share_rare_rates(params: EncoderParams, texts: Sequence[str], min_df: float) -> EncoderParams:
    """Map tokens found in fewer than ``min_df`` of ``texts`` onto the shared row.

    The first fit demotes every rare token. Later fits only promote, so
    training on a second corpus never changes how the tokens of an earlier
    one are encoded. ``min_df = 0`` leaves every token on its own row.
    """
    if not 0.0 <= min_df <= 1.0:
        raise ValueError("min_df must lie in [0, 1]")
    own = np.arange(len(params.vocab))
    df = np.zeros(len(params.vocab))
    for text in texts:
        df[np.unique(params.vocab.tokenize(text))] += 1
    frequent = df >= min_df * max(len(texts), 1)
    frequent[UNK_ID] = True
    if params.rates_fitted:
        rows = np.where(frequent, own, params.rate_rows)
    else:
        rows = np.where(frequent, own, UNK_ID)
    return replace(params, rate_rows=rows, rates_fitted=True)


def init_params(seed: int, d: int, vocab, scale: float = 0.5, positional: bool = True) -> EncoderParams:
    """Uniform(-scale, scale) embeddings, identity-plus-noise projection, zero bias.

    Rate shifts start uniform on [-pi, pi), so an untrained encoder's position
    phases depend on every word of the sentence.

    ``vocab`` is a :class:`Vocabulary` or a vocabulary size (a placeholder
    vocabulary of ``<unk>``, ``<sep>`` and numbered tokens is built).
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if isinstance(vocab, int):
        if vocab < 2:
            raise ValueError("vocab_size must be >= 2")
        vocab = Vocabulary(f"tok{i}" for i in range(vocab - 2))
    rng = np.random.default_rng(seed)
    n = len(vocab)
    embedding = rng.uniform(-scale, scale, size=(n, 2 * d))
    projection = np.eye(2 * d) + rng.uniform(-scale, scale, size=(2 * d, 2 * d))
    rates = rng.uniform(-np.pi, np.pi, size=(n, d))
    return EncoderParams(embedding, projection, np.zeros(2 * d), rates, vocab, seed, positional)


# ---------------------------------------------------------------------------
# forward passes


def _layout(seqs: Sequence[Sequence[int]]):
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if lengths.size == 0 or np.any(lengths == 0):
        raise ValueError("cannot encode an empty token sequence")
    flat = np.fromiter((t for s in seqs for t in s), dtype=np.int64, count=int(lengths.sum()))
    seg = np.repeat(np.arange(len(seqs)), lengths)
    starts = np.cumsum(lengths) - lengths
    pos = (np.arange(flat.size) - starts[seg]).astype(np.float64)
    return flat, pos, lengths, seg


def attach(params: EncoderParams, tape: ad.Tape) -> dict[str, ad.Var]:
    """Register the parameter arrays as named leaves on ``tape``."""
    return {name: tape.leaf(arr, name) for name, arr in params.arrays().items()}


def forward_batch(params: EncoderParams, leaves: dict, seqs) -> ad.Var:
    """Encode a batch of token sequences; returns a (B, 2d) realized output.

    Token ``j`` of a sentence is rotated by ``j * rate`` where
    ``rate = freqs + mean(rates[rate_rows[tokens]])`` is shared by the whole sentence.
    """
    flat, pos, lengths, seg = _layout(seqs)
    x = ad.gather_rows(leaves["embedding"], flat)
    if params.positional:
        rate = ad.segment_mean(ad.gather_rows(leaves["rates"], params.rate_rows[flat]), lengths) + params.freqs
        angle = ad.gather_rows(rate, seg) * pos[:, None]
        c, s = ad.cos(angle), ad.sin(angle)
        e_re = ad.take_columns(x, slice(0, None, 2))
        e_im = ad.take_columns(x, slice(1, None, 2))
        x = ad.interleave(e_re * c - e_im * s, e_re * s + e_im * c)
    pooled = ad.segment_mean(x, lengths)
    return ad.matmul(pooled, ad.transpose(leaves["projection"])) + leaves["bias"]


def pair_tokens(premise_tokens, hypothesis_tokens) -> list[int]:
    if len(premise_tokens) == 0 or len(hypothesis_tokens) == 0:
        raise ValueError("premise and hypothesis must both be nonempty")
    return list(premise_tokens) + [SEP_ID] + list(hypothesis_tokens)


@dataclass(eq=False)
class ComputationTape:
    """Forward record of one encoder call, replayable by :func:`backward`."""

    tape: ad.Tape
    output: ad.Var
    params: EncoderParams


def encode_single(params: EncoderParams, tokens) -> tuple[ComplexVector, ComputationTape]:
    tape = ad.Tape()
    out = forward_batch(params, attach(params, tape), [list(tokens)])
    vec = ComplexVector.from_realized(out.value[0])
    return vec, ComputationTape(tape, out, params)


def encode_pair(params: EncoderParams, premise_tokens, hypothesis_tokens) -> tuple[PhaseVector, ComputationTape]:
    """Joint encoding of ``premise <sep> hypothesis``, reduced to its phases."""
    seq = pair_tokens(premise_tokens, hypothesis_tokens)
    tape = ad.Tape()
    out = forward_batch(params, attach(params, tape), [seq])
    y = out.value[0]
    return PhaseVector(np.arctan2(y[1::2], y[0::2])), ComputationTape(tape, out, params)


def backward(tape: ComputationTape, upstream_gradient, params: EncoderParams | None = None) -> dict[str, np.ndarray]:
    """Gradients of ``<upstream, output>`` with respect to every parameter array.

    ``upstream_gradient`` is the gradient with respect to the realized
    (2d,) output. Passing ``params`` checks that they are the ones the
    forward pass used.
    """
    if params is not None and params is not tape.params:
        raise ValueError("tape was recorded with different encoder parameters")
    if isinstance(upstream_gradient, ComplexVector):
        upstream_gradient = upstream_gradient.realized()
    up = np.asarray(upstream_gradient, dtype=np.float64)
    return tape.tape.backward(tape.output, up.reshape(tape.output.value.shape))


# ---------------------------------------------------------------------------
# batch helpers (no tape)


def encode_texts(params: EncoderParams, texts: Sequence[str], chunk: int = 512) -> np.ndarray:
    """Realized encodings (N, 2d) of ``texts``."""
    out = []
    for start in range(0, len(texts), chunk):
        seqs = [params.vocab.tokenize(t) for t in texts[start : start + chunk]]
        tape = ad.Tape()
        out.append(forward_batch(params, attach(params, tape), seqs).value)
    return np.concatenate(out) if out else np.zeros((0, 2 * params.dim))


def encode_pair_texts(params: EncoderParams, premises, hypotheses, chunk: int = 512) -> np.ndarray:
    """Phases (N, d) of jointly encoded pairs."""
    out = []
    for start in range(0, len(premises), chunk):
        seqs = [
            pair_tokens(params.vocab.tokenize(p), params.vocab.tokenize(h))
            for p, h in zip(premises[start : start + chunk], hypotheses[start : start + chunk])
        ]
        tape = ad.Tape()
        y = forward_batch(params, attach(params, tape), seqs).value
        out.append(np.arctan2(y[:, 1::2], y[:, 0::2]))
    return np.concatenate(out) if out else np.zeros((0, params.dim))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: EncoderParams, path) -> None:
    np.savez(
        path,
        format_version=np.array(1),
        dim=np.array(params.dim),
        vocab_size=np.array(len(params.vocab)),
        vocab=np.array(params.vocab.tokens(), dtype=str),
        seed=np.array(params.seed),
        positional=np.array(params.positional),
        freqs=params.freqs,
        rate_rows=params.rate_rows,
        rates_fitted=np.array(params.rates_fitted),
        **params.arrays(),
    )


def load_checkpoint(path) -> EncoderParams:
    with np.load(path, allow_pickle=False) as z:
        vocab = Vocabulary(str(t) for t in z["vocab"][2:])
        if len(vocab) != int(z["vocab_size"]):
            raise ValueError("checkpoint vocabulary is inconsistent")
        return EncoderParams(
            embedding=z["embedding"].copy(),
            projection=z["projection"].copy(),
            bias=z["bias"].copy(),
            rates=z["rates"].copy(),
            vocab=vocab,
            seed=int(z["seed"]),
            positional=bool(z["positional"]),
            freqs=z["freqs"].copy(),
            rate_rows=z["rate_rows"].copy(),
            rates_fitted=bool(z["rates_fitted"]),
        )
