"""Training objectives and the Adam optimizer.

Scalar ``loss_*`` functions evaluate one example directly from the metric
module and serve as references. ``batch_*`` functions build the same losses
on a :class:`~rotnli.autodiff.Tape` over encoder outputs so that gradients
flow back into the encoder (and the head, for fine-tuning).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .metric import ComplexVector, PhaseVector, label_distance, rotate_distance

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass(frozen=True)
class MarginConfig:
    margin: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.margin <= 2.0:
            raise ValueError(f"margin must lie in (0, 2], got {self.margin}")


@dataclass(eq=False)
class LabelEmbeddingBank:
    """One random phase vector per class; never updated when frozen."""

    thetas: np.ndarray  # (n_classes, d)
    frozen: bool = True

    def __post_init__(self):
        self.thetas = np.array(self.thetas, dtype=np.float64)
        if self.frozen:
            self.thetas.flags.writeable = False

    def __getitem__(self, cls: int) -> PhaseVector:
        return PhaseVector(self.thetas[cls])

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    def __len__(self):
        return self.thetas.shape[0]


def init_label_bank(seed: int, d: int, n_classes: int = 2) -> LabelEmbeddingBank:
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng([seed, 101])
    return LabelEmbeddingBank(rng.uniform(-np.pi, np.pi, size=(n_classes, d)), frozen=True)


@dataclass(eq=False)
class HeadParams:
    weight: np.ndarray  # (2, 4d) over [realized p, realized h]
    bias: np.ndarray  # (2,)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"head_weight": self.weight, "head_bias": self.bias}

    def logits(self, p_emb: ComplexVector, h_emb: ComplexVector) -> np.ndarray:
        x = np.concatenate([p_emb.realized(), h_emb.realized()])
        if x.size != self.weight.shape[1]:
            raise ValueError(f"head expects {self.weight.shape[1]} inputs, got {x.size}")
        return self.weight @ x + self.bias


def init_head(seed: int, d: int, scale: float = 0.1) -> HeadParams:
    rng = np.random.default_rng([seed, 202])
    return HeadParams(rng.uniform(-scale, scale, size=(2, 4 * d)), np.zeros(2))


# ---------------------------------------------------------------------------
# single-example losses


def loss_random_label(p_emb, h_emb, bank: LabelEmbeddingBank, gold_class: int, cfg: MarginConfig) -> float:
    """``d_pos^2 + max(0, margin - d_neg)^2`` with the non-gold class as negative."""
    if p_emb.dim != bank.dim or h_emb.dim != bank.dim:
        raise ValueError("embedding and label bank dimensions differ")
    d_pos = rotate_distance(p_emb, h_emb, bank[gold_class])
    d_neg = rotate_distance(p_emb, h_emb, bank[1 - gold_class])
    return d_pos**2 + max(0.0, cfg.margin - d_neg) ** 2


def loss_pairwise(l1: PhaseVector, l2: PhaseVector, same_label: bool, cfg: MarginConfig) -> float:
    dist = label_distance(l1, l2)
    if same_label:
        return dist**2
    return max(0.0, cfg.margin - dist) ** 2


def loss_cross_entropy(head: HeadParams, p_emb, h_emb, gold_class: int) -> float:
    z = head.logits(p_emb, h_emb)
    m = z.max()
    return float(m + np.log(np.sum(np.exp(z - m))) - z[gold_class])


# ---------------------------------------------------------------------------
# batched losses on a tape


def _re_im(y: ad.Var):
    return ad.take_columns(y, slice(0, None, 2)), ad.take_columns(y, slice(1, None, 2))


def _rowsum(x: ad.Var) -> ad.Var:
    return ad.total(x, axis=1)


def batch_rotate_distance(P: ad.Var, H: ad.Var, thetas: np.ndarray) -> ad.Var:
    """Per-row ``1 - cos(h, p o l)`` for realized (B, 2d) P, H and (B, d) phases."""
    p_re, p_im = _re_im(P)
    h_re, h_im = _re_im(H)
    c, s = np.cos(thetas), np.sin(thetas)
    q_re = p_re * c - p_im * s
    q_im = p_re * s + p_im * c
    dot = _rowsum(h_re * q_re + h_im * q_im)
    nh = ad.sqrt(_rowsum(h_re * h_re + h_im * h_im))
    nq = ad.sqrt(_rowsum(q_re * q_re + q_im * q_im))
    return 1.0 - dot / (nh * nq)


def batch_random_label(P, H, gold: np.ndarray, bank: LabelEmbeddingBank, cfg: MarginConfig) -> ad.Var:
    gold = np.asarray(gold, dtype=np.int64)
    d_pos = batch_rotate_distance(P, H, bank.thetas[gold])
    d_neg = batch_rotate_distance(P, H, bank.thetas[1 - gold])
    per = ad.square(d_pos) + ad.square(ad.relu(cfg.margin - d_neg))
    return ad.mean(per)


def unit_quotient(P: ad.Var, H: ad.Var):
    """Realized ``exp(i*arg(h/p))`` as (re, im) Vars: ``h*conj(p) / |h*conj(p)|``."""
    p_re, p_im = _re_im(P)
    h_re, h_im = _re_im(H)
    z_re = h_re * p_re + h_im * p_im
    z_im = h_im * p_re - h_re * p_im
    mag = ad.sqrt(z_re * z_re + z_im * z_im)
    return z_re / mag, z_im / mag


def unit_phase(Y: ad.Var):
    """Realized ``exp(i*arg(y))`` as (re, im) Vars."""
    y_re, y_im = _re_im(Y)
    mag = ad.sqrt(y_re * y_re + y_im * y_im)
    return y_re / mag, y_im / mag


def batch_pairwise(u_re: ad.Var, u_im: ad.Var, pairs: np.ndarray, same: np.ndarray, cfg: MarginConfig) -> ad.Var:
    """Contrastive loss over index pairs of unit phase vectors."""
    pairs = np.asarray(pairs, dtype=np.int64)
    same = np.asarray(same, dtype=np.float64)
    d = u_re.value.shape[1]
    a_re, b_re = ad.gather_rows(u_re, pairs[:, 0]), ad.gather_rows(u_re, pairs[:, 1])
    a_im, b_im = ad.gather_rows(u_im, pairs[:, 0]), ad.gather_rows(u_im, pairs[:, 1])
    dist = 1.0 - _rowsum(a_re * b_re + a_im * b_im) * (1.0 / d)
    per = ad.square(dist) * same + ad.square(ad.relu(cfg.margin - dist)) * (1.0 - same)
    return ad.mean(per)


def batch_cross_entropy(P, H, gold: np.ndarray, head_w: ad.Var, head_b: ad.Var) -> ad.Var:
    two_d = P.value.shape[1]
    w_p = ad.take_columns(head_w, slice(0, two_d))
    w_h = ad.take_columns(head_w, slice(two_d, 2 * two_d))
    logits = ad.matmul(P, ad.transpose(w_p)) + ad.matmul(H, ad.transpose(w_h)) + head_b
    onehot = np.eye(2)[np.asarray(gold, dtype=np.int64)]
    per = ad.logsumexp(logits, axis=1) - _rowsum(logits * onehot)
    return ad.mean(per)


def sample_pairs(labels: np.ndarray, rng: np.random.Generator, n_pairs: int | None = None):
    """Same-label and different-label index pairs in a 1:1 ratio.

    Falls back to whichever kind is available when a batch holds one class.
    """
    labels = np.asarray(labels)
    n = labels.size
    n_pairs = n if n_pairs is None else n_pairs
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    i_idx, j_idx = np.triu_indices(n, k=1)
    is_same = labels[i_idx] == labels[j_idx]
    same_pool = np.flatnonzero(is_same)
    diff_pool = np.flatnonzero(~is_same)
    want_same = n_pairs // 2 if diff_pool.size else n_pairs
    want_diff = n_pairs - want_same if same_pool.size else n_pairs
    if not same_pool.size:
        want_same = 0
    if not diff_pool.size:
        want_diff = 0
    chosen = []
    if want_same:
        chosen.append(rng.choice(same_pool, size=want_same, replace=same_pool.size < want_same))
    if want_diff:
        chosen.append(rng.choice(diff_pool, size=want_diff, replace=diff_pool.size < want_diff))
    sel = np.concatenate(chosen)
    pairs = np.stack([i_idx[sel], j_idx[sel]], axis=1)
    return pairs, is_same[sel].astype(np.float64)


# ---------------------------------------------------------------------------
# Adam


@dataclass(eq=False)
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 2e-5,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not mutated."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient for {name} at step {state.t + 1}")
    t = state.t + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = value
            if name in state.m:
                m_new[name], v_new[name] = state.m[name], state.v[name]
            continue
        if g.shape != value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {value.shape} for {name}")
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, t)
