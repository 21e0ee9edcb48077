"""Complex rotation algebra for the symmetry-aware distance.

Embeddings are complex vectors ``p = re + i*im``. Relation/label embeddings
are unit-modulus complex vectors stored as phases. The distance between a
premise and a hypothesis under label ``l`` is ``1 - cos(h, p o l)``, where
``o`` is the componentwise product and the cosine is taken over the
interleaved real realization of both vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_DIV = 1e-8


def wrap_phase(theta):
    """Wrap angles to the half-open interval [-pi, pi)."""
    theta = np.asarray(theta, dtype=np.float64)
    wrapped = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    # mod can land exactly on pi after rounding
    return np.where(wrapped >= np.pi, wrapped - 2.0 * np.pi, wrapped)


@dataclass(frozen=True, eq=False)
class ComplexVector:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.array(self.re, dtype=np.float64).reshape(-1)
        im = np.array(self.im, dtype=np.float64).reshape(-1)
        if re.shape != im.shape:
            raise ValueError(f"re/im length mismatch: {re.size} vs {im.size}")
        if re.size < 1:
            raise ValueError("ComplexVector needs dimension >= 1")
        if not (np.all(np.isfinite(re)) and np.all(np.isfinite(im))):
            raise ValueError("ComplexVector components must be finite")
        re.flags.writeable = False
        im.flags.writeable = False
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @property
    def dim(self) -> int:
        return self.re.size

    @classmethod
    def from_complex(cls, z) -> "ComplexVector":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real, z.imag)

    @classmethod
    def from_realized(cls, values) -> "ComplexVector":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size % 2:
            raise ValueError("realized vector must have even length")
        return cls(values[0::2], values[1::2])

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def realized(self) -> np.ndarray:
        """Interleaved ``[re0, im0, re1, im1, ...]`` form (length 2d)."""
        out = np.empty(2 * self.dim)
        out[0::2] = self.re
        out[1::2] = self.im
        return out

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.re**2) + np.sum(self.im**2)))

    def __neg__(self) -> "ComplexVector":
        return ComplexVector(-self.re, -self.im)

    def __eq__(self, other):
        if not isinstance(other, ComplexVector):
            return NotImplemented
        return np.array_equal(self.re, other.re) and np.array_equal(self.im, other.im)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PhaseVector:
    """Unit-modulus complex vector ``exp(i*theta)`` with theta in [-pi, pi)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if theta.size < 1:
            raise ValueError("PhaseVector needs dimension >= 1")
        if not np.all(np.isfinite(theta)):
            raise ValueError("phases must be finite")
        theta = wrap_phase(theta)
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return self.theta.size

    def to_complex(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    def realized(self) -> np.ndarray:
        out = np.empty(2 * self.dim)
        out[0::2] = np.cos(self.theta)
        out[1::2] = np.sin(self.theta)
        return out

    def __eq__(self, other):
        if not isinstance(other, PhaseVector):
            return NotImplemented
        return np.array_equal(self.theta, other.theta)

    __hash__ = None


def negate(l: PhaseVector) -> PhaseVector:
    """Inverse rotation (phase negation). Same as complex conjugation."""
    return PhaseVector(-l.theta)


conj = negate


def _check_dims(a, b):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def hadamard_rotate(p: ComplexVector, l: PhaseVector) -> ComplexVector:
    _check_dims(p, l)
    c, s = np.cos(l.theta), np.sin(l.theta)
    return ComplexVector(p.re * c - p.im * s, p.re * s + p.im * c)


def cosine_similarity(a: ComplexVector, b: ComplexVector) -> float:
    _check_dims(a, b)
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity of a zero-norm embedding is undefined")
    dot = float(np.dot(a.re, b.re) + np.dot(a.im, b.im))
    return float(np.clip(dot / (na * nb), -1.0, 1.0))


def rotate_distance(p: ComplexVector, h: ComplexVector, l: PhaseVector) -> float:
    """``1 - cos(h, p o l)``, in [0, 2]."""
    _check_dims(p, h)
    return 1.0 - cosine_similarity(h, hadamard_rotate(p, l))


def extract_label(p: ComplexVector, h: ComplexVector, eps_div: float = EPS_DIV) -> PhaseVector:
    """Phase of the componentwise quotient ``h / p``; moduli are dropped."""
    _check_dims(p, h)
    mod = np.hypot(p.re, p.im)
    small = np.flatnonzero(mod < eps_div)
    if small.size:
        i = int(small[0])
        raise ValueError(
            f"premise component {i} has modulus {mod[i]:.3g} below floor {eps_div:g}"
        )
    # arg(h * conj(p)) == arg(h) - arg(p)
    z_re = h.re * p.re + h.im * p.im
    z_im = h.im * p.re - h.re * p.im
    return PhaseVector(np.arctan2(z_im, z_re))


def label_distance(l1: PhaseVector, l2: PhaseVector) -> float:
    """``1 - cos`` between realized phase vectors; both have norm sqrt(d)."""
    _check_dims(l1, l2)
    sim = float(np.sum(np.cos(l1.theta - l2.theta))) / l1.dim
    return 1.0 - float(np.clip(sim, -1.0, 1.0))


def label_distances(query: PhaseVector, thetas: np.ndarray) -> np.ndarray:
    """Vectorized ``label_distance`` from one query to rows of ``thetas``."""
    thetas = np.atleast_2d(thetas)
    if thetas.shape[1] != query.dim:
        raise ValueError(f"dimension mismatch: {query.dim} vs {thetas.shape[1]}")
    sim = np.sum(np.cos(thetas - query.theta), axis=1) / query.dim
    return 1.0 - np.clip(sim, -1.0, 1.0)


def rotate_distances(P: np.ndarray, H: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Row-wise ``rotate_distance`` for realized (N, 2d) arrays and phases (d,) or (N, d)."""
    c, s = np.cos(theta), np.sin(theta)
    p_re, p_im = P[..., 0::2], P[..., 1::2]
    h_re, h_im = H[..., 0::2], H[..., 1::2]
    q_re = p_re * c - p_im * s
    q_im = p_re * s + p_im * c
    dot = np.sum(h_re * q_re + h_im * q_im, axis=-1)
    norms = np.sqrt(np.sum(h_re**2 + h_im**2, axis=-1)) * np.sqrt(np.sum(q_re**2 + q_im**2, axis=-1))
    return 1.0 - np.clip(dot / norms, -1.0, 1.0)
