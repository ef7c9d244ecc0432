"""The sparse spherical code C_alpha and its nearest-codeword decoder.

A codeword has exactly ``alpha`` non-zero entries, each ``+-1/sqrt(alpha)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .sphere import as_generator


@dataclass(frozen=True)
class CodeParams:
    n: int
    alpha: int

    def __post_init__(self):
        if self.n < 1 or self.alpha < 1 or self.alpha > self.n:
            raise ValueError(f"need 1 <= alpha <= n, got n={self.n}, alpha={self.alpha}")


@dataclass(frozen=True)
class Codeword:
    n: int
    support: tuple[int, ...]
    signs: tuple[int, ...]

    def __post_init__(self):
        if len(self.support) != len(self.signs):
            raise ValueError("support and signs must have equal length")
        if any(b <= a for a, b in zip(self.support, self.support[1:])):
            raise ValueError("support must be strictly increasing")
        if self.support and (self.support[0] < 0 or self.support[-1] >= self.n):
            raise ValueError("support index out of range")
        if any(s not in (-1, 1) for s in self.signs):
            raise ValueError("signs must be +-1")

    @property
    def alpha(self) -> int:
        return len(self.support)

    def dense(self) -> np.ndarray:
        v = np.zeros(self.n)
        if self.support:
            v[list(self.support)] = np.asarray(self.signs, dtype=float) / math.sqrt(self.alpha)
        return v

    def __neg__(self) -> "Codeword":
        return Codeword(self.n, self.support, tuple(-s for s in self.signs))

    @classmethod
    def from_arrays(cls, n: int, support, signs) -> "Codeword":
        support = np.asarray(support, dtype=int)
        signs = np.asarray(signs, dtype=int)
        order = np.argsort(support)
        return cls(n, tuple(int(i) for i in support[order]), tuple(int(s) for s in signs[order]))

    @classmethod
    def from_dense(cls, v, tol: float = 1e-9) -> "Codeword":
        v = np.asarray(v, dtype=float)
        support = np.flatnonzero(np.abs(v) > tol)
        if support.size == 0:
            raise ValueError("zero vector is not a codeword")
        scale = 1.0 / math.sqrt(support.size)
        if np.abs(np.abs(v[support]) - scale).max() > tol:
            raise ValueError("vector is not in C_alpha")
        return cls.from_arrays(v.size, support, np.sign(v[support]))


def sample_codeword(params: CodeParams, rng) -> Codeword:
    g = as_generator(rng)
    support = np.sort(g.choice(params.n, size=params.alpha, replace=False))
    signs = g.choice(np.array([-1, 1]), size=params.alpha)
    return Codeword.from_arrays(params.n, support, signs)


def decode(u, params: CodeParams) -> Codeword:
    """Nearest codeword in angle: the ``alpha`` largest ``|u_i|``, signs of ``u``.

    Ties in magnitude go to the lowest index; a zero entry decodes to ``+``.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (params.n,):
        raise ValueError(f"expected a vector of length {params.n}, got shape {u.shape}")
    idx = np.sort(np.argsort(-np.abs(u), kind="stable")[: params.alpha])
    signs = np.where(u[idx] >= 0, 1, -1)
    return Codeword.from_arrays(params.n, idx, signs)


def decode_dense(u: np.ndarray, alpha: int) -> np.ndarray:
    """Row-wise ``decode`` returning dense codewords; ``u`` may be 1-d or 2-d."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    idx = np.argsort(-np.abs(u), axis=1, kind="stable")[:, :alpha]
    rows = np.arange(u.shape[0])[:, None]
    out = np.zeros_like(u)
    out[rows, idx] = np.where(u[rows, idx] >= 0, 1.0, -1.0) / math.sqrt(alpha)
    return out


def design_distance(params: CodeParams) -> float:
    if params.alpha < 1:
        raise ValueError("alpha must be >= 1")
    return 0.5 * math.acos(1.0 - 1.0 / params.alpha)


def log2_comb(n: int, k: int) -> float:
    if k < 0 or k > n:
        return -math.inf
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)) / math.log(2)


def code_size_bits(params: CodeParams) -> float:
    """log2 |C_alpha| = log2 C(n, alpha) + alpha."""
    return log2_comb(params.n, params.alpha) + params.alpha


def neighbors(c: Codeword) -> list[Codeword]:
    """Codewords reached by moving one support index to a free index, either sign.

    Each lies at Euclidean distance sqrt(2/alpha) from ``c``; there are
    ``2 * alpha * (n - alpha)`` of them.
    """
    support = list(c.support)
    free = sorted(set(range(c.n)) - set(support))
    out = []
    for pos, j in enumerate(support):
        rest_idx = support[:pos] + support[pos + 1 :]
        rest_sgn = c.signs[:pos] + c.signs[pos + 1 :]
        for k in free:
            for s in (-1, 1):
                out.append(Codeword.from_arrays(c.n, rest_idx + [k], list(rest_sgn) + [s]))
    return out


def enumerate_codewords(params: CodeParams) -> Iterator[Codeword]:
    """All of C_alpha; only sensible for tiny (n, alpha)."""
    for support in itertools.combinations(range(params.n), params.alpha):
        for signs in itertools.product((-1, 1), repeat=params.alpha):
            yield Codeword(params.n, support, signs)


def is_signed_permutation(t, tol: float = 1e-6) -> bool:
    """True iff every column of ``t`` is ``+-e_i`` (within ``tol``) for distinct ``i``."""
    t = np.asarray(t, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        return False
    a = np.abs(t)
    rows = np.argmax(a, axis=0)
    cols = np.arange(t.shape[1])
    if np.abs(a[rows, cols] - 1.0).max() > tol:
        return False
    rest = a.copy()
    rest[rows, cols] = 0.0
    if rest.max() > tol:
        return False
    return len(set(rows.tolist())) == t.shape[0]
