"""Template recovery from a single structured sketch ``M = T R``.

``T`` is a signed permutation (the only orthogonal maps preserving C_alpha)
and ``R`` the naive rotation taking the template to a fixed codeword.  ``R``
fixes every vector orthogonal to span{template, codeword}; sparse fixed
vectors stay sparse under ``M``, which exposes that plane.
"""

from __future__ import annotations

import numpy as np

from .code import CodeParams, Codeword, decode
from .sphere import angle, as_generator, as_template, naive_rotation


def random_signed_permutation(n: int, rng) -> np.ndarray:
    g = as_generator(rng)
    t = np.zeros((n, n))
    t[g.permutation(n), np.arange(n)] = g.choice(np.array([-1.0, 1.0]), size=n)
    return t


def structured_sketch(w, params: CodeParams, rng, c_fixed: Codeword | None = None) -> np.ndarray:
    """``T R`` with ``R`` rotating ``w`` onto ``c_fixed`` (default: first alpha axes, all +)."""
    w = as_template(w, "w")
    if c_fixed is None:
        c_fixed = Codeword(params.n, tuple(range(params.alpha)), (1,) * params.alpha)
    return random_signed_permutation(params.n, rng) @ naive_rotation(w, c_fixed.dense())


def fixed_vector_candidates(
    m: np.ndarray, kmax: int, rng, null_tol: float = 1e-6, zero_tol: float = 1e-6, magnitude_tol: float = 1e-9
) -> np.ndarray:
    """Sparse vectors ``v`` whose image ``M v`` has exactly as many non-zeros as ``v``.

    For each size ``k = 2..kmax``, ``n`` random ``k x k`` submatrices are
    tried; a submatrix with a (numerical) null vector yields a candidate.
    If ``R v = v`` then ``M v = T v``, so the image magnitudes must also be a
    rearrangement of those of ``v``; that check drops near-misses.
    """
    g = as_generator(rng)
    n = m.shape[0]
    kept = []
    for k in range(2, kmax + 1):
        for _ in range(n):
            rows = np.sort(g.choice(n, size=k, replace=False))
            cols = np.sort(g.choice(n, size=k, replace=False))
            _, s, vt = np.linalg.svd(m[np.ix_(rows, cols)])
            if s[-1] > null_tol:
                continue
            u = vt[-1]
            image = m[:, cols] @ u
            big = np.abs(image) > zero_tol
            if np.count_nonzero(big) != k:
                continue
            if np.abs(np.sort(np.abs(image[big])) - np.sort(np.abs(u))).max() > magnitude_tol:
                continue
            v = np.zeros(n)
            v[cols] = u
            kept.append(v)
    return np.array(kept).reshape(-1, n)


def rotation_attack(
    m: np.ndarray,
    params: CodeParams,
    kmax: int = 8,
    theta_t: float = np.radians(30.0),
    rng=None,
    null_tol: float = 1e-6,
) -> np.ndarray | None:
    """Return a vector near +-template, or ``None``.

    The approximate null space of the stacked fixed vectors contains the
    rotation plane; its basis vectors (singular value <= ``null_tol``) are
    tried in order of increasing singular value and the first whose image is
    within ``theta_t`` of its decoded codeword wins.
    """
    if not 2 <= kmax <= params.n:
        raise ValueError("kmax must lie in [2, n]")
    fixed = fixed_vector_candidates(m, kmax, rng)
    if fixed.shape[0] == 0:
        return None
    _, s, vt = np.linalg.svd(fixed, full_matrices=True)
    sv = np.zeros(params.n)
    sv[: s.size] = s
    for idx in np.argsort(sv, kind="stable"):
        if sv[idx] > null_tol:
            break
        v = vt[idx]
        image = m @ v
        c = decode(image, params)
        if angle(image, c.dense()) < theta_t:
            return v
    return None
