"""Primitives on the unit hypersphere S^{n-1}.

Templates are plain 1-d float arrays of unit norm and rotation matrices are
plain 2-d float arrays; the ``as_*`` helpers validate them at API boundaries.
Every randomized function takes an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-9
ORTHO_TOL = 1e-9
MIN_DIM = 3


@dataclass(frozen=True)
class RandomStream:
    """A reproducible (seed, stream_id) pair.

    Two streams with equal fields produce identical draws; parallel callers
    must use distinct ``stream_id`` values.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=(self.stream_id & (2**64 - 1),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id ^ (index & (2**64 - 1)) ^ (1 << 63))


def as_generator(rng: np.random.Generator | RandomStream | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomStream):
        return rng.generator()
    return np.random.default_rng(rng)


def as_template(v, name: str = "template") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {v.shape}")
    if v.size < MIN_DIM:
        raise ValueError(f"{name} dimension must be >= {MIN_DIM}, got {v.size}")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} is not unit norm (|v| = {norm!r})")
    return v


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def orthogonality_residual(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=float)
    return float(np.abs(m.T @ m - np.eye(m.shape[0])).max())


def check_orthogonal(m, tol: float = ORTHO_TOL) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"rotation matrix must be square, got shape {m.shape}")
    res = orthogonality_residual(m)
    if res > tol:
        raise ValueError(f"matrix is not orthogonal (max |M^T M - I| = {res:.3g})")
    return m


def angle(v, w) -> float:
    """Angle in radians between two vectors, in [0, pi]."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape:
        raise ValueError(f"dimension mismatch: {v.shape} vs {w.shape}")
    cos = float(v @ w) / float(np.linalg.norm(v) * np.linalg.norm(w))
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def random_unit(n: int, rng) -> np.ndarray:
    if n < MIN_DIM:
        raise ValueError(f"dimension must be >= {MIN_DIM}, got {n}")
    g = as_generator(rng)
    while True:
        v = g.standard_normal(n)
        norm = np.linalg.norm(v)
        if norm > 0:
            return v / norm


def _basis_with_first_column(v: np.ndarray, g: np.random.Generator) -> np.ndarray:
    # QR of [v | Gaussian] with R's diagonal forced positive gives a Haar
    # completion of v^perp.
    n = v.size
    a = g.standard_normal((n, n))
    a[:, 0] = v
    q, r = np.linalg.qr(a)
    q *= np.where(np.diag(r) < 0, -1.0, 1.0)
    return q


def random_rotation_mapping(w, c, rng) -> np.ndarray:
    """Random orthogonal ``M`` with ``M @ w == c``, uniform over that coset."""
    w = as_template(w, "w")
    c = as_template(c, "c")
    if w.shape != c.shape:
        raise ValueError(f"dimension mismatch: {w.shape} vs {c.shape}")
    g = as_generator(rng)
    qw = _basis_with_first_column(w, g)
    qc = _basis_with_first_column(c, g)
    m = qc @ qw.T
    check_orthogonal(m)
    return m


def tangent_direction(w: np.ndarray, g: np.random.Generator) -> np.ndarray:
    """Uniform unit vector orthogonal to the unit vector ``w``."""
    while True:
        u = g.standard_normal(w.size)
        u -= (u @ w) * w
        norm = np.linalg.norm(u)
        if norm > 1e-12:
            u /= norm
            # one re-projection pass keeps |<u, w>| at rounding level
            u -= (u @ w) * w
            return u / np.linalg.norm(u)


def perturb_at_angle(w, beta: float, rng) -> np.ndarray:
    """Return ``cos(beta) w + sin(beta) u`` for a uniform tangent direction ``u``."""
    w = as_template(w, "w")
    if not 0.0 <= beta < np.pi / 2:
        raise ValueError(f"beta must lie in [0, pi/2), got {beta!r}")
    if beta == 0.0:
        return w.copy()
    u = tangent_direction(w, as_generator(rng))
    out = np.cos(beta) * w + np.sin(beta) * u
    return out / np.linalg.norm(out)


def naive_rotation(t, c) -> np.ndarray:
    """Rotation taking ``t`` to ``c`` inside span{t, c}, identity elsewhere."""
    t = as_template(t, "t")
    c = as_template(c, "c")
    if t.shape != c.shape:
        raise ValueError(f"dimension mismatch: {t.shape} vs {c.shape}")
    w = c - (t @ c) * t
    norm = np.linalg.norm(w)
    if norm < 1e-12:
        raise ValueError("t and c are parallel; rotation plane is undefined")
    w /= norm
    theta = angle(t, c)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    tw = np.column_stack([t, w])
    r = np.eye(t.size) - np.outer(t, t) - np.outer(w, w) + tw @ rot @ tw.T
    check_orthogonal(r)
    return r
