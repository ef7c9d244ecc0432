"""Hypersphere secure sketch, fuzzy commitment, and the two defenses.

``sketch``/``recover`` are the plain SS/Rec pair.  ``enroll``/``authenticate``
wrap them into the commitment flow, optionally with extra enrollment noise
(``DefenseParams.theta_a``) and decoy matrices (``DefenseParams.n_fake``).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .code import CodeParams, Codeword, code_size_bits, decode, sample_codeword
from .sphere import (
    as_generator,
    as_template,
    check_orthogonal,
    perturb_at_angle,
    random_rotation_mapping,
    random_unit,
)

RECORD_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SketchRecord:
    matrix: np.ndarray
    params: CodeParams

    def __post_init__(self):
        check_orthogonal(self.matrix)
        if self.matrix.shape[0] != self.params.n:
            raise ValueError("matrix size does not match params.n")


@dataclass(frozen=True)
class DefenseParams:
    theta_a: float = 0.0
    n_fake: int = 0

    def __post_init__(self):
        if not 0.0 <= self.theta_a < math.pi / 2:
            raise ValueError(f"theta_a must lie in [0, pi/2), got {self.theta_a!r}")
        if self.n_fake < 0:
            raise ValueError("n_fake must be non-negative")


@dataclass(frozen=True)
class ProtectedRecord:
    params: CodeParams
    matrices: tuple[np.ndarray, ...]
    commitment: bytes
    hash_cost: int = 1
    commit_binds_matrix: bool = False
    digest: str = "sha256"

    @property
    def n_fake(self) -> int:
        return len(self.matrices) - 1


def sketch(w, params: CodeParams, rng) -> tuple[SketchRecord, Codeword]:
    w = as_template(w, "w")
    if w.size != params.n:
        raise ValueError(f"template has dimension {w.size}, expected {params.n}")
    g = as_generator(rng)
    c = sample_codeword(params, g)
    m = random_rotation_mapping(w, c.dense(), g)
    return SketchRecord(m, params), c


def recover(w_prime, sk: SketchRecord) -> np.ndarray:
    w_prime = np.asarray(w_prime, dtype=float)
    if w_prime.shape != (sk.params.n,):
        raise ValueError(f"query has shape {w_prime.shape}, expected ({sk.params.n},)")
    c = decode(sk.matrix @ w_prime, sk.params)
    return sk.matrix.T @ c.dense()


# -- commitment -----------------------------------------------------------


def serialize_codeword(c: Codeword) -> bytes:
    """alpha records of (index: uint16 big-endian, sign: int8)."""
    return b"".join(struct.pack(">Hb", i, s) for i, s in zip(c.support, c.signs))


def serialize_matrix(m: np.ndarray) -> bytes:
    return np.ascontiguousarray(m, dtype="<f8").tobytes(order="C")


def iterated_hash(data: bytes, cost: int, digest: str = "sha256") -> bytes:
    """``cost`` chained applications of ``digest``; a stand-in for a slow hash."""
    if cost < 1:
        raise ValueError("hash cost must be >= 1")
    h = hashlib.new(digest, data).digest()
    for _ in range(cost - 1):
        h = hashlib.new(digest, h).digest()
    return h


def commit(c: Codeword, m: np.ndarray | None, cost: int, digest: str = "sha256") -> bytes:
    data = serialize_codeword(c)
    if m is not None:
        data += serialize_matrix(m)
    return iterated_hash(data, cost, digest)


def enroll(
    w,
    params: CodeParams,
    defense: DefenseParams = DefenseParams(),
    hash_cost: int = 1,
    rng=None,
    commit_binds_matrix: bool = False,
    digest: str = "sha256",
) -> ProtectedRecord:
    g = as_generator(rng)
    w = as_template(w, "w")
    if defense.theta_a > 0:
        w = perturb_at_angle(w, defense.theta_a, g)
    sk, c = sketch(w, params, g)
    decoys = [
        random_rotation_mapping(random_unit(params.n, g), sample_codeword(params, g).dense(), g)
        for _ in range(defense.n_fake)
    ]
    matrices = [sk.matrix] + decoys
    order = g.permutation(len(matrices))
    matrices = tuple(matrices[i] for i in order)
    digest_bytes = commit(c, sk.matrix if commit_binds_matrix else None, hash_cost, digest)
    return ProtectedRecord(params, matrices, digest_bytes, hash_cost, commit_binds_matrix, digest)


def closest_candidate(w_query, record: ProtectedRecord) -> tuple[int, Codeword]:
    """Index and decoded codeword of the matrix whose recovery is closest to the query."""
    w_query = np.asarray(w_query, dtype=float)
    best_idx, best_cw, best_cos = -1, None, -math.inf
    for i, m in enumerate(record.matrices):
        cw = decode(m @ w_query, record.params)
        rec = m.T @ cw.dense()
        cos = float(rec @ w_query)
        if cos > best_cos:
            best_idx, best_cw, best_cos = i, cw, cos
    return best_idx, best_cw


def authenticate(w_query, record: ProtectedRecord) -> bool:
    w_query = np.asarray(w_query, dtype=float)
    if w_query.shape != (record.params.n,):
        raise ValueError(f"query has shape {w_query.shape}, expected ({record.params.n},)")
    idx, cw = closest_candidate(w_query, record)
    m = record.matrices[idx] if record.commit_binds_matrix else None
    return commit(cw, m, record.hash_cost, record.digest) == record.commitment


def defense_security_bits(params: CodeParams, defense: DefenseParams) -> float:
    return code_size_bits(params) + math.log2(defense.n_fake + 1)


# -- record files ---------------------------------------------------------


def save_record(record: ProtectedRecord, path) -> Path:
    """Write the JSON header at ``path`` and the matrices to ``<path>.bin``."""
    path = Path(path)
    sidecar = path.with_suffix(".bin")
    header = {
        "format_version": RECORD_FORMAT_VERSION,
        "n": record.params.n,
        "alpha": record.params.alpha,
        "n_fake": record.n_fake,
        "hash_cost": record.hash_cost,
        "commit_binds_matrix": record.commit_binds_matrix,
        "commitment_hex": record.commitment.hex(),
        "digest": record.digest,
        "matrices_file": sidecar.name,
    }
    path.write_text(json.dumps(header, indent=2) + "\n")
    with open(sidecar, "wb") as fh:
        for m in record.matrices:
            fh.write(serialize_matrix(m))
    return sidecar


def load_record(path) -> ProtectedRecord:
    path = Path(path)
    header = json.loads(path.read_text())
    n, count = int(header["n"]), int(header["n_fake"]) + 1
    sidecar = path.parent / header.get("matrices_file", path.with_suffix(".bin").name)
    raw = np.fromfile(sidecar, dtype="<f8")
    if raw.size != count * n * n:
        raise ValueError(f"{sidecar}: expected {count} matrices of size {n}x{n}, found {raw.size} floats")
    mats = tuple(check_orthogonal(m) for m in raw.reshape(count, n, n).astype(float))
    return ProtectedRecord(
        params=CodeParams(n, int(header["alpha"])),
        matrices=mats,
        commitment=bytes.fromhex(header["commitment_hex"]),
        hash_cost=int(header["hash_cost"]),
        commit_binds_matrix=bool(header["commit_binds_matrix"]),
        digest=header.get("digest", "sha256"),
    )
