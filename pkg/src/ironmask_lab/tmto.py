"""Meet-in-the-middle (time-memory trade-off) attack on two sketches.

Any ``c_1`` in C_alpha splits as ``sqrt(2) c_1 = a + b'`` with ``a, b'`` in
C_{alpha/2} on disjoint supports.  On a row ``i`` where ``c_2 = M c_1`` is zero,
``t_a^i = t_b^i`` for ``b = -b'``, so ``c_1 = (a - b) / sqrt(2)`` is found by
matching table values.  Desk scale only.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .code import Codeword, log2_comb
from .sketch import SketchRecord
from .sphere import as_generator

MAX_TABLE_ENTRIES = 10**8


@dataclass
class TmtoTable:
    """Half-weight codewords and their partial products on the chosen rows."""

    supports: np.ndarray  # (N, alpha/2)
    signs: np.ndarray  # (N, alpha/2)
    values: np.ndarray  # (N, m): t_a^i for each chosen row i
    chosen_rows: np.ndarray
    bucket: float
    entries: dict[tuple[int, ...], list[int]]

    def __len__(self) -> int:
        return self.supports.shape[0]

    def dense(self, idx: int, n: int) -> np.ndarray:
        v = np.zeros(n)
        v[self.supports[idx]] = self.signs[idx] / math.sqrt(self.supports.shape[1])
        return v


@dataclass(frozen=True)
class TmtoCost:
    half_code_log2: float  # log2 |C_{alpha/2}|
    storage_entries_log2: float
    storage_bytes: float
    additions_log2: float
    num_rows_m: int


def half_codewords(n: int, half: int) -> tuple[np.ndarray, np.ndarray]:
    """Every codeword of C_half as parallel (supports, signs) arrays."""
    combos = np.array(list(itertools.combinations(range(n), half)), dtype=int).reshape(-1, half)
    patterns = np.array(list(itertools.product((-1, 1), repeat=half)), dtype=int).reshape(-1, half)
    supports = np.repeat(combos, len(patterns), axis=0)
    signs = np.tile(patterns, (len(combos), 1))
    return supports, signs


def build_table(m: np.ndarray, alpha: int, rows, bucket: float) -> TmtoTable:
    n = m.shape[0]
    half = alpha // 2
    size = 2**half * math.comb(n, half)
    if size > MAX_TABLE_ENTRIES:
        raise ValueError(f"table of {size} entries exceeds the desk-scale limit {MAX_TABLE_ENTRIES}")
    rows = np.asarray(rows, dtype=int)
    supports, signs = half_codewords(n, half)
    sub = m[rows]  # (r, n)
    values = np.einsum("rnh,nh->nr", sub[:, supports], signs.astype(float)) / math.sqrt(half)
    entries: dict[tuple[int, ...], list[int]] = defaultdict(list)
    keys = np.floor(values / bucket).astype(np.int64)
    for idx, key in enumerate(map(tuple, keys)):
        entries[key].append(idx)
    return TmtoTable(supports, signs, values, rows, bucket, dict(entries))


def collisions(table: TmtoTable) -> list[tuple[int, int]]:
    """Pairs ``(i, j)``, ``i < j``, whose values agree within one bucket on every chosen row.

    Keys are bucketized on the first row and the two adjacent buckets are
    scanned, so no pair straddling a bucket edge is missed.
    """
    by_first: dict[int, list[int]] = defaultdict(list)
    for key, idxs in table.entries.items():
        by_first[key[0]].extend(idxs)
    out = []
    for k0, idxs in by_first.items():
        mine = np.asarray(idxs)
        for dk in (0, 1):
            other = mine if dk == 0 else np.asarray(by_first.get(k0 + 1, []), dtype=int)
            if other.size == 0:
                continue
            diff = np.abs(table.values[mine][:, None, :] - table.values[other][None, :, :]).max(axis=2)
            ii, jj = np.nonzero(diff <= table.bucket)
            for a, b in zip(mine[ii], other[jj]):
                if a < b:
                    out.append((int(a), int(b)))
                elif b < a and dk == 1:
                    out.append((int(b), int(a)))
    return sorted(set(out))


def verify_pairs(m: np.ndarray, table: TmtoTable, pairs, alpha: int, tol: float) -> list[Codeword]:
    """Keep disjoint pairs whose difference lands on {0, +-sqrt(2/alpha)} in every row."""
    n = m.shape[0]
    half = alpha // 2
    offsets = np.array([0.0, math.sqrt(2.0 / alpha), -math.sqrt(2.0 / alpha)])
    found: dict[Codeword, None] = {}
    for i, j in pairs:
        sa, sb = table.supports[i], table.supports[j]
        if np.intersect1d(sa, sb).size:
            continue
        diff = (m[:, sa] @ table.signs[i] - m[:, sb] @ table.signs[j]) / math.sqrt(half)
        if np.abs(diff[:, None] - offsets[None, :]).min(axis=1).max() > tol:
            continue
        support = np.concatenate([sa, sb])
        signs = np.concatenate([table.signs[i], -table.signs[j]])
        found[Codeword.from_arrays(n, support, signs)] = None
    return list(found)


def tmto_attack(
    m1: SketchRecord,
    m2: SketchRecord,
    m_rows: int = 4,
    bucket: float = 2.0**-20,
    rng=None,
    max_restarts: int = 32,
) -> list[Codeword]:
    """Candidates for ``c_1``; rows are re-chosen until some pair survives verification."""
    alpha = m1.params.alpha
    if alpha % 2:
        raise ValueError("the TMTO split needs an even alpha")
    n = m1.params.n
    if 2 ** (alpha // 2) * math.comb(n, alpha // 2) > MAX_TABLE_ENTRIES:
        raise ValueError("instance too large for a desk-scale table")
    g = as_generator(rng)
    m = m2.matrix @ m1.matrix.T
    for _ in range(max_restarts):
        rows = np.sort(g.choice(n, size=m_rows, replace=False))
        table = build_table(m, alpha, rows, bucket)
        found = verify_pairs(m, table, collisions(table), alpha, 10 * bucket)
        if found:
            return found
    return []


def tmto_cost(n: int, alpha: int, num_rows_m: int = 1, value_bits: int = 32) -> TmtoCost:
    """Storage and addition counts for the table at full scale.

    The ``sqrt(C(alpha, alpha/2))`` discount reflects the many splits of each
    target codeword; ``m`` chosen rows cost ``m (n/(n-alpha))^m`` row passes.
    """
    if alpha % 2:
        raise ValueError("alpha must be even")
    half = alpha // 2
    half_log2 = half + log2_comb(n, half)
    discount = 0.5 * log2_comb(alpha, half)
    entries_log2 = half_log2 - discount
    record_bytes = half * math.ceil(math.log2(n)) / 8 + num_rows_m * value_bits / 8
    additions_log2 = (
        math.log2(half) + math.log2(num_rows_m) + num_rows_m * math.log2(n / (n - alpha)) + half_log2 - discount
    )
    return TmtoCost(half_log2, entries_log2, 2.0**entries_log2 * record_bytes, additions_log2, num_rows_m)
