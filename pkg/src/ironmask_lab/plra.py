"""Probabilistic linear regression attack on multiple sketches of one template.

Each sketch ``M_i`` maps its template to a sparse codeword, so most rows of
``M_i`` are orthogonal to the template.  The attack repeatedly samples rows,
hoping all of them hit zero coordinates ("correct" systems), solves the
resulting homogeneous system, and keeps a candidate only if two chained
recoveries through different sketches agree.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, NamedTuple, Sequence

import numpy as np

from .code import CodeParams, Codeword, log2_comb
from .sketch import SketchRecord, recover
from .sphere import RandomStream, angle, as_generator

Mode = Literal["svd", "lsa"]

RANK_TOL = 1e-10


class RankDeficiencyError(ValueError):
    """The sampled system has a null space of dimension > 1."""

    def __init__(self, deficiency: int, singular_values: np.ndarray):
        self.deficiency = deficiency
        self.singular_values = singular_values
        super().__init__(f"system is rank deficient: null space dimension {deficiency + 1} (need 1)")


@dataclass
class AttackConfig:
    solver: Mode = "svd"
    k: int = 0
    theta_t: float = math.radians(10.0)
    d: float | None = None
    t_th: int = 1
    max_outer_iterations: int = 10_000
    stream: RandomStream = field(default_factory=lambda: RandomStream(0))

    def residual_bound(self) -> float:
        return self.d if self.d is not None else 1e-6 * math.sqrt(self.k)


@dataclass
class SampledSystem:
    rows: np.ndarray
    provenance: np.ndarray  # (k, 2): source index, row index within source
    mode: Mode


@dataclass
class AttackOutcome:
    recovered: np.ndarray | None
    outer_iterations: int
    accepted: bool
    sampler_time_total: float = 0.0
    solver_time_total: float = 0.0
    check_time_total: float = 0.0
    trace: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RateModel:
    r_k: float
    t_k: float
    p_k: float
    p_f: float = 1.0

    def __post_init__(self):
        if self.r_k <= 0 or self.t_k <= 0:
            raise ValueError("r_k and t_k must be positive")
        if not (0 < self.p_k <= 1 and 0 < self.p_f <= 1):
            raise ValueError("p_k and p_f must lie in (0, 1]")


class ThresholdResult(NamedTuple):
    accepted: bool
    template: np.ndarray
    angle: float


# -- linear equation sampler ---------------------------------------------


def equation_sources(sketches: Sequence[SketchRecord], mode: Mode) -> list[np.ndarray]:
    """Matrices rows are drawn from: ``M_i`` for SVD, ``M_{i+1} M_1^T`` for LSA."""
    if len(sketches) < 2:
        raise ValueError("the multi-use attack needs at least 2 sketches")
    if mode == "svd":
        return [s.matrix for s in sketches]
    if mode == "lsa":
        m1t = sketches[0].matrix.T
        return [s.matrix @ m1t for s in sketches[1:]]
    raise ValueError(f"unknown mode {mode!r}")


def rows_per_source(k: int, t_prime: int) -> list[int]:
    """floor(k/t') rows each, the remainder one apiece to the first sources."""
    base, extra = divmod(k, t_prime)
    return [base + (1 if i < extra else 0) for i in range(t_prime)]


def _sample_from_sources(sources, mode: Mode, k: int, g: np.random.Generator, row_picker=None) -> SampledSystem:
    n = sources[0].shape[0]
    counts = rows_per_source(k, len(sources))
    if max(counts) > n:
        raise ValueError(f"k={k} exceeds the {len(sources)}*{n} available rows")
    rows, prov = [], []
    for j, (src, l_s) in enumerate(zip(sources, counts)):
        if l_s == 0:
            continue
        idx = g.choice(n, size=l_s, replace=False) if row_picker is None else row_picker(j, l_s, g)
        rows.append(src[idx])
        prov.append(np.column_stack([np.full(l_s, j), idx]))
    return SampledSystem(np.vstack(rows), np.vstack(prov).astype(int), mode)


def sample_equations(sketches: Sequence[SketchRecord], mode: Mode, k: int, rng) -> SampledSystem:
    sources = equation_sources(sketches, mode)
    if k < 1 or k > len(sources) * sources[0].shape[0]:
        raise ValueError(f"k={k} out of range for {len(sources)} sources")
    return _sample_from_sources(sources, mode, k, as_generator(rng))


def source_codewords(codewords: Sequence[Codeword], mode: Mode) -> list[Codeword]:
    """Codeword each source maps the attacked vector onto (oracle bookkeeping)."""
    return list(codewords) if mode == "svd" else list(codewords[1:])


def is_correct_system(system: SampledSystem, codewords: Sequence[Codeword]) -> bool:
    """Every sampled row sits on a zero coordinate of its source's codeword."""
    cws = source_codewords(codewords, system.mode)
    supports = [set(c.support) for c in cws]
    return all(int(r) not in supports[int(j)] for j, r in system.provenance)


def sample_correct_equations(
    sketches: Sequence[SketchRecord], codewords: Sequence[Codeword], mode: Mode, k: int, rng, sources=None
) -> SampledSystem:
    """Sampler conditioned on correctness, using planted codeword knowledge."""
    g = as_generator(rng)
    sources = equation_sources(sketches, mode) if sources is None else sources
    cws = source_codewords(codewords, mode)
    n = sources[0].shape[0]
    zeros = []
    for c in cws:
        mask = np.ones(n, dtype=bool)
        mask[list(c.support)] = False
        zeros.append(np.flatnonzero(mask))

    def picker(j, l_s, gen):
        return gen.choice(zeros[j], size=l_s, replace=False)

    return _sample_from_sources(sources, mode, k, g, picker)


# -- sampler success model -----------------------------------------------


def sampler_success_log2(n: int, alpha: int, k: int, t_prime: int) -> float:
    """log2 of the exact probability that a sampled system is correct."""
    if k > t_prime * n:
        raise ValueError("k exceeds t' * n")
    return sum(log2_comb(n - alpha, l) - log2_comb(n, l) for l in rows_per_source(k, t_prime) if l > 0)


def sampler_success_prob(n: int, alpha: int, k: int, t_prime: int) -> float:
    return 2.0 ** sampler_success_log2(n, alpha, k, t_prime)


def sampler_success_lower_bound(n: int, alpha: int, k: int, t_prime: int) -> float:
    """prod_s (1 - alpha/(n - l_s + 1))^{l_s}; equals (1 - alpha/(n-l+1))^k for even splits.

    A source with more than ``n - alpha`` rows can never be correct, so the bound is 0 there.
    """
    counts = [l for l in rows_per_source(k, t_prime) if l > 0]
    if any(l > n - alpha for l in counts):
        return 0.0
    return math.prod((1.0 - alpha / (n - l + 1)) ** l for l in counts)


def reduced_zero_set_sizes(k: int) -> tuple[int, int]:
    """Sizes of the guessed zero sets (U1 in c_1, U2 in c_2) of the two-sketch solver."""
    return k - k // 2, k // 2


def reduced_guess_log2(n: int, alpha: int, k: int) -> float:
    """log2 probability both zero-set guesses of the two-sketch solver are right."""
    u1, u2 = reduced_zero_set_sizes(k)
    return sum(log2_comb(n - alpha, u) - log2_comb(n, u) for u in (u1, u2))


def expected_runtime(model: RateModel) -> float:
    return model.r_k * model.t_k / (model.p_k * model.p_f)


def restart_cost_ratio(t: int, p_out: float) -> float:
    """Expected solver cost per success with a cap of ``t`` restarts."""
    return t / (1.0 - (1.0 - p_out) ** t)


# -- solvers --------------------------------------------------------------


def smallest_singular_vector(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Right singular vector of the smallest singular value, and all ``n`` singular values."""
    k, n = a.shape
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    sv = np.zeros(n)
    sv[: s.size] = s
    return vt[-1], sv


def svd_null_solve(system: SampledSystem | np.ndarray) -> np.ndarray:
    rows = system.rows if isinstance(system, SampledSystem) else np.asarray(system, dtype=float)
    k, n = rows.shape
    if k < n - 1:
        raise ValueError(f"SVD solver needs k >= n-1 rows, got k={k}, n={n}")
    v, sv = smallest_singular_vector(rows)
    scale = sv[0] if sv[0] > 0 else 1.0
    if sv[n - 2] <= RANK_TOL * scale:
        deficiency = int(np.sum(sv[: n - 1] <= RANK_TOL * scale))
        raise RankDeficiencyError(deficiency, sv)
    return v / np.linalg.norm(v)


def two_sketch_reduced_solve(
    m1: SketchRecord, m2: SketchRecord, k: int, rng, zero_sets: tuple[np.ndarray, np.ndarray] | None = None
) -> np.ndarray:
    """Solve ``sum_{j not in U1} m_ij c_j = 0 (i in U2)`` for ``c_1``, map back through ``M1^T``.

    ``U1``/``U2`` are guessed zero sets of ``c_1``/``c_2``; pass ``zero_sets`` to fix them.
    """
    n = m1.params.n
    if zero_sets is None:
        g = as_generator(rng)
        u1_size, u2_size = reduced_zero_set_sizes(k)
        u1 = g.choice(n, size=u1_size, replace=False)
        u2 = g.choice(n, size=u2_size, replace=False)
    else:
        u1, u2 = (np.asarray(u, dtype=int) for u in zero_sets)
    keep = np.setdiff1d(np.arange(n), u1)
    t = m2.matrix @ m1.matrix.T
    sub = t[np.ix_(np.sort(u2), keep)]
    if sub.shape[0] < sub.shape[1] - 1:
        raise ValueError("reduced system is underdetermined; increase k")
    v, sv = smallest_singular_vector(sub)
    cols = sub.shape[1]
    scale = sv[0] if sv[0] > 0 else 1.0
    if cols >= 2 and sv[cols - 2] <= RANK_TOL * scale:
        raise RankDeficiencyError(int(np.sum(sv[: cols - 1] <= RANK_TOL * scale)), sv)
    c = np.zeros(n)
    c[keep] = v
    w = m1.matrix.T @ c
    return w / np.linalg.norm(w)


def _local_search(gram: np.ndarray, alpha: int, g: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One greedy descent of ``||M c||^2 = c^T G c`` over single-support moves.

    Returns (support, signs) of the local minimum reached from a uniform start.
    """
    n = gram.shape[0]
    inv = 1.0 / math.sqrt(alpha)
    diag = np.diag(gram)
    supp = g.choice(n, size=alpha, replace=False)
    sgn = g.choice(np.array([-1.0, 1.0]), size=alpha)
    in_supp = np.zeros(n, dtype=bool)
    in_supp[supp] = True
    while True:
        gc = (gram[:, supp] @ sgn) * inv
        q = float(gc[supp] @ sgn) * inv
        free = np.flatnonzero(~in_supp)
        # change in c^T G c when supp[a] leaves and free[b] enters with sign s:
        #   remove[a] + enter[b] + s * cross[a, b], best s = -sign(cross)
        cross = 2.0 * inv * gc[free][None, :] - (2.0 / alpha) * sgn[:, None] * gram[np.ix_(supp, free)]
        remove = diag[supp] / alpha - 2.0 * inv * sgn * gc[supp]
        delta = remove[:, None] + (diag[free] / alpha)[None, :] - np.abs(cross)
        a, b = np.unravel_index(np.argmin(delta), delta.shape)
        if delta[a, b] >= -1e-13 * (1.0 + q):
            return supp, sgn
        in_supp[supp[a]] = False
        in_supp[free[b]] = True
        supp[a] = free[b]
        sgn[a] = -1.0 if cross[a, b] > 0 else 1.0


def lsa_solve(
    system: SampledSystem | np.ndarray, params: CodeParams, d: float, t_th: int = 1, rng=None
) -> Codeword | None:
    rows = system.rows if isinstance(system, SampledSystem) else np.asarray(system, dtype=float)
    if d <= 0 or t_th < 1:
        raise ValueError("need d > 0 and t_th >= 1")
    g = as_generator(rng)
    gram = rows.T @ rows
    inv = 1.0 / math.sqrt(params.alpha)
    for _ in range(t_th):
        supp, sgn = _local_search(gram, params.alpha, g)
        residual = float(np.linalg.norm(rows[:, supp] @ sgn) * inv)
        if residual <= d:
            return Codeword.from_arrays(params.n, supp, sgn.astype(int))
    return None


# -- threshold determinant -----------------------------------------------


def threshold_check(w_cand, m1: SketchRecord, m2: SketchRecord, theta_t: float) -> ThresholdResult:
    w_r1 = recover(w_cand, m1)
    w_r2 = recover(w_r1, m2)
    theta = angle(w_r1, w_r2)
    return ThresholdResult(theta <= theta_t, w_r1, theta)


# -- orchestration --------------------------------------------------------


def _validate(sketches: Sequence[SketchRecord], config: AttackConfig) -> None:
    if len(sketches) < 2:
        raise ValueError("the multi-use attack needs at least 2 sketches")
    params = sketches[0].params
    if any(s.params != params for s in sketches):
        raise ValueError("all sketches must share (n, alpha)")
    n = params.n
    if config.t_th < 1:
        raise ValueError("t_th must be >= 1")
    if config.solver == "svd":
        if len(sketches) > 2 and config.k < n - 1:
            raise ValueError(f"SVD mode needs k >= n-1 = {n - 1}, got {config.k}")
        if len(sketches) == 2 and config.k < n - 1:
            raise ValueError(f"two-sketch reduced solver needs k >= n-1 = {n - 1}")
    elif config.solver == "lsa":
        if config.k < 1:
            raise ValueError("LSA mode needs k >= 1")
    else:
        raise ValueError(f"unknown solver {config.solver!r}")


def run_attack(sketches: Sequence[SketchRecord], config: AttackConfig) -> AttackOutcome:
    """Sample -> solve -> threshold until acceptance or the iteration budget runs out."""
    _validate(sketches, config)
    g = config.stream.generator()
    params = sketches[0].params
    m1, m2 = sketches[0], sketches[1]
    reduced = config.solver == "svd" and len(sketches) == 2
    t0 = time.perf_counter()
    sources = None if reduced else equation_sources(sketches, config.solver)
    out = AttackOutcome(None, 0, False, sampler_time_total=time.perf_counter() - t0)
    d = config.residual_bound()

    for it in range(config.max_outer_iterations):
        out.outer_iterations = it + 1
        t0 = time.perf_counter()
        if not reduced:
            system = _sample_from_sources(sources, config.solver, config.k, g)
        t1 = time.perf_counter()
        out.sampler_time_total += t1 - t0
        try:
            if reduced:
                cand = two_sketch_reduced_solve(m1, m2, config.k, g)
            elif config.solver == "svd":
                cand = svd_null_solve(system)
            else:
                cw = lsa_solve(system, params, d, config.t_th, g)
                cand = None if cw is None else m1.matrix.T @ cw.dense()
        except RankDeficiencyError as exc:
            out.solver_time_total += time.perf_counter() - t1
            out.trace.append(f"reject: rank deficient ({exc.deficiency + 1}-dim null space)")
            continue
        t2 = time.perf_counter()
        out.solver_time_total += t2 - t1
        if cand is None:
            out.trace.append("reject: no codeword within residual bound")
            continue
        res = threshold_check(cand, m1, m2, config.theta_t)
        out.check_time_total += time.perf_counter() - t2
        if res.accepted:
            out.trace.append(f"accept: angle {math.degrees(res.angle):.4f} deg")
            out.recovered = res.template
            out.accepted = True
            return out
        out.trace.append(f"reject: angle {math.degrees(res.angle):.4f} deg > threshold")
    return out


def _attack_chunk(args) -> tuple[int, AttackOutcome]:
    index, sketches, config = args
    return index, run_attack(sketches, config)


def run_attack_parallel(
    sketches: Sequence[SketchRecord], config: AttackConfig, workers: int = 1, chunk: int = 64
) -> AttackOutcome:
    """Split the budget into independent chunks on distinct streams; the lowest accepted chunk wins.

    The winner is chosen by chunk index rather than completion order, so the
    outcome does not depend on scheduling.
    """
    _validate(sketches, config)
    n_chunks = max(1, math.ceil(config.max_outer_iterations / chunk))
    configs = [
        replace(
            config,
            max_outer_iterations=min(chunk, config.max_outer_iterations - i * chunk),
            stream=config.stream.child(i),
        )
        for i in range(n_chunks)
    ]
    merged = AttackOutcome(None, 0, False)

    def merge(res: AttackOutcome) -> bool:
        merged.outer_iterations += res.outer_iterations
        merged.sampler_time_total += res.sampler_time_total
        merged.solver_time_total += res.solver_time_total
        merged.check_time_total += res.check_time_total
        merged.trace.extend(res.trace)
        if res.accepted:
            merged.accepted, merged.recovered = True, res.recovered
        return res.accepted

    if workers <= 1:
        for cfg in configs:
            if merge(run_attack(sketches, cfg)):
                break
        return merged

    with ProcessPoolExecutor(max_workers=workers) as pool:
        pending = {}
        next_submit = 0
        results: dict[int, AttackOutcome] = {}
        next_merge = 0
        while next_merge < n_chunks:
            while next_submit < n_chunks and len(pending) < 2 * workers:
                fut = pool.submit(_attack_chunk, (next_submit, sketches, configs[next_submit]))
                pending[next_submit] = fut
                next_submit += 1
            idx, res = pending.pop(next_merge).result()
            results[idx] = res
            if merge(res):
                for fut in pending.values():
                    fut.cancel()
                break
            next_merge += 1
    return merged
