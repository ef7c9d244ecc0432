"""Experiment harness: challenger simulation, rate estimation, sweeps."""

from __future__ import annotations

import functools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from ..code import CodeParams, code_size_bits, decode_dense
from ..plra import (
    AttackConfig,
    RateModel,
    RankDeficiencyError,
    _sample_from_sources,
    equation_sources,
    expected_runtime,
    lsa_solve,
    reduced_guess_log2,
    reduced_zero_set_sizes,
    rows_per_source,
    run_attack,
    sample_correct_equations,
    sampler_success_log2,
    svd_null_solve,
    threshold_check,
    two_sketch_reduced_solve,
)
from ..rotation import rotation_attack, structured_sketch
from ..sketch import sketch
from ..sphere import RandomStream, angle, as_generator, as_template, perturb_at_angle, random_unit
from ..tmto import tmto_attack, tmto_cost

SCENARIOS = ("noiseless", "noisy", "defense", "tmto", "rotation")
MAX_CHALLENGER_ATTEMPTS = 10_000


@dataclass
class ExperimentSpec:
    scenario: str = "noiseless"
    n: int = 64
    alpha: int = 4
    num_sketches: int = 3
    noise: float = 0.0  # pairwise template angle, radians
    solver: str = "lsa"
    k: int = 40
    theta_t: float = math.radians(10.0)
    d: float | None = None
    t_th: int = 1
    max_outer_iterations: int = 100_000
    trials: int = 10
    measure: str = "attack"  # attack: end-to-end runs; rates: planted-correct estimation
    trials_per_instance: int = 100
    timing_solves: int = 0
    bernoulli_trials: int = 0
    theta_a: float = 0.0
    theta_i: list[float] = field(default_factory=lambda: [0.0])
    n_fake: int = 0
    p_r_target: float = 0.9
    m_rows: int = 4
    bucket: float = 2.0**-20
    rotation_m: int = 8
    seed: int = 0
    workers: int = 1
    output_path: str | None = None
    template_path: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.measure not in ("attack", "rates"):
            raise ValueError(f"measure must be 'attack' or 'rates', got {self.measure!r}")
        if not 0 <= self.noise < math.pi / 2:
            raise ValueError("noise must lie in [0, pi/2)")
        if self.trials_per_instance < 1:
            raise ValueError("trials_per_instance must be >= 1")

    @property
    def params(self) -> CodeParams:
        return CodeParams(self.n, self.alpha)

    def attack_config(self, stream: RandomStream) -> AttackConfig:
        return AttackConfig(
            solver=self.solver,
            k=self.k,
            theta_t=self.theta_t,
            d=self.d,
            t_th=self.t_th,
            max_outer_iterations=self.max_outer_iterations,
            stream=stream,
        )

    def stream(self, index: int) -> RandomStream:
        """Per-task stream: stream_id = seed XOR index."""
        return RandomStream(self.seed, self.seed ^ index)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(**data)


def parallel_map(func: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map, optionally over a process pool."""
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


# -- challenger -----------------------------------------------------------


def challenger_noise_angle(theta_prime: float) -> float:
    """Per-sample angle from the centre giving expected pairwise angle ``theta_prime``."""
    return math.acos(math.sqrt(math.cos(theta_prime)))


def challenger_sample(w, q: int, theta_prime: float, rng, slack: float = 0.05) -> list[np.ndarray]:
    """``q`` noisy readings of ``w``, pairwise within ``theta_prime * (1 + slack)``.

    Each reading sits at a fixed angle from ``w``; a reading that breaks the
    pairwise bound against earlier ones is redrawn, at most
    ``MAX_CHALLENGER_ATTEMPTS`` times per reading.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    w = as_template(w, "w")
    if theta_prime == 0:
        return [w.copy() for _ in range(q)]
    g = as_generator(rng)
    beta = challenger_noise_angle(theta_prime)
    bound = math.cos(theta_prime * (1 + slack))
    out = np.empty((q, w.size))
    for i in range(q):
        for _ in range(MAX_CHALLENGER_ATTEMPTS):
            cand = perturb_at_angle(w, beta, g)
            if i == 0 or (out[:i] @ cand).min() >= bound:
                out[i] = cand
                break
        else:
            raise RuntimeError(f"challenger could not place reading {i} within {MAX_CHALLENGER_ATTEMPTS} attempts")
    return list(out)


# -- rate estimation ------------------------------------------------------


@dataclass
class RateEstimate:
    model: RateModel | None
    log2_r_k: float
    p_k: float
    p_k_ci: tuple[float, float]
    p_f: float
    p_f_ci: tuple[float, float]
    trials: int
    accepted: int
    parallel: int
    t_k: float
    t_k_se: float
    solves_timed: int
    d: float | None
    p_k_upper_only: bool = False
    bernoulli_trials: int = 0
    bernoulli_successes: int = 0

    @property
    def p_kf(self) -> float:
        return self.parallel / self.trials if self.trials else 0.0

    @property
    def t_all(self) -> float:
        return expected_runtime(self.model) if self.model is not None else math.inf


def simulate_sampler_success(n: int, alpha: int, k: int, t_prime: int, trials: int, rng, chunk: int = 1 << 22) -> int:
    """Count correct systems among ``trials`` simulated sampler draws.

    Single-row sources are independent Bernoulli(1 - alpha/n) checks, drawn
    in bulk as a binomial; multi-row sources draw a hypergeometric count of
    zero-coordinate rows.
    """
    g = as_generator(rng)
    counts = rows_per_source(k, t_prime)
    singles = sum(1 for l in counts if l == 1)
    multi = [l for l in counts if l > 1]
    hits = 0
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        ok = np.ones(size, dtype=bool)
        if singles:
            ok &= g.binomial(singles, (n - alpha) / n, size=size) == singles
        for l in multi:
            ok &= g.hypergeometric(n - alpha, alpha, l, size=size) == l
        hits += int(ok.sum())
        done += size
    return hits


def _t_prime(spec: ExperimentSpec) -> int:
    return spec.num_sketches if spec.solver == "svd" else spec.num_sketches - 1


def analytic_log2_r_k(spec: ExperimentSpec) -> float:
    if spec.solver == "svd" and spec.num_sketches == 2:
        return -reduced_guess_log2(spec.n, spec.alpha, spec.k)
    return -sampler_success_log2(spec.n, spec.alpha, spec.k, _t_prime(spec))


def load_templates(path, n: int | None = None) -> np.ndarray:
    """Read templates: ``.csv`` is one template per line, anything else raw little-endian float64 rows.

    Rows are normalized; a zero row is an error.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    else:
        raw = np.fromfile(path, dtype="<f8")
        if n is None:
            raise ValueError("raw template files need the dimension n")
        if raw.size % n:
            raise ValueError(f"{path}: {raw.size} floats is not a multiple of n={n}")
        data = raw.reshape(-1, n)
    if n is not None and data.shape[1] != n:
        raise ValueError(f"{path}: templates have dimension {data.shape[1]}, expected {n}")
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    if data.shape[0] == 0 or (norms == 0).any():
        raise ValueError(f"{path}: empty file or zero template")
    return data / norms


@functools.lru_cache(maxsize=4)
def _cached_templates(path: str, n: int) -> np.ndarray:
    return load_templates(path, n)


def planted_template(spec: ExperimentSpec, index: int, g: np.random.Generator) -> np.ndarray:
    """Template for trial ``index``: a file row (cycled) or a fresh uniform draw."""
    if spec.template_path:
        rows = _cached_templates(spec.template_path, spec.n)
        return rows[index % rows.shape[0]].copy()
    return random_unit(spec.n, g)


def _instance(spec: ExperimentSpec, g: np.random.Generator, index: int = 0):
    w = planted_template(spec, index, g)
    templates = challenger_sample(w, spec.num_sketches, spec.noise, g)
    pairs = [sketch(t, spec.params, g) for t in templates]
    return w, [p[0] for p in pairs], [p[1] for p in pairs]


def _correct_zero_sets(codewords, k: int, n: int, g: np.random.Generator):
    u1_size, u2_size = reduced_zero_set_sizes(k)
    zsets = []
    for c, size in zip(codewords[:2], (u1_size, u2_size)):
        mask = np.ones(n, dtype=bool)
        mask[list(c.support)] = False
        zsets.append(g.choice(np.flatnonzero(mask), size=size, replace=False))
    return zsets


def _planted_residuals(spec: ExperimentSpec, index: int, samples: int) -> list[float]:
    g = spec.stream(index).generator()
    _, sketches, codewords = _instance(spec, g, index)
    sources = equation_sources(sketches, "lsa")
    c1 = codewords[0].dense()
    return [
        float(np.linalg.norm(sample_correct_equations(sketches, codewords, "lsa", spec.k, g, sources).rows @ c1))
        for _ in range(samples)
    ]


def calibrate_residual_bound(spec: ExperimentSpec, samples: int = 400, quantile: float = 99.0) -> float:
    """``quantile``-th percentile of the true codeword's residual on planted-correct systems."""
    per = max(1, min(samples, spec.trials_per_instance))
    n_inst = math.ceil(samples / per)
    base = 1 << 40  # keep calibration streams apart from trial streams
    res = parallel_map(_ResidualTask(spec, per), [base + i for i in range(n_inst)], spec.workers)
    return float(np.percentile(np.concatenate(res)[:samples], quantile))


@dataclass
class _ResidualTask:
    spec: ExperimentSpec
    samples: int

    def __call__(self, index: int) -> list[float]:
        return _planted_residuals(self.spec, index, self.samples)


@dataclass
class _RateTask:
    spec: ExperimentSpec
    d: float | None

    def __call__(self, job: tuple[int, int]) -> dict[str, Any]:
        index, count = job
        spec = self.spec
        g = spec.stream(index).generator()
        w, sketches, codewords = _instance(spec, g, index)
        params = spec.params
        reduced = spec.solver == "svd" and spec.num_sketches == 2
        sources = None if reduced else equation_sources(sketches, spec.solver)
        accepted = parallel = 0
        times = []
        for _ in range(count):
            if reduced:
                zsets = _correct_zero_sets(codewords, spec.k, spec.n, g)
            else:
                system = sample_correct_equations(sketches, codewords, spec.solver, spec.k, g, sources)
            t0 = time.perf_counter()
            try:
                if reduced:
                    cand = two_sketch_reduced_solve(sketches[0], sketches[1], spec.k, g, zero_sets=zsets)
                elif spec.solver == "svd":
                    cand = svd_null_solve(system)
                else:
                    cw = lsa_solve(system, params, self.d, spec.t_th, g)
                    cand = None if cw is None else sketches[0].matrix.T @ cw.dense()
            except RankDeficiencyError:
                cand = None
            times.append(time.perf_counter() - t0)
            if cand is None:
                continue
            res = threshold_check(cand, sketches[0], sketches[1], spec.theta_t)
            if res.accepted:
                accepted += 1
                if min(angle(res.template, w), angle(res.template, -w)) <= spec.theta_t:
                    parallel += 1
        return {"trials": count, "accepted": accepted, "parallel": parallel, "times": times}


def _jobs(total: int, per: int) -> list[tuple[int, int]]:
    return [(i, min(per, total - i * per)) for i in range(math.ceil(total / per))]


def estimate_rates(spec: ExperimentSpec) -> RateEstimate:
    """r_k analytically, t_k by timing, p_k/p_f on planted-correct systems."""
    log2_rk = analytic_log2_r_k(spec)
    d = None
    if spec.solver == "lsa":
        if spec.d is not None:
            d = spec.d
        elif spec.noise == 0:
            d = 1e-6 * math.sqrt(spec.k)
        else:
            d = calibrate_residual_bound(spec)
    parts = parallel_map(_RateTask(spec, d), _jobs(spec.trials, spec.trials_per_instance), spec.workers)
    trials = sum(p["trials"] for p in parts)
    accepted = sum(p["accepted"] for p in parts)
    parallel = sum(p["parallel"] for p in parts)
    times = np.array([t for p in parts for t in p["times"]])
    if spec.timing_solves > times.size:
        extra = _time_unconditioned(spec, d, spec.timing_solves - times.size)
        times = np.concatenate([times, extra])
    t_k = float(times.mean()) if times.size else math.nan
    t_k_se = float(times.std(ddof=1) / math.sqrt(times.size)) if times.size > 1 else math.nan

    upper_only = accepted == 0
    p_k = accepted / trials if trials else 0.0
    p_k_ci = (0.0, min(1.0, 3.0 / trials)) if upper_only and trials else wilson_interval(accepted, trials)
    p_f = parallel / accepted if accepted else 0.0
    p_f_ci = wilson_interval(parallel, accepted)
    model = None
    if accepted and parallel and t_k > 0:
        model = RateModel(2.0**log2_rk, t_k, p_k, p_f if spec.noise > 0 else 1.0)

    hits = 0
    if spec.bernoulli_trials:
        t_prime = _t_prime(spec)
        hits = simulate_sampler_success(
            spec.n, spec.alpha, spec.k, t_prime, spec.bernoulli_trials, spec.stream((1 << 41) + 1)
        )
    return RateEstimate(
        model=model,
        log2_r_k=log2_rk,
        p_k=p_k,
        p_k_ci=p_k_ci,
        p_f=p_f,
        p_f_ci=p_f_ci,
        trials=trials,
        accepted=accepted,
        parallel=parallel,
        t_k=t_k,
        t_k_se=t_k_se,
        solves_timed=int(times.size),
        d=d,
        p_k_upper_only=upper_only,
        bernoulli_trials=spec.bernoulli_trials,
        bernoulli_successes=hits,
    )


def _time_unconditioned(spec: ExperimentSpec, d: float | None, count: int) -> np.ndarray:
    """Solver wall times on ordinary (unconditioned) sampled systems."""
    g = spec.stream((1 << 41) + 2).generator()
    _, sketches, _ = _instance(spec, g)
    reduced = spec.solver == "svd" and spec.num_sketches == 2
    sources = None if reduced else equation_sources(sketches, spec.solver)
    out = np.empty(count)
    for i in range(count):
        system = None if reduced else _sample_from_sources(sources, spec.solver, spec.k, g)
        t0 = time.perf_counter()
        try:
            if reduced:
                two_sketch_reduced_solve(sketches[0], sketches[1], spec.k, g)
            elif spec.solver == "svd":
                svd_null_solve(system)
            else:
                lsa_solve(system, spec.params, d, spec.t_th, g)
        except RankDeficiencyError:
            pass
        out[i] = time.perf_counter() - t0
    return out


# -- end-to-end attack trials --------------------------------------------


@dataclass
class _AttackTask:
    spec: ExperimentSpec

    def __call__(self, index: int) -> dict[str, Any]:
        spec = self.spec
        g = spec.stream(index).generator()
        w, sketches, _ = _instance(spec, g, index)
        t0 = time.perf_counter()
        out = run_attack(sketches, spec.attack_config(spec.stream(index).child(1)))
        wall = time.perf_counter() - t0
        err = None
        if out.recovered is not None:
            err = min(angle(out.recovered, w), angle(out.recovered, -w))
        return {
            "trial": index,
            "accepted": out.accepted,
            "iterations": out.outer_iterations,
            "recovered_angle": err,
            "success": bool(out.accepted and err is not None and err <= spec.theta_t),
            "wall_time": wall,
            "solver_time": out.solver_time_total,
        }


def attack_trials(spec: ExperimentSpec) -> list[dict[str, Any]]:
    return parallel_map(_AttackTask(spec), list(range(spec.trials)), spec.workers)


# -- defense sweep ---------------------------------------------------------


def nearest_codeword_angle(params: CodeParams, trials: int, rng, chunk: int = 4096) -> float:
    """Mean angle between a uniform unit vector and its decoded codeword."""
    g = as_generator(rng)
    total, done = 0.0, 0
    while done < trials:
        size = min(chunk, trials - done)
        u = g.standard_normal((size, params.n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        cos = (u * decode_dense(u, params.alpha)).sum(axis=1)
        total += float(np.arccos(np.clip(cos, -1, 1)).sum())
        done += size
    return total / trials


def _perturb_rows(x: np.ndarray, beta: float, g: np.random.Generator) -> np.ndarray:
    if beta == 0:
        return x.copy()
    u = g.standard_normal(x.shape)
    u -= (u * x).sum(axis=1, keepdims=True) * x
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    out = math.cos(beta) * x + math.sin(beta) * u
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def recovery_rate(params: CodeParams, theta_a: float, theta_i: float, trials: int, rng, chunk: int = 2048) -> int:
    """Successful recoveries out of ``trials`` with enrollment noise ``theta_a``, query noise ``theta_i``.

    Worked in codeword coordinates: a sketch is orthogonal and independent of
    both noise directions, so ``M w`` is ``c`` perturbed by ``theta_a`` and the
    query image is that perturbed again by ``theta_i``.
    """
    g = as_generator(rng)
    n, alpha = params.n, params.alpha
    hits, done = 0, 0
    while done < trials:
        size = min(chunk, trials - done)
        c = np.zeros((size, n))
        for row in c:
            row[g.choice(n, size=alpha, replace=False)] = g.choice(np.array([-1.0, 1.0]), size=alpha)
        c /= math.sqrt(alpha)
        query = _perturb_rows(_perturb_rows(c, theta_a, g), theta_i, g)
        hits += int((np.abs(decode_dense(query, alpha) - c).max(axis=1) < 1e-12).sum())
        done += size
    return hits


def solve_extra_noise(theta_r: float, theta_i: float) -> float:
    """theta_a with cos(theta_r) = cos(theta_i) cos^2(theta_a); NaN when theta_i > theta_r."""
    ratio = math.cos(theta_r) / math.cos(theta_i)
    if ratio > 1 or ratio < 0:
        return math.nan
    return math.acos(math.sqrt(ratio))


@dataclass
class DefenseRow:
    alpha: int
    theta_i: float
    theta_a: float
    p_r: float
    theta_r: float
    bits: float
    trials: int
    successes: int


def defense_sweep(
    params: CodeParams,
    p_r_target: float,
    theta_grid: Sequence[float],
    trials: int = 2000,
    rng=None,
    theta_r_trials: int = 10_000,
    n_fake: int = 0,
    theta_a: float | None = None,
) -> tuple[list[DefenseRow], float | None]:
    """Table rows over ``theta_grid`` plus the interpolated theta_i where p_r hits ``p_r_target``.

    theta_a is solved per grid point from the measured theta_r unless given.
    """
    if not theta_grid:
        raise ValueError("theta grid must be non-empty")
    g = as_generator(rng)
    theta_r = nearest_codeword_angle(params, theta_r_trials, g)
    bits = code_size_bits(params) + math.log2(n_fake + 1)
    rows = []
    for ti in theta_grid:
        ta = solve_extra_noise(theta_r, ti) if theta_a is None else theta_a
        if math.isnan(ta):
            rows.append(DefenseRow(params.alpha, ti, ta, math.nan, theta_r, bits, 0, 0))
            continue
        hits = recovery_rate(params, ta, ti, trials, g)
        rows.append(DefenseRow(params.alpha, ti, ta, hits / trials, theta_r, bits, trials, hits))
    return rows, crossing(rows, p_r_target)


def crossing(rows: Sequence[DefenseRow], target: float) -> float | None:
    """Linear interpolation of theta_i at which p_r falls through ``target``."""
    pts = sorted((r.theta_i, r.p_r) for r in rows if not math.isnan(r.p_r))
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if (y0 - target) * (y1 - target) <= 0 and y0 != y1:
            return x0 + (target - y0) * (x1 - x0) / (y1 - y0)
    return None


# -- auxiliary attacks -----------------------------------------------------


@dataclass
class _TmtoTask:
    spec: ExperimentSpec

    def __call__(self, index: int) -> dict[str, Any]:
        spec = self.spec
        g = spec.stream(index).generator()
        _, sketches, codewords = _instance(spec, g, index)
        cands = tmto_attack(sketches[0], sketches[1], spec.m_rows, spec.bucket, g)
        truth = codewords[0]
        return {
            "trial": index,
            "candidates": len(cands),
            "success": truth in cands or (-truth) in cands,
        }


def tmto_trials(spec: ExperimentSpec) -> list[dict[str, Any]]:
    return parallel_map(_TmtoTask(spec), list(range(spec.trials)), spec.workers)


@dataclass
class _RotationTask:
    spec: ExperimentSpec

    def __call__(self, index: int) -> dict[str, Any]:
        spec = self.spec
        g = spec.stream(index).generator()
        w = planted_template(spec, index, g)
        m = structured_sketch(w, spec.params, g)
        v = rotation_attack(m, spec.params, spec.rotation_m, spec.theta_t, g)
        err = None if v is None else min(angle(v, w), angle(v, -w))
        return {
            "trial": index,
            "found": v is not None,
            "recovered_angle": err,
            "success": err is not None and err < spec.theta_t,
        }


def rotation_trials(spec: ExperimentSpec) -> list[dict[str, Any]]:
    return parallel_map(_RotationTask(spec), list(range(spec.trials)), spec.workers)


__all__ = [
    "ExperimentSpec",
    "RateEstimate",
    "DefenseRow",
    "attack_trials",
    "calibrate_residual_bound",
    "challenger_sample",
    "defense_sweep",
    "estimate_rates",
    "nearest_codeword_angle",
    "recovery_rate",
    "rotation_trials",
    "simulate_sampler_success",
    "solve_extra_noise",
    "tmto_cost",
    "tmto_trials",
    "wilson_interval",
]
