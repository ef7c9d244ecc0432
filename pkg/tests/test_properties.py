"""Module invariants under the fixed five-seed matrix.

Counts quoted per invariant are totals over the seed matrix when a single
seed would be too slow at n=512.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ironmask_lab.sketch as sketch_mod
from conftest import SEEDS
from ironmask_lab.code import (
    CodeParams,
    Codeword,
    decode_dense,
    design_distance,
    enumerate_codewords,
    is_signed_permutation,
    neighbors,
    sample_codeword,
)
from ironmask_lab.lab.experiments import ExperimentSpec, simulate_sampler_success
from ironmask_lab.lab.report import Report, run_experiment
from ironmask_lab.plra import (
    AttackConfig,
    restart_cost_ratio,
    run_attack,
    sample_correct_equations,
    sampler_success_log2,
    sampler_success_lower_bound,
    sampler_success_prob,
    svd_null_solve,
)
from ironmask_lab.rotation import fixed_vector_candidates, random_signed_permutation
from ironmask_lab.sketch import DefenseParams, authenticate, enroll, recover, sketch
from ironmask_lab.sphere import (
    RandomStream,
    angle,
    naive_rotation,
    orthogonality_residual,
    random_rotation_mapping,
    random_unit,
    tangent_direction,
)

pytestmark = pytest.mark.criterion(11, "module invariants under a 5-seed matrix")

SHARE = len(SEEDS)  # n=512 loops run 1/SHARE of the quoted count per seed


def _perturb_rows(x, beta, g):
    u = g.standard_normal(x.shape)
    u -= (u * x).sum(axis=1, keepdims=True) * x
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return math.cos(beta) * x + math.sin(beta) * u


def _random_codewords(params, count, g):
    c = np.zeros((count, params.n))
    for row in c:
        row[g.choice(params.n, params.alpha, replace=False)] = g.choice([-1.0, 1.0], params.alpha)
    return c / math.sqrt(params.alpha)


# -- sphere-core ----------------------------------------------------------


def test_isometry(rng):
    for n in (8, 64, 512):
        for _ in range(20):
            m = random_rotation_mapping(random_unit(n, rng), random_unit(n, rng), rng)
            v, w = random_unit(n, rng), random_unit(n, rng)
            assert abs(angle(m @ v, m @ w) - angle(v, w)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 40), seed=st.integers(0, 2**32 - 1))
def test_isometry_any_dimension(n, seed):
    g = np.random.default_rng(seed)
    m = random_rotation_mapping(random_unit(n, g), random_unit(n, g), g)
    v, w = random_unit(n, g), random_unit(n, g)
    assert abs(angle(m @ v, m @ w) - angle(v, w)) <= 1e-8
    assert orthogonality_residual(m) <= 1e-9


@pytest.mark.parametrize("n", [8, 64, 512])
def test_rotation_mapping_residual(n, rng):
    reps = 1000 if n < 512 else 1000 // SHARE
    for _ in range(reps):
        w, c = random_unit(n, rng), random_unit(n, rng)
        assert np.linalg.norm(random_rotation_mapping(w, c, rng) @ w - c) <= 1e-8


def test_tangent_condition(rng):
    for n in (3, 16, 512):
        w = random_unit(n, rng)
        for _ in range(200):
            assert abs(tangent_direction(w, rng) @ w) <= 1e-9


def test_naive_rotation_fixed_space(rng):
    for n in (4, 16, 128):
        t, c = random_unit(n, rng), random_unit(n, rng)
        r = naive_rotation(t, c)
        sv = np.linalg.svd(r - np.eye(n), compute_uv=False)
        assert int(np.sum(sv <= 1e-8)) == n - 2


# -- hyper-ecc -------------------------------------------------------------


def test_minimum_distance(rng):
    params = CodeParams(512, 16)
    a = _random_codewords(params, 10_000, rng)
    b = _random_codewords(params, 10_000, rng)
    cos = (a * b).sum(axis=1)
    distinct = np.abs(cos) < 1 - 1e-9  # drops c2 = +-c1
    assert distinct.sum() >= 9_990
    assert np.all(np.arccos(np.clip(cos[distinct], -1, 1)) > design_distance(params))


def test_decoding_radius(rng):
    params = CodeParams(512, 16)
    c = _random_codewords(params, 10_000, rng)
    beta = rng.uniform(0, design_distance(params) / 2, size=(10_000, 1))
    # exact-angle perturbation, batched
    noise = rng.standard_normal(c.shape)
    noise -= (noise * c).sum(axis=1, keepdims=True) * c
    noise /= np.linalg.norm(noise, axis=1, keepdims=True)
    u = np.cos(beta) * c + np.sin(beta) * noise
    assert np.abs(decode_dense(u, 16) - c).max() <= 1e-12


def test_decode_is_argmax(rng):
    for n, alpha in [(5, 1), (6, 2), (8, 3), (10, 3)]:
        params = CodeParams(n, alpha)
        dense = np.array([c.dense() for c in enumerate_codewords(params)])
        u = rng.standard_normal((40, n))
        best = (u @ dense.T).max(axis=1)
        got = (u * decode_dense(u, alpha)).sum(axis=1)
        assert np.allclose(got, best, atol=1e-12)


def test_neighbors(rng):
    for n, alpha in [(8, 2), (64, 4), (512, 16)]:
        c = sample_codeword(CodeParams(n, alpha), rng)
        nb = neighbors(c)
        assert len(nb) == 2 * alpha * (n - alpha)
        d = np.array([x.dense() for x in nb])
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
        assert np.abs(np.linalg.norm(d - c.dense(), axis=1) - math.sqrt(2) / math.sqrt(alpha)).max() <= 1e-12


# -- ironmask ---------------------------------------------------------------


@pytest.mark.parametrize("n,alpha", [(8, 2), (64, 4), (512, 16)])
def test_round_trip(n, alpha, rng):
    params = CodeParams(n, alpha)
    reps = 1000 if n < 512 else 1000 // SHARE
    for _ in range(reps):
        w = random_unit(n, rng)
        sk, _ = sketch(w, params, rng)
        assert np.linalg.norm(recover(w, sk) - w) <= 1e-6


def test_noise_monotonicity(rng):
    # codeword coordinates: recovery through M is exact iff decode returns c
    params = CodeParams(64, 4)
    theta = design_distance(params)
    c = _random_codewords(params, 4000, rng)
    rates = []
    for beta in (0.0, theta / 4, theta / 2, theta, 2 * theta):
        q = _perturb_rows(c, beta, rng) if beta else c
        rates.append(float(np.mean(np.abs(decode_dense(q, 4) - c).max(axis=1) <= 1e-12)))
    se = 3 * math.sqrt(0.25 / 4000)
    assert all(b <= a + se for a, b in zip(rates, rates[1:]))
    assert rates[0] == 1.0


def test_extra_noise_composition(rng):
    for theta_i, theta_a in [(0.0, 0.5), (0.2, 0.3), (0.4, 0.8)]:
        w1 = np.array([random_unit(64, rng) for _ in range(5000)])
        w2 = _perturb_rows(w1, theta_i, rng) if theta_i else w1
        a, b = _perturb_rows(w1, theta_a, rng), _perturb_rows(w2, theta_a, rng)
        mean = float((a * b).sum(axis=1).mean())
        assert mean == pytest.approx(math.cos(theta_i) * math.cos(theta_a) ** 2, abs=0.01)


def test_salting_decode_calls(rng, monkeypatch):
    params = CodeParams(64, 4)
    real = sketch_mod.decode
    calls = []
    monkeypatch.setattr(sketch_mod, "decode", lambda u, p: calls.append(1) or real(u, p))
    for n_fake in (0, 2, 7):
        w = random_unit(64, rng)
        rec = enroll(w, params, DefenseParams(n_fake=n_fake), 1, rng)
        calls.clear()
        assert authenticate(w, rec)
        assert len(calls) == n_fake + 1


# -- plra --------------------------------------------------------------------


def test_correct_matrix_soundness(rng):
    params = CodeParams(64, 4)
    w = random_unit(64, rng)
    pairs = [sketch(w, params, rng) for _ in range(63)]
    sks, cws = [p[0] for p in pairs], [p[1] for p in pairs]
    for k in (63, 80, 126):
        sys_ = sample_correct_equations(sks, cws, "svd", k, rng)
        assert abs(svd_null_solve(sys_) @ w) >= 1 - 1e-6


def test_sampler_lower_bounds(seed):
    g = np.random.default_rng(seed)
    for _ in range(200):
        n = int(g.integers(16, 600))
        alpha = int(g.integers(1, max(2, n // 8)))
        t_prime = int(g.integers(1, n))
        k = int(g.integers(1, min(t_prime * n, n - 1) + 1))
        exact = sampler_success_prob(n, alpha, k, t_prime)
        assert exact >= sampler_success_lower_bound(n, alpha, k, t_prime) * (1 - 1e-9)
        if t_prime > 2:
            assert exact >= math.exp(-2 * alpha) * (1 - 1e-9)


def test_antipodal_closure(seed):
    g = np.random.default_rng(seed)
    params = CodeParams(64, 4)
    w = random_unit(64, g)
    for solver, count, k in (("svd", 63, 63), ("lsa", 3, 40)):
        sks = [sketch(w, params, g)[0] for _ in range(count)]
        out = run_attack(sks, AttackConfig(solver, k, max_outer_iterations=20_000, stream=RandomStream(seed)))
        assert out.accepted
        assert min(angle(out.recovered, w), angle(out.recovered, -w)) <= 1e-4


def test_restart_cap_optimal(seed):
    g = np.random.default_rng(seed)
    for p_out in g.uniform(1e-4, 1 - 1e-4, size=200):
        assert int(np.argmin([restart_cost_ratio(t, p_out) for t in range(1, 64)])) == 0


def test_attack_determinism(seed):
    params = CodeParams(64, 4)
    g = np.random.default_rng(seed)
    w = random_unit(64, g)
    sks = [sketch(w, params, g)[0] for _ in range(3)]
    cfg = AttackConfig("lsa", 40, max_outer_iterations=200, stream=RandomStream(seed, 7))
    a, b = run_attack(sks, cfg), run_attack(sks, cfg)
    assert (a.trace, a.outer_iterations, a.accepted) == (b.trace, b.outer_iterations, b.accepted)


# -- aux-attacks ------------------------------------------------------------


def _maps_code(t, dense, alpha):
    img = dense @ t.T
    nz = np.abs(img) > 1e-9
    return bool(np.all(nz.sum(axis=1) == alpha) and np.allclose(np.abs(img[nz]), 1 / math.sqrt(alpha), atol=1e-9))


def test_structure_theorem(rng):
    dense = np.array([c.dense() for c in enumerate_codewords(CodeParams(6, 3))])
    assert dense.shape[0] == 160
    for _ in range(100):
        q, r = np.linalg.qr(rng.standard_normal((6, 6)))
        q = q * np.sign(np.diag(r))
        assert _maps_code(q, dense, 3) == is_signed_permutation(q)
        t = random_signed_permutation(6, rng)
        assert _maps_code(t, dense, 3) and is_signed_permutation(t)


def test_tmto_half_split(rng):
    halves = np.array([c.dense() for c in enumerate_codewords(CodeParams(8, 2))])
    sums = halves[:, None, :] + halves[None, :, :]
    disjoint = ~np.any(halves[:, None, :] * halves[None, :, :], axis=2)
    for c in enumerate_codewords(CodeParams(8, 4)):
        hit = np.all(np.abs(sums - math.sqrt(2) * c.dense()) <= 1e-12, axis=2) & disjoint
        assert int(hit.sum()) == math.comb(4, 2)


def test_rotation_fixed_space(rng):
    w = random_unit(512, rng)
    c = Codeword(512, tuple(range(16)), (1,) * 16)
    r = naive_rotation(w, c.dense())
    kept = fixed_vector_candidates(random_signed_permutation(512, rng) @ r, 8, rng)
    assert kept.shape[0] > 0
    assert (np.linalg.norm(kept @ r.T - kept, axis=1) / np.linalg.norm(kept, axis=1)).max() <= 1e-6


# -- labcli -------------------------------------------------------------------


def test_report_reproducible(seed, tmp_path):
    spec = dict(scenario="noiseless", n=64, alpha=4, num_sketches=3, solver="lsa", k=40, trials=20, measure="rates", seed=seed)
    bodies = []
    for name in ("a", "b"):
        run_experiment(ExperimentSpec(**spec, output_path=str(tmp_path / name / "r.json")))
        bodies.append(sorted((p.name, p.read_bytes()) for p in (tmp_path / name).glob("r_*.csv") if "timing" not in p.name))
    assert bodies[0] == bodies[1]


def test_bernoulli_agreement(seed):
    g = np.random.default_rng(seed)
    for n, alpha, k, t_prime in [(64, 4, 63, 63), (128, 8, 100, 2), (512, 16, 220, 2), (512, 16, 200, 4)]:
        log2_p = sampler_success_log2(n, alpha, k, t_prime)
        trials = int(math.ceil(2**10 * 2.0**-log2_p))
        hits = simulate_sampler_success(n, alpha, k, t_prime, trials, g)
        assert abs(math.log2(hits / trials) - log2_p) <= 0.3


def test_t_all_identity(seed):
    spec = ExperimentSpec(
        scenario="noiseless", n=64, alpha=4, num_sketches=3, solver="lsa", k=40, trials=40, measure="rates", seed=seed
    )
    rep = run_experiment(spec)
    assert rep.check_t_all()
    assert Report.from_json(rep.to_json()).check_t_all()
