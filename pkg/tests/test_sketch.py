import math

import numpy as np
import pytest

import ironmask_lab.sketch as sketch_mod
from ironmask_lab.code import CodeParams, code_size_bits, decode, design_distance
from ironmask_lab.sketch import (
    DefenseParams,
    SketchRecord,
    authenticate,
    commit,
    defense_security_bits,
    enroll,
    iterated_hash,
    load_record,
    recover,
    save_record,
    serialize_codeword,
    sketch,
)
from ironmask_lab.sphere import angle, perturb_at_angle, random_unit

P64 = CodeParams(64, 4)
P512 = CodeParams(512, 16)


def test_sketch_maps_template_to_codeword(rng):
    w = random_unit(64, rng)
    sk, c = sketch(w, P64, rng)
    assert np.linalg.norm(sk.matrix @ w - c.dense()) <= 1e-8
    assert decode(sk.matrix @ w, P64) == c


def test_sketch_randomized():
    w = random_unit(512, 0)
    (a, ca), (b, cb) = sketch(w, P512, 1), sketch(w, P512, 2)
    assert not np.allclose(a.matrix, b.matrix)
    assert ca != cb


def test_sketch_rows_orthogonal_to_template(rng):
    w = random_unit(512, rng)
    sk, _ = sketch(w, P512, rng)
    assert int(np.sum(np.abs(sk.matrix @ w) <= 1e-8)) == 512 - 16


def test_sketch_dimension_mismatch():
    with pytest.raises(ValueError):
        sketch(random_unit(32, 0), P64, 0)


def test_sketch_record_rejects_non_orthogonal():
    with pytest.raises(ValueError):
        SketchRecord(np.ones((4, 4)), CodeParams(4, 2))


@pytest.mark.parametrize("params", [CodeParams(8, 2), P64, P512])
def test_round_trip_exact(params):
    g = np.random.default_rng(params.n)
    for _ in range(100):
        w = random_unit(params.n, g)
        sk, _ = sketch(w, params, g)
        assert np.linalg.norm(recover(w, sk) - w) <= 1e-6


def test_round_trip_within_half_distance(rng):
    half = design_distance(P64) / 2
    for _ in range(300):
        w = random_unit(64, rng)
        sk, _ = sketch(w, P64, rng)
        q = perturb_at_angle(w, rng.uniform(0, half), rng)
        assert np.linalg.norm(recover(q, sk) - w) <= 1e-6


def test_recover_unrelated_query_is_far():
    g = np.random.default_rng(17)
    theta = design_distance(P512)
    far = 0
    # 10^3 unrelated queries spread over 100 sketches
    for _ in range(100):
        w = random_unit(512, g)
        sk, _ = sketch(w, P512, g)
        far += sum(angle(recover(random_unit(512, g), sk), w) > theta for _ in range(10))
    assert far / 1000 >= 0.99


def test_noise_monotonicity(rng):
    theta = design_distance(P64)
    grid = [0.0, theta / 4, theta / 2, theta, 2 * theta]
    rates = []
    for beta in grid:
        ok = 0
        for _ in range(300):
            w = random_unit(64, rng)
            sk, _ = sketch(w, P64, rng)
            ok += np.linalg.norm(recover(perturb_at_angle(w, beta, rng), sk) - w) <= 1e-6
        rates.append(ok / 300)
    assert rates[0] == rates[1] == rates[2] == 1.0
    # sampling noise on 300 draws per point
    assert all(b <= a + 0.05 for a, b in zip(rates, rates[1:]))
    assert rates[-1] < 1.0


def test_extra_noise_composition(rng):
    theta_i, theta_a = math.radians(10), math.radians(30)
    cos = []
    for _ in range(4000):
        w1 = random_unit(128, rng)
        w2 = perturb_at_angle(w1, theta_i, rng)
        a, b = perturb_at_angle(w1, theta_a, rng), perturb_at_angle(w2, theta_a, rng)
        cos.append(a @ b)
    assert np.mean(cos) == pytest.approx(math.cos(theta_i) * math.cos(theta_a) ** 2, abs=0.01)


def test_enroll_authenticate_base(rng):
    w = random_unit(64, rng)
    rec = enroll(w, P64, DefenseParams(), 1, rng)
    assert len(rec.matrices) == 1 and rec.n_fake == 0
    assert authenticate(w, rec)
    q = perturb_at_angle(w, design_distance(P64) / 3, rng)
    assert authenticate(q, rec)


def test_enroll_with_decoys(rng):
    w = random_unit(512, rng)
    rec = enroll(w, P512, DefenseParams(n_fake=3), 2, rng)
    assert len(rec.matrices) == 4
    assert authenticate(w, rec)


def test_enroll_binding_matrix(rng):
    w = random_unit(64, rng)
    rec = enroll(w, P64, DefenseParams(n_fake=2), 1, rng, commit_binds_matrix=True)
    assert authenticate(w, rec)


def test_salted_position_is_shuffled():
    w = random_unit(64, 0)
    positions = set()
    for s in range(40):
        rec = enroll(w, P64, DefenseParams(n_fake=3), 1, s)
        positions.add(next(i for i, m in enumerate(rec.matrices) if np.count_nonzero(np.abs(m @ w) > 1e-8) == 4))
    assert len(positions) > 1


def test_salting_decode_count(monkeypatch, rng):
    w = random_unit(64, rng)
    for n_fake in (0, 1, 5):
        rec = enroll(w, P64, DefenseParams(n_fake=n_fake), 1, rng)
        calls = []
        real = sketch_mod.decode

        def counting(u, params):
            calls.append(1)
            return real(u, params)

        monkeypatch.setattr(sketch_mod, "decode", counting)
        assert authenticate(w, rec)
        monkeypatch.setattr(sketch_mod, "decode", real)
        assert len(calls) == n_fake + 1


def test_false_accept_random_queries(rng):
    w = random_unit(512, rng)
    rec = enroll(w, P512, DefenseParams(), 1, rng)
    assert not any(authenticate(random_unit(512, rng), rec) for _ in range(1000))


def test_tampered_commitment(rng):
    w = random_unit(64, rng)
    rec = enroll(w, P64, DefenseParams(), 1, rng)
    bad = bytearray(rec.commitment)
    bad[0] ^= 1
    rec2 = type(rec)(rec.params, rec.matrices, bytes(bad), rec.hash_cost, rec.commit_binds_matrix)
    assert not authenticate(w, rec2)


def test_commitment_construction(rng):
    w = random_unit(64, rng)
    sk, c = sketch(w, P64, rng)
    assert serialize_codeword(c) == b"".join(i.to_bytes(2, "big") + s.to_bytes(1, "big", signed=True) for i, s in zip(c.support, c.signs))
    assert commit(c, None, 3) == iterated_hash(serialize_codeword(c), 3)
    h1 = __import__("hashlib").sha256(serialize_codeword(c)).digest()
    assert iterated_hash(serialize_codeword(c), 2) == __import__("hashlib").sha256(h1).digest()
    assert commit(c, sk.matrix, 1) != commit(c, None, 1)
    with pytest.raises(ValueError):
        iterated_hash(b"x", 0)


def test_record_file_round_trip(tmp_path, rng):
    w = random_unit(64, rng)
    rec = enroll(w, P64, DefenseParams(n_fake=2), 4, rng, commit_binds_matrix=True)
    sidecar = save_record(rec, tmp_path / "r.json")
    assert sidecar.stat().st_size == 3 * 64 * 64 * 8
    back = load_record(tmp_path / "r.json")
    assert back.commitment == rec.commitment and back.hash_cost == 4 and back.commit_binds_matrix
    assert all(np.array_equal(a, b) for a, b in zip(back.matrices, rec.matrices))
    assert authenticate(w, back)


def test_record_file_truncated(tmp_path, rng):
    rec = enroll(random_unit(64, rng), P64, DefenseParams(n_fake=1), 1, rng)
    sidecar = save_record(rec, tmp_path / "r.json")
    sidecar.write_bytes(sidecar.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_record(tmp_path / "r.json")


def test_defense_params_validation():
    with pytest.raises(ValueError):
        DefenseParams(theta_a=math.pi / 2)
    with pytest.raises(ValueError):
        DefenseParams(n_fake=-1)


def test_defense_security_bits():
    assert defense_security_bits(CodeParams(512, 5), DefenseParams(n_fake=2**20)) == pytest.approx(63, abs=0.5)
    assert defense_security_bits(P512, DefenseParams()) == code_size_bits(P512)
    # exact value 50.4657; the quoted bound is that figure cut to two decimals
    assert defense_security_bits(CodeParams(512, 6), DefenseParams()) == pytest.approx(50.46, abs=0.01)
