import random

import pytest
from hypothesis import given, settings, strategies as st

from dpdice.errors import ConfigurationError, MacCheckError, MaterialExhausted, MaterialReuse
from dpdice.mpc import (AuthShare, CpContext, FieldParams, TrustedDealer, centered_lift,
                        dh_input_share, interpolate_lookup, mac_check, mask_inputs, mul_shares,
                        open_values, read_party_material, reconstruct, reconstruct_mac,
                        reveal_checked, run_lockstep, write_party_material, zero_test,
                        zero_test_material)


def make_contexts(field, c, seed=0, **prepare):
    dealer = TrustedDealer(field, c, seed=seed)
    mat = dealer.prepare(**prepare)
    ctxs = [CpContext(pm, b"test-session", random.Random(100 + j))
            for j, pm in enumerate(mat.parties)]
    return dealer, mat, ctxs


def reveal(ctxs, shares_per_party):
    return run_lockstep([reveal_checked(ctx, sh) for ctx, sh in zip(ctxs, shares_per_party)])


def by_party(share_lists):
    """[[x0 shares...], [x1 shares...]] -> per-party lists."""
    return [list(col) for col in zip(*share_lists)]


# ---------------------------------------------------------------- dealer and shares

def test_dealer_shares_reconstruct_with_valid_mac(field):
    dealer = TrustedDealer(field, 3, seed=1)
    rng = random.Random(2)
    for _ in range(1000):
        x = field.random(rng)
        sh = dealer.share(x)
        assert reconstruct(sh, field.p) == x
        assert reconstruct_mac(sh, field.p) == x * dealer.delta % field.p


def test_dealer_is_deterministic_under_seed(field):
    a = TrustedDealer(field, 2, seed=5).prepare(rand=3, rand2=2, chain_length=4)
    b = TrustedDealer(field, 2, seed=5).prepare(rand=3, rand2=2, chain_length=4)
    assert a.parties[0].rand == b.parties[0].rand
    assert a.parties[1].expchain == b.parties[1].expchain
    assert a.mac_key == b.mac_key != 0


def test_dealer_bit_bundles_encode_uniform_values_below_p(small_field):
    p, L = small_field.p, small_field.bits
    mat = TrustedDealer(small_field, 2, seed=3).prepare(rand2=4000)
    values = []
    for k in range(4000):
        bits = [reconstruct([mat.parties[j].rand2[k][t] for j in range(2)], p) for t in range(L)]
        assert set(bits) <= {0, 1}
        values.append(sum(b << t for t, b in enumerate(bits)))
    assert max(values) < p
    # 10 equal-width buckets over [0, p); each should hold about 400
    counts = [0] * 10
    for v in values:
        counts[v * 10 // p] += 1
    assert all(300 < n < 500 for n in counts)


def test_exp_chain_contents(small_field):
    p, L = small_field.p, small_field.bits
    mat = TrustedDealer(small_field, 3, seed=4).prepare(rand2=5, chain_length=L)
    for k in range(5):
        chains = [pm.expchain[k] for pm in mat.parties]
        inv = reconstruct([ch.inverse for ch in chains], p)
        R = pow(inv, -1, p)
        for t in range(L):
            assert reconstruct([ch.powers[t] for ch in chains], p) == pow(R, t + 1, p)
            bit = reconstruct([pm.rand2[k][t] for pm in mat.parties], p)
            assert reconstruct([ch.products[t] for ch in chains], p) == inv * bit % p


def test_share_ops_linear_algebra(field):
    dealer, _, ctxs = make_contexts(field, 3)
    xs, ys = dealer.share(11), dealer.share(31)
    p = field.p
    combos = {
        "add": ([c.add(x, y) for c, x, y in zip(ctxs, xs, ys)], 42),
        "sub": ([c.sub(x, y) for c, x, y in zip(ctxs, xs, ys)], (11 - 31) % p),
        "neg": ([c.neg(x) for c, x in zip(ctxs, xs)], -11 % p),
        "add_public": ([c.add_public(x, 5) for c, x in zip(ctxs, xs)], 16),
        "mul_public": ([c.mul_public(x, 7) for c, x in zip(ctxs, xs)], 77),
        "public": ([c.public(9) for c in ctxs], 9),
        "lincomb": ([c.lincomb([2, 3], [x, y], 1) for c, x, y in zip(ctxs, xs, ys)], 22 + 93 + 1),
    }
    for name, (shares, expect) in combos.items():
        assert reconstruct(shares, p) == expect, name
        assert reconstruct_mac(shares, p) == expect * dealer.delta % p, name


def test_honest_reveal_returns_value(field):
    dealer, _, ctxs = make_contexts(field, 2)
    vals = [0, 1, 12345, field.p - 1]
    outs = reveal(ctxs, by_party([dealer.share(v) for v in vals]))
    assert outs == [vals, vals]


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2), st.integers(min_value=0, max_value=7),
       st.integers(min_value=0, max_value=72))
def test_flipping_one_bit_of_a_value_share_aborts(party, which, bit):
    field = FieldParams.default()
    dealer, _, ctxs = make_contexts(field, 3, seed=which)
    shares = by_party([dealer.share(v) for v in range(8)])
    s = shares[party][which]
    shares[party][which] = AuthShare((s.value ^ (1 << bit)) % field.p, s.mac)
    if shares[party][which] == s:
        return
    with pytest.raises(MacCheckError):
        reveal(ctxs, shares)


def test_mac_check_rejects_bad_commitment_opening(field):
    dealer, _, ctxs = make_contexts(field, 2)
    shares = by_party([dealer.share(3)])

    def cheat(ctx, sh):
        yield from open_values(ctx, sh)
        gen = mac_check(ctx)
        req = next(gen)
        parts = yield req
        req = gen.send(parts)
        sigma, nonce = req.values
        parts = yield type(req)(req.kind, (sigma + 1, nonce))
        gen.send(parts)

    with pytest.raises(MacCheckError):
        run_lockstep([cheat(ctxs[0], shares[0]), reveal_checked(ctxs[1], shares[1])])


def test_beaver_multiplication(field):
    dealer, mat, ctxs = make_contexts(field, 3, triples=20)
    rng = random.Random(11)
    xs = [field.random(rng) for _ in range(20)]
    ys = [field.random(rng) for _ in range(20)]
    sx, sy = by_party([dealer.share(x) for x in xs]), by_party([dealer.share(y) for y in ys])
    progs = [mul_shares(ctx, a, b, ctx.material.take("triples", 20))
             for ctx, a, b in zip(ctxs, sx, sy)]
    prods = run_lockstep(progs)
    outs = reveal(ctxs, prods)
    assert outs[0] == [x * y % field.p for x, y in zip(xs, ys)]
    assert ctxs[0].rounds["online"] == 4  # multiply, open, then two MAC-check rounds


def test_triple_reuse_and_material_exhaustion(field):
    _, mat, ctxs = make_contexts(field, 2, triples=1, rand=2)
    pm = mat.parties[0]
    (t,) = pm.take("triples", 1)
    t.consume()
    with pytest.raises(MaterialReuse):
        t.consume()
    with pytest.raises(MaterialExhausted):
        pm.take("triples", 1)
    pm.take("rand", 2)
    with pytest.raises(MaterialExhausted):
        pm.take("rand", 1)
    with pytest.raises(ConfigurationError):
        pm.take("bogus", 1)


def test_input_sharing(field):
    rng = random.Random(13)
    xs = [field.random(rng) for _ in range(1000)] + [0]
    dealer, mat, ctxs = make_contexts(field, 3, rand=len(xs))
    per_party = dh_input_share(ctxs, xs)
    for k, x in enumerate(xs):
        sh = [per_party[j][k] for j in range(3)]
        assert reconstruct(sh, field.p) == x
        assert reconstruct_mac(sh, field.p) == x * dealer.delta % field.p
    assert all(pm.remaining("rand") == 0 for pm in mat.parties)


def test_masked_zero_is_negated_mask(field):
    _, mat, _ = make_contexts(field, 2, rand=1)
    parts = [[pm.rand[0].value] for pm in mat.parties]
    a = sum(col[0] for col in parts) % field.p
    assert mask_inputs(field, [0], parts) == [(-a) % field.p]


def test_centered_lift(field):
    assert centered_lift(field.p - 5, field) == -5
    assert centered_lift(field(7)) == 7


# ---------------------------------------------------------------- lookup polynomial

def test_lookup_polynomial_small_prime():
    phi = interpolate_lookup(2, 101)
    assert phi(1) == 0 and phi(2) == 1 and phi(3) == 1
    assert len(phi.coefficients) == 3


def test_lookup_polynomial_default_domain(field):
    phi = interpolate_lookup(field.bits, field)
    assert phi(1) == 0
    assert all(phi(x) == 1 for x in range(2, field.bits + 2))
    with pytest.raises(ConfigurationError):
        interpolate_lookup(0, field)


# ---------------------------------------------------------------- zero test

def _zero_test_run(field, xs, c, mode, seed=0):
    n = len(xs)
    dealer, mat, ctxs = make_contexts(field, c, seed=seed, **zero_test_material(field, n, mode))
    shares = by_party([dealer.share(x % field.p) for x in xs])
    bs = run_lockstep([zero_test(ctx, sh, mode) for ctx, sh in zip(ctxs, shares)])
    out = reveal(ctxs, bs)[0]
    return out, ctxs


@pytest.mark.parametrize("mode", ["premul", "beaver"])
@pytest.mark.parametrize("c", [2, 3])
def test_zero_test_exhaustive_small_field(small_field, mode, c):
    xs = list(range(small_field.p))
    out, ctxs = _zero_test_run(small_field, xs, c, mode, seed=c)
    assert out == [int(x != 0) for x in xs]


@pytest.mark.parametrize("mode, rounds", [("premul", 2), ("beaver", 3)])
def test_zero_test_default_field_and_round_count(field, mode, rounds):
    xs = [0, 1, 2, 3, 20, field.p - 1, 2 ** 40]
    dealer, mat, ctxs = make_contexts(field, 2, **zero_test_material(field, len(xs), mode))
    shares = by_party([dealer.share(x) for x in xs])
    bs = run_lockstep([zero_test(ctx, sh, mode) for ctx, sh in zip(ctxs, shares)])
    assert ctxs[0].rounds["online"] == rounds
    assert reveal(ctxs, bs)[0] == [0, 1, 1, 1, 1, 1, 1]


def test_zero_test_rejects_bad_mode(field):
    _, _, ctxs = make_contexts(field, 2)
    with pytest.raises(ConfigurationError):
        next(zero_test(ctxs[0], [AuthShare(0, 0)], "nope"))


def test_zero_test_needs_material(field):
    dealer, _, ctxs = make_contexts(field, 2)
    shares = by_party([dealer.share(1)])
    with pytest.raises(MaterialExhausted):
        run_lockstep([zero_test(ctx, sh) for ctx, sh in zip(ctxs, shares)])


# ---------------------------------------------------------------- material files

def test_material_file_round_trip(tmp_path, small_field):
    kw = zero_test_material(small_field, 3, "premul")
    mat = TrustedDealer(small_field, 2, seed=9).prepare(rand=4, **{**kw, "triples": 2})
    pm = mat.parties[1]
    pm.take("rand", 1)
    path = tmp_path / "cp1.mat"
    write_party_material(pm, path)
    back = read_party_material(path)
    assert (back.index, back.n_parties, back.field, back.mac_key) == (1, 2, small_field, pm.mac_key)
    assert back.rand == pm.rand[1:]
    assert back.rand2 == pm.rand2
    assert back.expchain == pm.expchain
    assert [(t.a, t.b, t.c) for t in back.triples] == [(t.a, t.b, t.c) for t in pm.triples]


def test_material_file_corruption(tmp_path, small_field):
    mat = TrustedDealer(small_field, 2, seed=9).prepare(rand=2)
    path = tmp_path / "cp0.mat"
    write_party_material(mat.parties[0], path)
    data = path.read_bytes()
    (tmp_path / "cut.mat").write_bytes(data[:-3])
    with pytest.raises(ConfigurationError):
        read_party_material(tmp_path / "cut.mat")
    mackey_len = 5 + int.from_bytes(data[1:5], "little")
    (tmp_path / "nokey.mat").write_bytes(data[mackey_len:])
    with pytest.raises(ConfigurationError):
        read_party_material(tmp_path / "nokey.mat")
