import time

import numpy as np
import pytest

from dpdice.bench import gen_union_partition
from dpdice.errors import ConfigurationError, ProtocolAbort
from dpdice.hashing import HashKey
from dpdice.mpc import FieldParams
from dpdice.protocol import (Fault, ProtocolConfig, clamp_zero_count, config_from_mapping,
                             config_to_text, dh_inputs, draw_noises, material_counts,
                             offline_prepare, parse_config_text, plaintext_noisy_zero_count,
                             read_config_file, run_protocol)
from dpdice.sketch import FmsSketch


def make_config(m=16, w=8, d=2, c=2, sigma=2.0, mode="premul", seed=0):
    rng = np.random.default_rng(seed)
    return ProtocolConfig(m, w, d, c, sigma, HashKey.random(rng), session_id=rng.bytes(16),
                          zero_test_mode=mode)


@pytest.mark.parametrize("mode", ["premul", "beaver"])
@pytest.mark.parametrize("c", [2, 3])
def test_revealed_value_matches_plaintext_oracle(mode, c):
    for seed in range(3):
        cfg = make_config(d=3, c=c, mode=mode, seed=seed)
        sets = gen_union_partition(60, 3, 0.3, seed=seed)
        noises = draw_noises(cfg, seed)
        tx = run_protocol(sets, cfg, noises=noises, dealer_seed=seed)
        assert tx.revealed_noisy_z == plaintext_noisy_zero_count(sets, cfg, noises)


def test_tcp_transport_matches_memory():
    cfg = make_config(d=2, c=2, seed=4)
    sets = gen_union_partition(50, 2, 0.5, seed=4)
    noises = [3, -7]
    mem = run_protocol(sets, cfg, "memory", noises=noises, dealer_seed=1)
    tcp = run_protocol(sets, cfg, "tcp", noises=noises, dealer_seed=1)
    assert mem.revealed_noisy_z == tcp.revealed_noisy_z == plaintext_noisy_zero_count(sets, cfg, noises)
    # payload traffic is identical; TCP adds one HELLO each way per link
    assert mem.bytes_by_phase["aggregation"] == tcp.bytes_by_phase["aggregation"]
    for tx in (mem, tcp):
        assert sum(tx.bytes_sent.values()) == sum(tx.bytes_received.values())


def test_single_holder_zero_noise_reveals_exact_zero_count():
    cfg = make_config(d=1, c=2, seed=5)
    elems = np.arange(40, dtype=np.uint64) * 7919
    tx = run_protocol([elems], cfg, noises=[0], dealer_seed=2)
    assert tx.revealed_noisy_z == FmsSketch(16, 8, cfg.hash_key).update(elems).zero_count()


def test_empty_union_zero_noise():
    cfg = make_config(d=2, seed=6)
    empty = np.array([], dtype=np.uint64)
    tx = run_protocol([empty, empty], cfg, noises=[0, 0])
    assert tx.revealed_noisy_z == cfg.m * cfg.w
    assert tx.estimate.n_hat == 0.0


def test_negative_noise_is_lifted_and_clamped():
    cfg = make_config(d=1, seed=7, sigma=10.0)
    full = np.arange(5000, dtype=np.uint64)
    z = FmsSketch(16, 8, cfg.hash_key).update(full).zero_count()
    tx = run_protocol([full], cfg, noises=[-(z + 5)])
    assert tx.revealed_noisy_z == -5
    assert clamp_zero_count(tx.revealed_noisy_z, cfg) == 0
    assert clamp_zero_count(cfg.n_bits + 9, cfg) == cfg.n_bits


def test_round_and_byte_accounting():
    cfg = make_config(d=2, c=3, seed=8)
    tx = run_protocol(gen_union_partition(30, 2, seed=8), cfg, noises=[1, 1])
    assert tx.rounds == {"collection": 2, "aggregation": 3, "mac_check": 2}
    assert set(tx.bytes_by_phase) == {"collection", "aggregation", "mac_check", "output"}
    assert sum(tx.bytes_by_phase.values()) == tx.total_bytes
    assert tx.total_bytes == sum(tx.bytes_received.values())
    assert "revealed Z+N" in tx.summary()


def test_beaver_mode_uses_one_more_aggregation_round():
    cfg = make_config(d=2, mode="beaver", seed=9)
    tx = run_protocol(gen_union_partition(30, 2, seed=9), cfg, noises=[0, 0])
    assert tx.rounds["aggregation"] == 4


def test_smoke_runtime():
    cfg = make_config(m=16, w=8, d=2, c=2, seed=10)
    t0 = time.perf_counter()
    run_protocol(gen_union_partition(100, 2, seed=10), cfg, noise_seed=10)
    assert time.perf_counter() - t0 < 5.0


@pytest.mark.parametrize("target", ["final", "zero_test"])
@pytest.mark.parametrize("cp", [0, 1])
def test_tampering_cp_causes_abort(target, cp):
    cfg = make_config(d=2, c=2, seed=11)
    with pytest.raises(ProtocolAbort) as info:
        run_protocol(gen_union_partition(30, 2, seed=11), cfg, noises=[0, 0],
                     fault=Fault(cp=cp, offset=1, target=target))
    assert info.value.phase == "mac_check"


def test_material_counts_example():
    cfg = make_config(m=16, w=8, d=3, mode="beaver")
    kw = material_counts(cfg)
    assert (kw["rand"], kw["rand2"], kw["triples"]) == (3 * 129, 128, 128)
    mat = offline_prepare(cfg, seed=1)
    assert mat.counts.as_dict() == {"rand": 387, "rand2": 128, "expchain": 128, "triples": 128}
    premul = material_counts(make_config(m=16, w=8, d=3))
    assert premul["triples"] == 0 and premul["with_products"]


def test_counted_material_is_fully_consumed():
    cfg = make_config(d=2, seed=12)
    mat = offline_prepare(cfg, seed=3)
    run_protocol(gen_union_partition(20, 2, seed=12), cfg, noises=[0, 0], material=mat)
    for pm in mat.parties:
        assert all(pm.remaining(k) == 0 for k in ("rand", "rand2", "expchain"))


def test_offline_prepare_deterministic_under_seed():
    cfg = make_config()
    a, b = offline_prepare(cfg, seed=7), offline_prepare(cfg, seed=7)
    assert a.parties[0].rand == b.parties[0].rand and a.mac_key == b.mac_key


def test_dh_inputs_layout_and_noise_bound():
    cfg = make_config(sigma=1.0)
    xs = dh_inputs(cfg, [1, 2, 3], -4)
    assert len(xs) == cfg.n_bits + 1
    expected = FmsSketch(cfg.m, cfg.w, cfg.hash_key).update([1, 2, 3]).bits.ravel()
    assert xs[:-1] == [int(b) for b in expected]
    assert cfg.field.lift(xs[-1]) == -4
    with pytest.raises(ConfigurationError):
        dh_inputs(cfg, [], cfg.noise_bound + 1)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        make_config(m=12)
    with pytest.raises(ConfigurationError):
        make_config(c=1)
    with pytest.raises(ConfigurationError):
        make_config(sigma=0.1)
    with pytest.raises(ConfigurationError):
        make_config(mode="fast")
    with pytest.raises(ConfigurationError):
        # m*w plus the noise tail cannot fit a 4-bit plaintext space
        ProtocolConfig(16, 8, 2, 2, 2.0, HashKey(bytes(16)), FieldParams(1009, 4, 4))


def test_config_bytes_round_trip():
    cfg = make_config(mode="beaver")
    data = cfg.to_bytes()
    assert data[:4] == b"DPDC"
    assert ProtocolConfig.from_bytes(data) == cfg
    other = make_config(seed=1)
    assert other.digest() != cfg.digest()
    with pytest.raises(ConfigurationError):
        ProtocolConfig.from_bytes(data[:-1])
    with pytest.raises(ConfigurationError):
        ProtocolConfig.from_bytes(b"XXXX" + data[4:])


def test_party_ids():
    cfg = make_config(d=3, c=2)
    assert cfg.cp_ids == [0, 1] and cfg.dh_ids == [2, 3, 4]
    assert cfg.peers_of(0) == [1, 2, 3, 4]
    assert cfg.peers_of(3) == [0, 1]


def test_config_text_round_trip(tmp_path):
    cfg = make_config(d=3, c=2)
    addrs = {i: ("127.0.0.1", 9000 + i) for i in range(5)}
    path = tmp_path / "session.conf"
    path.write_text("# demo session\n" + config_to_text(cfg, addrs))
    back, back_addrs = read_config_file(path)
    assert back == cfg and back_addrs == addrs


def test_config_text_errors():
    assert parse_config_text("m = 16  # arrays\n\nw=8") == {"m": "16", "w": "8"}
    with pytest.raises(ConfigurationError):
        parse_config_text("just words")
    base = {"m": "16", "w": "8", "d": "2", "c": "2", "sigma": "2.0"}
    with pytest.raises(ConfigurationError):
        config_from_mapping(base)  # hash_key and session must be pinned
    pinned = {**base, "hash_key": "00" * 16, "session": "11" * 16}
    cfg, _ = config_from_mapping(pinned)
    assert cfg.sigma == 2.0
    with pytest.raises(ConfigurationError):
        config_from_mapping({**pinned, "colour": "blue"})
    with pytest.raises(ConfigurationError):
        config_from_mapping({**pinned, "m": "sixteen"})
    with pytest.raises(ConfigurationError):
        config_from_mapping({k: v for k, v in pinned.items() if k != "w"})


def test_sigma_calibrated_when_absent():
    pinned = {"m": "16", "w": "8", "d": "20", "c": "2", "hash_key": "00" * 16,
              "session": "11" * 16}
    cfg, _ = config_from_mapping(pinned)
    assert cfg.sigma == pytest.approx(16.6376, rel=1e-4)


def test_draw_noises_reproducible():
    cfg = make_config(d=4, sigma=5.0)
    assert draw_noises(cfg, 3) == draw_noises(cfg, 3)
    assert len(draw_noises(cfg, 3)) == 4
