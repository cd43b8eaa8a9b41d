import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from lorakey.channel import (
    DEFAULT_CHANNEL_PLAN,
    PRESET_NAMES,
    CausalityError,
    LinkEvent,
    ProtocolViolation,
    SimConfig,
    SimConfigError,
    apply_packet_loss,
    config_from_mapping,
    hop_sequence,
    load_config,
    load_preset,
    pair_uplink_ack,
    parse_config_text,
    simulate_probing,
)
from lorakey.core import RSSI_MAX_DBM, RSSI_MIN_DBM, ProbeRecord, RssiTrace
from lorakey.metrics import pearson_rho
from lorakey.pipeline import pair_traces

F1, F2 = DEFAULT_CHANNEL_PLAN[:2]


def small(**kw):
    kw.setdefault("n_probes", 500)
    return SimConfig(**kw)


def test_same_seed_identical():
    a = simulate_probing(small(seed=3, packet_loss_prob=0.1))
    b = simulate_probing(small(seed=3, packet_loss_prob=0.1))
    assert a == b


def test_different_seed_differs():
    a = simulate_probing(small(seed=3))
    b = simulate_probing(small(seed=4))
    assert a.trace_b.rssi.tolist() != b.trace_b.rssi.tolist()


def test_noiseless_reciprocity():
    cfg = small(seed=1, device_noise_sigma_db=0, halfduplex_lag_ms=0)
    sim = simulate_probing(cfg)
    al = pair_uplink_ack(sim.events)
    assert np.array_equal(al.x_a, al.x_b)
    assert pearson_rho(al.x_a, al.x_b) == 1.0


@pytest.mark.parametrize("tx", [-200, 200])
def test_clamping(tx):
    sim = simulate_probing(small(seed=2, tx_power_dbm=tx, shadow_sigma_db=20))
    for tr in sim.trace_a, sim.trace_b, sim.trace_e:
        assert tr.rssi.min() >= RSSI_MIN_DBM
        assert tr.rssi.max() <= RSSI_MAX_DBM


def test_reciprocity_dial():
    sigmas = [0.0, 0.5, 1.0, 2.0, 4.0]
    means = []
    for s in sigmas:
        rhos = []
        for seed in range(10):
            al = pair_uplink_ack(simulate_probing(small(seed=seed, device_noise_sigma_db=s)).events)
            rhos.append(pearson_rho(al.x_a, al.x_b))
        means.append(np.mean(rhos))
    assert all(a >= b for a, b in zip(means, means[1:]))


@pytest.mark.parametrize("target", [0.0, 0.2, 0.5, 0.8])
def test_eve_dial(target):
    sim = simulate_probing(SimConfig(n_probes=4000, seed=11, eve_correlation=target))
    al = pair_traces(sim.trace_a, sim.trace_e)
    assert abs(pearson_rho(al.x_a, al.x_b) - target) <= 0.1


def test_outdoor_preset_brackets():
    sim = simulate_probing(load_preset("outdoor_urban", seed=0))
    al = pair_uplink_ack(sim.events)
    assert 0.93 <= pearson_rho(al.x_a, al.x_b) <= 0.98
    assert al.x_a.min() >= -130 and al.x_b.min() >= -130
    assert al.x_a.max() <= -45 and al.x_b.max() <= -45


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_load(name):
    cfg = load_preset(name)
    assert cfg.path_profile == name
    assert load_config(name) == cfg


def test_hop_sequence_uniform():
    cfg = SimConfig(hopping=True, seed=5, n_probes=8000)
    hops = hop_sequence(cfg)
    assert hops == hop_sequence(cfg)
    counts = [hops.count(f) for f in DEFAULT_CHANNEL_PLAN]
    assert min(counts) > 0
    assert chisquare(counts).pvalue > 0.01


def test_no_hopping_uses_first_channel():
    assert set(hop_sequence(small())) == {DEFAULT_CHANNEL_PLAN[0]}


def test_ack_on_uplink_frequency():
    sim = simulate_probing(small(seed=6, hopping=True))
    up = {e.seq_index: e.freq_hz for e in sim.events if e.direction == "uplink"}
    for e in sim.events:
        if e.direction == "downlink":
            assert e.freq_hz == up[e.seq_index]


def test_mismatched_ack_frequency_rejected():
    sim = simulate_probing(small(seed=6, hopping=True, ack_same_frequency=False))
    with pytest.raises(ProtocolViolation) as info:
        pair_uplink_ack(sim.events)
    assert len(info.value.seq_indices) > 0
    with pytest.raises(ProtocolViolation):
        pair_traces(sim.trace_a, sim.trace_b)


def test_class_a_causality():
    sim = simulate_probing(small(seed=7, packet_loss_prob=0.3))
    delivered_up = {e.seq_index for e in sim.events if e.direction == "uplink" and e.delivered}
    downs = [e for e in sim.events if e.direction == "downlink"]
    assert downs
    assert all(e.seq_index in delivered_up for e in downs)


def test_pairing_examples():
    up = LinkEvent(7, "uplink", F1, -80, True)
    ack = LinkEvent(7, "downlink", F1, -81, True)
    al = pair_uplink_ack([up, ack])
    assert al.indices.tolist() == [7]
    assert (al.x_a[0], al.x_b[0]) == (-81, -80)

    lost_ack = LinkEvent(7, "downlink", F1, None, False)
    assert len(pair_uplink_ack([up, lost_ack])) == 0

    with pytest.raises(ProtocolViolation):
        pair_uplink_ack([up, LinkEvent(7, "downlink", F2, -81, True)])


def test_pairing_rejects_ack_without_uplink():
    with pytest.raises(CausalityError):
        pair_uplink_ack([LinkEvent(3, "downlink", F1, -70, True)])


def test_pairing_matches_trace_alignment():
    sim = simulate_probing(small(seed=8, packet_loss_prob=0.05))
    a, b = pair_uplink_ack(sim.events), pair_traces(sim.trace_a, sim.trace_b)
    assert np.array_equal(a.indices, b.indices)
    assert np.array_equal(a.x_a, b.x_a) and np.array_equal(a.x_b, b.x_b)


def test_eve_hears_every_uplink():
    sim = simulate_probing(small(seed=9, packet_loss_prob=0.2))
    assert len(sim.trace_e) == 500
    assert len(sim.trace_b) < 500


def _trace(n):
    return RssiTrace("x", [ProbeRecord(i, i, -70, F1) for i in range(n)])


def test_packet_loss_identity_and_bounds():
    tr = _trace(1000)
    assert apply_packet_loss(tr, 0.0, 1) == tr
    kept = len(apply_packet_loss(tr, 0.1, 1))
    assert 860 <= kept <= 940
    assert len(apply_packet_loss(_trace(100), 0.9999, 1)) == 0
    assert apply_packet_loss(tr, 0.1, 1) == apply_packet_loss(tr, 0.1, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**64 - 1))
def test_packet_loss_binomial(seed):
    assert 860 <= len(apply_packet_loss(_trace(1000), 0.1, seed)) <= 940


@pytest.mark.parametrize(
    "bad",
    [
        dict(n_probes=1),
        dict(shadow_ar_coeff=1.0),
        dict(eve_correlation=1.5),
        dict(packet_loss_prob=1.0),
        dict(channel_plan=()),
        dict(path_profile="moon"),
        dict(halfduplex_lag_ms=400),
        dict(seed=-1),
    ],
)
def test_invalid_config(bad):
    with pytest.raises(SimConfigError):
        SimConfig(**bad)


def test_config_text_parsing():
    text = """
    # comment
    n_probes = 100
    hopping = true
    device_noise_sigma_db = [0.5, 0.5, 1.0]   # per device
    path_profile = indoor
    """
    values = parse_config_text(text)
    assert values == {
        "n_probes": 100, "hopping": True,
        "device_noise_sigma_db": (0.5, 0.5, 1.0), "path_profile": "indoor",
    }
    cfg = config_from_mapping(values)
    assert cfg.device_noise_sigma_db.eve == 1.0


def test_unknown_config_key():
    with pytest.raises(SimConfigError):
        config_from_mapping({"n_probe": 3})


def test_config_file(tmp_path):
    path = tmp_path / "c.conf"
    path.write_text("n_probes = 50\nseed = 4\n")
    assert load_config(path).n_probes == 50
    with pytest.raises(SimConfigError):
        load_config(tmp_path / "missing.conf")
