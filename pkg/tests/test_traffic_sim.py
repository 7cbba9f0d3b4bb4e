import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsense.records import LogFormatError, PacketRecord, TcpFlag, read_log, write_log
from flowsense.traffic_sim import (
    AgcConfig, AttackSpec, DatasetConfig, EmptyInjectionWarning, IntegrationDiverged, NetProfile,
    build_dataset, emit_telemetry, inject_attack, label_counts, simulate_agc,
)


def _fields(s):
    return (s.df1, s.df2, s.dp_tie, s.dp_m1, s.dp_m2, s.dp_g1, s.dp_g2, s.ace1, s.ace2)


# --- AGC dynamics ----------------------------------------------------------

def test_zero_input_stays_at_equilibrium():
    states = simulate_agc(AgcConfig(), horizon=30.0, dt=0.01, seed=5)
    assert len(states) == 3001
    assert all(v == 0.0 for s in states for v in _fields(s))


def test_step_load_dips_then_recovers():
    states = simulate_agc(AgcConfig(load_steps=((1.0, 1, 0.01),)), horizon=120.0)
    df1 = np.array([s.df1 for s in states])
    assert df1.min() < 0
    assert df1[:100].max() == 0.0
    nadir = int(df1.argmin())
    assert abs(df1[-1]) < 0.05 * abs(df1[nadir])
    assert np.abs(df1).max() < 1.0 and max(abs(s.df2) for s in states) < 1.0


def test_ace_recomputed_from_state():
    cfg = AgcConfig(load_steps=((0.5, 2, -0.02),), load_sigma=0.01)
    for s in simulate_agc(cfg, 20.0, seed=3)[::97]:
        assert s.ace1 == pytest.approx(cfg.bias * s.df1 + s.dp_tie, abs=1e-15)
        assert s.ace2 == pytest.approx(cfg.bias * s.df2 - s.dp_tie, abs=1e-15)


def test_same_seed_bit_identical_and_seed_matters():
    cfg = AgcConfig(load_sigma=0.02)
    a = simulate_agc(cfg, 50.0, seed=9)
    b = simulate_agc(cfg, 50.0, seed=9)
    c = simulate_agc(cfg, 50.0, seed=10)
    assert [_fields(s) for s in a] == [_fields(s) for s in b]
    assert [_fields(s) for s in a] != [_fields(s) for s in c]


def test_divergence_names_the_step():
    # a huge step makes explicit Euler blow up
    cfg = AgcConfig(ki=1e6, load_steps=((0.0, 1, 1.0),))
    with pytest.raises(IntegrationDiverged) as exc:
        simulate_agc(cfg, 100.0, dt=0.5)
    assert "step" in str(exc.value)


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(horizon=0.001)])
def test_simulate_preconditions(kw):
    args = dict(horizon=1.0, dt=0.01) | kw
    with pytest.raises(ValueError):
        simulate_agc(AgcConfig(), **args)


def test_gains_must_be_positive():
    with pytest.raises(ValueError):
        AgcConfig(ki=0.0)


@settings(max_examples=25, deadline=None)
@given(mag=st.floats(-0.05, 0.05), area=st.sampled_from([1, 2]), when=st.floats(0, 5))
def test_bounded_frequency_under_bounded_steps(mag, area, when):
    states = simulate_agc(AgcConfig(load_steps=((when, area, mag),)), 40.0)
    assert max(max(abs(s.df1), abs(s.df2)) for s in states) < 1.0


# --- telemetry -------------------------------------------------------------

def test_measurement_count_for_ten_seconds():
    pk = emit_telemetry(simulate_agc(AgcConfig(), 10.0), NetProfile(), seed=0)
    meas = [p for p in pk if p.payload_class == "measurement"]
    assert len(meas) == 200
    assert all(p.label == "normal" and p.attack_kind == "none" for p in pk)


def test_setpoints_at_four_and_eight_per_area():
    pk = emit_telemetry(simulate_agc(AgcConfig(), 10.0), NetProfile(), seed=0)
    sp = [p for p in pk if p.payload_class == "setpoint"]
    by_area = {}
    for p in sp:
        by_area.setdefault(p.dst_ip, []).append(p.ts)
    assert sorted(by_area) == ["10.1.1.10", "10.1.2.10"]
    for ts in by_area.values():
        assert ts == pytest.approx([4.0, 8.0])


def test_zero_jitter_gives_exact_period():
    pk = emit_telemetry(simulate_agc(AgcConfig(load_sigma=0.01), 20.0, seed=2), NetProfile(jitter=0.0))
    for area in ("10.1.1.10", "10.1.2.10"):
        ts = np.array([p.ts for p in pk if p.src_ip == area])
        assert np.allclose(np.diff(ts), 0.1, atol=1e-9, rtol=0)


def test_jitter_is_seeded_and_bounded():
    states = simulate_agc(AgcConfig(), 10.0)
    a = emit_telemetry(states, NetProfile(jitter=0.01), seed=1)
    b = emit_telemetry(states, NetProfile(jitter=0.01), seed=1)
    assert a == b
    meas = sorted(p.ts for p in a if p.src_ip == "10.1.1.10")
    assert np.all(np.abs(np.array(meas) - 0.1 * np.arange(len(meas))) <= 0.01 + 1e-6)


def test_measurement_size_tracks_frequency_deviation():
    states = simulate_agc(AgcConfig(load_steps=((0.0, 1, 0.01),)), 20.0)
    pk = emit_telemetry(states, NetProfile())
    sizes = [p.length for p in pk if p.src_ip == "10.1.1.10"]
    assert sizes[0] == 120 and max(sizes) > 120


def test_netprofile_rejects_bad_period():
    with pytest.raises(ValueError):
        NetProfile(measurement_period=0.0)


# --- attacks ---------------------------------------------------------------

@pytest.fixture(scope="module")
def telemetry():
    return emit_telemetry(simulate_agc(AgcConfig(load_sigma=0.01), 60.0, seed=4), NetProfile(jitter=0.002), 4)


def test_attack_spec_invariants():
    with pytest.raises(ValueError):
        AttackSpec("scan", 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        AttackSpec("scan", 2.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        AttackSpec("teardrop", 0.0, 1.0, 1.0)


def test_scan_adds_syns_to_distinct_ports(telemetry):
    out = inject_attack(telemetry, AttackSpec("scan", 10.0, 11.0, 50.0), seed=1)
    syns = [p for p in out if p.attack_kind == "scan" and p.tcp_flags == TcpFlag.SYN]
    assert len(syns) >= 50
    assert len({p.dst_port for p in syns}) == len(syns)
    assert all(p.label == "anomalous" for p in out if p.attack_kind != "none")
    assert [p.ts for p in out] == sorted(p.ts for p in out)


def test_dos_rate_scales_with_intensity(telemetry):
    lo = inject_attack(telemetry, AttackSpec("dos_flood", 10.0, 30.0, 1.0), seed=2)
    hi = inject_attack(telemetry, AttackSpec("dos_flood", 10.0, 30.0, 4.0), seed=2)
    n_lo = sum(p.attack_kind == "dos_flood" for p in lo)
    n_hi = sum(p.attack_kind == "dos_flood" for p in hi)
    assert n_hi > 3 * n_lo > 0


def test_fdia_alters_measurements_only(telemetry):
    out = inject_attack(telemetry, AttackSpec("fdia", 20.0, 30.0, 1.0), seed=3)
    hit = [p for p in out if p.attack_kind == "fdia"]
    assert hit and all(p.payload_class == "measurement" for p in hit)
    assert all(19.9 < p.ts < 30.2 for p in hit)
    before = [p for p in telemetry if not (20.0 <= p.ts <= 30.0)]
    after = [p for p in out if p.attack_kind == "none"]
    assert len(after) <= len(telemetry) and set(before) <= set(after)


def test_mitm_duplicates_with_spoofed_source(telemetry):
    out = inject_attack(telemetry, AttackSpec("spoof_mitm", 5.0, 15.0, 1.0), seed=4)
    dup = [p for p in out if p.attack_kind == "spoof_mitm"]
    assert dup
    originals = {p.src_ip for p in telemetry}
    assert all(p.src_ip not in originals for p in dup)
    assert len(out) == len(telemetry) + len(dup)


def test_window_outside_log_warns_and_returns_input(telemetry):
    with pytest.warns(EmptyInjectionWarning):
        out = inject_attack(telemetry, AttackSpec("scan", 500.0, 501.0, 10.0))
    assert out == telemetry


@settings(max_examples=20, deadline=None)
@given(kind=st.sampled_from(["scan", "dos_flood", "fdia", "spoof_mitm"]),
       start=st.floats(0.0, 50.0), length=st.floats(0.5, 10.0), intensity=st.floats(0.1, 5.0),
       seed=st.integers(0, 2**32))
def test_label_soundness_and_identity(telemetry, kind, start, length, intensity, seed):
    spec = AttackSpec(kind, start, start + length, intensity)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyInjectionWarning)
        out = inject_attack(telemetry, spec, seed=seed)
    assert [p.ts for p in out] == sorted(p.ts for p in out)
    normal_out = [p for p in out if p.label == "normal"]
    # untouched packets survive unchanged and nothing else is labeled normal
    assert set(normal_out) <= set(telemetry)
    assert all((p.label == "anomalous") == (p.attack_kind == kind) for p in out)
    # removing the injected packets (and fdia's rewrites) gives back a subset of the input in order
    if kind != "fdia":
        assert normal_out == telemetry


# --- dataset ---------------------------------------------------------------

def _small(tmp_path, **kw):
    args = dict(out_dir=str(tmp_path), seed=3, source_horizon=128, target_horizon=192, source_session_rate=1.0)
    return DatasetConfig(**(args | kw))


def test_manifest_matches_logs(tmp_path):
    m = build_dataset(_small(tmp_path))
    src, tgt = read_log(tmp_path / "source.jsonl"), read_log(tmp_path / "target.jsonl")
    assert m["logs"]["source"]["counts"] == label_counts(src)
    assert m["logs"]["target"]["counts"] == label_counts(tgt)
    assert m["counts"]["anomalous"] == sum(p.label == "anomalous" for p in src + tgt)
    assert m["counts"]["normal"] == sum(p.label == "normal" for p in src + tgt)
    assert m["schema_version"] == 1 and len(m["config_hash"]) == 64
    assert json.loads((tmp_path / "manifest.json").read_text()) == m
    for log in (src, tgt):
        assert [p.ts for p in log] == sorted(p.ts for p in log)


def test_dataset_byte_identical(tmp_path):
    build_dataset(_small(tmp_path / "a"))
    build_dataset(_small(tmp_path / "b"))
    for name in ("source.jsonl", "target.jsonl", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_zero_attack_fraction_is_all_normal(tmp_path):
    m = build_dataset(_small(tmp_path, attack_fraction=0.0, source_attack_fraction=0.0))
    assert m["counts"]["anomalous"] == 0


def test_zero_size_rejected(tmp_path):
    with pytest.raises(ValueError):
        build_dataset(_small(tmp_path, target_horizon=0))


def test_target_log_carries_agc_telemetry(tmp_path):
    build_dataset(_small(tmp_path))
    tgt = read_log(tmp_path / "target.jsonl")
    classes = {p.payload_class for p in tgt}
    assert {"measurement", "setpoint"} <= classes
    src = read_log(tmp_path / "source.jsonl")
    assert any(p.dst_port == 2404 for p in tgt)
    assert not any(p.dst_port == 2404 or p.payload_class == "setpoint" for p in src)


# --- records and the JSONL format ------------------------------------------

def test_record_round_trip(tmp_path):
    p = PacketRecord(1.25, "10.0.0.1", "10.0.0.2", 1234, 80, "tcp", 60, TcpFlag.SYN | TcpFlag.ACK, "probe")
    q = p.as_attack("scan")
    write_log(tmp_path / "x.jsonl", [p, q])
    assert read_log(tmp_path / "x.jsonl") == [p, q]
    assert json.loads(p.to_json())["tcp_flags"] == ["SYN", "ACK"]


def test_label_attack_kind_consistency():
    with pytest.raises(ValueError):
        PacketRecord(0.0, "a", "b", 1, 2, "udp", 10, label="anomalous")
    with pytest.raises(ValueError):
        PacketRecord(0.0, "a", "b", 1, 2, "udp", 10, attack_kind="scan")


@pytest.mark.parametrize("line", [
    "{not json",
    '{"ts": 0}',
    '{"ts":0,"src_ip":"a","dst_ip":"b","src_port":1,"dst_port":2,"proto":"sctp","length":1,'
    '"tcp_flags":[],"payload_class":"other","label":"normal","attack_kind":"none"}',
    '{"ts":0,"src_ip":"a","dst_ip":"b","src_port":1,"dst_port":70000,"proto":"udp","length":1,'
    '"tcp_flags":[],"payload_class":"other","label":"normal","attack_kind":"none"}',
    '{"ts":0,"src_ip":"a","dst_ip":"b","src_port":1,"dst_port":2,"proto":"udp","length":1,'
    '"tcp_flags":[],"payload_class":"other","label":"anomalous","attack_kind":"none"}',
])
def test_bad_log_lines_rejected(tmp_path, line):
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(LogFormatError):
        read_log(path)
