"""Labeled synthetic traffic: two-area AGC telemetry, internet-style sessions
and attack injection.

Packets are metadata only. The AGC corpus ties measurement packet sizes to
the simulated frequency deviation so that falsified measurements show up in
the size pattern of the telemetry flows.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .records import ATTACK_KINDS, PacketRecord, TcpFlag, sort_packets, write_log
from .seeding import derive_seed, sha256_hex

ACK = TcpFlag.ACK
PSH_ACK = TcpFlag.PSH | TcpFlag.ACK
SYN = TcpFlag.SYN
SYN_ACK = TcpFlag.SYN | TcpFlag.ACK
FIN_ACK = TcpFlag.FIN | TcpFlag.ACK
RST_ACK = TcpFlag.RST | TcpFlag.ACK
NOFLAGS = TcpFlag(0)

ATTACK_FAMILIES = ATTACK_KINDS[1:]


class IntegrationDiverged(RuntimeError):
    def __init__(self, step: int, t: float):
        super().__init__(f"AGC integration diverged at step {step} (t={t:.4f}s)")
        self.step = step
        self.t = t


class EmptyInjectionWarning(UserWarning):
    """An attack spec matched nothing in the log; no packets were added."""


# ---------------------------------------------------------------------------
# two-area AGC model


@dataclass(frozen=True)
class AgcConfig:
    t_gov: float = 0.08
    t_turb: float = 0.3
    inertia: float = 10.0  # M, seconds
    damping: float = 1.0  # D, p.u./Hz
    tie_stiffness: float = 0.545  # T12, p.u./Hz
    bias: float = 20.6  # B, p.u./Hz
    ki: float = 0.3
    droop: float = 0.05  # R, Hz/p.u.
    # (time, area, magnitude) step load changes; area is 1 or 2
    load_steps: tuple = ()
    # random piecewise-constant load: new N(0, load_sigma) level every load_hold seconds
    load_sigma: float = 0.0
    load_hold: float = 10.0

    def __post_init__(self):
        for name in ("t_gov", "t_turb", "inertia", "tie_stiffness", "bias", "ki", "droop"):
            if not getattr(self, name) > 0:
                raise ValueError(f"AgcConfig.{name} must be positive")
        if self.damping < 0 or self.load_sigma < 0 or self.load_hold <= 0:
            raise ValueError("damping and load_sigma must be >= 0, load_hold > 0")


@dataclass(frozen=True, slots=True)
class AgcState:
    t: float
    df1: float
    df2: float
    dp_tie: float
    dp_m1: float
    dp_m2: float
    dp_g1: float
    dp_g2: float
    ace1: float
    ace2: float


def _load_profile(config: AgcConfig, n_steps: int, dt: float, seed: int) -> np.ndarray:
    """Per-step load disturbance for both areas, shape (n_steps, 2)."""
    loads = np.zeros((n_steps, 2))
    t = np.arange(n_steps) * dt
    if config.load_sigma > 0:
        rng = np.random.default_rng(seed)
        n_hold = int(math.ceil(n_steps * dt / config.load_hold)) + 1
        levels = rng.normal(0.0, config.load_sigma, size=(n_hold, 2))
        idx = np.minimum((t / config.load_hold).astype(int), n_hold - 1)
        loads += levels[idx]
    for when, area, magnitude in config.load_steps:
        if area not in (1, 2):
            raise ValueError(f"load step area must be 1 or 2, got {area}")
        loads[t >= when, area - 1] += magnitude
    return loads


def simulate_agc(config: AgcConfig, horizon: float, dt: float = 0.01, seed: int = 0) -> list[AgcState]:
    """Explicit-Euler integration of the two-area load-frequency-control loop.

    Per area: governor and turbine first-order lags, rotating mass with load
    damping, and an integral controller acting on the area control error.
    Returns states at t = 0, dt, ..., n*dt with n = round(horizon/dt).
    """
    if not dt > 0 or not horizon >= dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    n = int(round(horizon / dt))
    loads = _load_profile(config, n, dt, seed).tolist()
    c = config
    two_pi_t12 = 2.0 * math.pi * c.tie_stiffness

    f1 = f2 = m1 = m2 = g1 = g2 = tie = ref1 = ref2 = 0.0
    states = [AgcState(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)]
    for k in range(n):
        ace1 = c.bias * f1 + tie
        ace2 = c.bias * f2 - tie
        l1, l2 = loads[k]
        f1, f2, g1, g2, m1, m2, tie, ref1, ref2 = (
            f1 + dt * (m1 - l1 - tie - c.damping * f1) / c.inertia,
            f2 + dt * (m2 - l2 + tie - c.damping * f2) / c.inertia,
            g1 + dt * (ref1 - f1 / c.droop - g1) / c.t_gov,
            g2 + dt * (ref2 - f2 / c.droop - g2) / c.t_gov,
            m1 + dt * (g1 - m1) / c.t_turb,
            m2 + dt * (g2 - m2) / c.t_turb,
            tie + dt * two_pi_t12 * (f1 - f2),
            ref1 - dt * c.ki * ace1,
            ref2 - dt * c.ki * ace2,
        )
        t = (k + 1) * dt
        if not all(math.isfinite(v) for v in (f1, f2, g1, g2, m1, m2, tie, ref1, ref2)):
            raise IntegrationDiverged(k + 1, t)
        states.append(
            AgcState(t, f1, f2, tie, m1, m2, g1, g2, c.bias * f1 + tie, c.bias * f2 - tie)
        )
    return states


# ---------------------------------------------------------------------------
# telemetry


@dataclass(frozen=True)
class NetProfile:
    measurement_period: float = 0.1
    setpoint_period: float = 4.0
    jitter: float = 0.0  # uniform +/- jitter seconds on every timestamp
    base_size: int = 120
    size_quantum: float = 5e-5  # Hz of |df| per extra byte
    max_size_code: int = 60
    setpoint_size: int = 72
    control_ip: str = "10.1.0.1"
    control_port: int = 2404
    rtu_ip: str = "10.1.{area}.10"
    rtu_port_base: int = 40000

    def __post_init__(self):
        if not (self.measurement_period > 0 and self.setpoint_period > 0):
            raise ValueError("NetProfile periods must be positive")
        if self.jitter < 0 or self.size_quantum <= 0:
            raise ValueError("jitter must be >= 0 and size_quantum > 0")

    def size_code(self, df: float) -> int:
        return min(self.max_size_code, int(abs(df) / self.size_quantum))


def emit_telemetry(states: Sequence[AgcState], net: NetProfile, seed: int = 0) -> list[PacketRecord]:
    """Periodic measurement packets (RTU -> control centre) for each area and
    one setpoint packet per AGC cycle back to each RTU, all labeled normal."""
    if not states:
        raise ValueError("emit_telemetry needs at least one AGC state")
    rng = np.random.default_rng(seed)
    t0 = states[0].t
    horizon = states[-1].t - t0
    dt = states[1].t - t0 if len(states) > 1 else 1.0

    def state_at(t: float) -> AgcState:
        return states[min(len(states) - 1, int(round((t - t0) / dt)))]

    def jittered(t: float) -> float:
        if net.jitter > 0:
            t += rng.uniform(-net.jitter, net.jitter)
        return round(max(t0, t), 6)

    n_meas = int(math.floor(horizon / net.measurement_period + 1e-9))
    n_set = int(math.floor(horizon / net.setpoint_period + 1e-9))
    out: list[PacketRecord] = []
    for area in (1, 2):
        rtu = net.rtu_ip.format(area=area)
        rport = net.rtu_port_base + area
        for k in range(n_meas):
            t = t0 + k * net.measurement_period
            st = state_at(t)
            df = st.df1 if area == 1 else st.df2
            out.append(PacketRecord(
                jittered(t), rtu, net.control_ip, rport, net.control_port, "tcp",
                net.base_size + net.size_code(df), PSH_ACK, "measurement",
            ))
        for k in range(1, n_set + 1):
            t = t0 + k * net.setpoint_period
            st = state_at(t)
            ace = st.ace1 if area == 1 else st.ace2
            out.append(PacketRecord(
                jittered(t), net.control_ip, rtu, net.control_port, rport, "tcp",
                net.setpoint_size + min(16, int(abs(ace) / (10 * net.size_quantum))),
                PSH_ACK, "setpoint",
            ))
    return sort_packets(out)


# ---------------------------------------------------------------------------
# attacks

FlowSelector = tuple  # (src_ip, dst_ip, src_port, dst_port, proto); None = wildcard


def _selects(sel: FlowSelector | None, p: PacketRecord) -> bool:
    if sel is None:
        return True
    fields = (p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.proto)
    return all(s is None or s == v for s, v in zip(sel, fields))


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    start: float
    end: float
    intensity: float
    target_flow: FlowSelector | None = None
    attacker_ip: str = "10.66.0.13"

    def __post_init__(self):
        if self.kind not in ATTACK_FAMILIES:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.start < self.end:
            raise ValueError("AttackSpec needs start < end")
        if not self.intensity > 0:
            raise ValueError("AttackSpec intensity must be > 0")
        if self.target_flow is not None and len(self.target_flow) != 5:
            raise ValueError("target_flow selector must be a 5-tuple")


def _ephemeral(rng) -> int:
    return int(rng.integers(49152, 65536))


def _most_common(values, default=None):
    counts = Counter(values)
    if not counts:
        return default
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def _default_target(packets, in_window, spec):
    sel = spec.target_flow or (None,) * 5
    host = sel[1] or _most_common(p.dst_ip for p in in_window) or _most_common(p.dst_ip for p in packets)
    port = sel[3] or _most_common(p.dst_port for p in packets if p.dst_ip == host and p.dst_port < 49152)
    return host, port or 80


def _scan(packets, in_window, spec, rng):
    host, _ = _default_target(packets, in_window, spec)
    n = int(math.ceil(spec.intensity * (spec.end - spec.start)))
    n = min(n, 65535)
    ports = rng.choice(np.arange(1, 65536), size=n, replace=False)
    times = np.sort(rng.uniform(spec.start, spec.end, size=n))
    added = []
    for t, port in zip(times, ports):
        sport = _ephemeral(rng)
        added.append(PacketRecord(round(float(t), 6), spec.attacker_ip, host, sport, int(port),
                                  "tcp", 60, SYN, "probe", "anomalous", "scan"))
        if rng.random() < 0.5:
            added.append(PacketRecord(round(float(t) + rng.uniform(2e-4, 2e-3), 6), host, spec.attacker_ip,
                                      int(port), sport, "tcp", 54, RST_ACK, "probe", "anomalous", "scan"))
    return added


def _dos(packets, in_window, spec, rng):
    host, port = _default_target(packets, in_window, spec)
    period, on = 0.5, 0.25
    rate = 40.0 * spec.intensity
    added = []
    t = spec.start
    while t < spec.end:
        sport = _ephemeral(rng)
        n = max(1, int(rng.poisson(rate * on)))
        for ts in np.sort(rng.uniform(t, min(t + on, spec.end), size=n)):
            added.append(PacketRecord(round(float(ts), 6), spec.attacker_ip, host, sport, port, "udp",
                                      int(rng.integers(512, 1401)), NOFLAGS, "bulk", "anomalous", "dos_flood"))
        t += period
    return added


def _fdia(packets, spec, rng):
    """Alter the size/timing pattern of the targeted measurement stream and
    inject forged extra measurements; returns the replacement packet list."""
    sel = spec.target_flow
    streams = None
    if sel is None:
        # default target: the long-lived measurement streams active in the window
        counts = Counter((p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.proto) for p in packets
                         if spec.start <= p.ts <= spec.end and p.payload_class == "measurement")
        if counts:
            top = max(counts.values())
            streams = {t for t, c in counts.items() if 2 * c >= top}

    def targeted(p):
        if not (spec.start <= p.ts <= spec.end):
            return False
        if sel is not None:
            return _selects(sel, p)
        return streams is not None and (p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.proto) in streams

    hits = [i for i, p in enumerate(packets) if targeted(p)]
    if not hits:
        return None
    out = list(packets)
    lag = 0.04 * min(spec.intensity, 2.0)
    bump_hi = 4 + int(math.ceil(20 * spec.intensity))
    for i in hits:
        p = out[i]
        out[i] = p.as_attack("fdia", length=p.length + int(rng.integers(4, bump_hi + 1)),
                             ts=round(p.ts + rng.uniform(0.0, lag), 6))
    # forged extras along the same directional 5-tuples
    template = [out[i] for i in hits]
    n_extra = int(round(2.5 * spec.intensity * (spec.end - spec.start)))
    for _ in range(n_extra):
        p = template[int(rng.integers(len(template)))]
        ts = round(float(rng.uniform(spec.start, spec.end)), 6)
        out.append(p.as_attack("fdia", ts=ts, length=p.length + int(rng.integers(0, bump_hi + 1))))
    return out


def _mitm(packets, in_window, spec, rng):
    sel = spec.target_flow
    if sel is None:
        tup = _most_common((p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.proto) for p in in_window)
        if tup is None:
            return []
        sel = tup
    victims = [p for p in in_window if _selects(sel, p)]
    added = []
    for p in victims:
        head, _, last = p.src_ip.rpartition(".")
        spoofed = f"{head}.{200 + int(last) % 50}"
        delay = 0.005 + rng.uniform(0.0, 0.02 * spec.intensity)
        added.append(p.as_attack("spoof_mitm", src_ip=spoofed, ts=round(p.ts + delay, 6)))
    return added


def inject_attack(packets: Sequence[PacketRecord], spec: AttackSpec, seed: int = 0) -> list[PacketRecord]:
    """Return a new time-sorted log with `spec` applied.

    Added or modified packets carry label "anomalous" and attack_kind
    ``spec.kind``. A window entirely outside the log's time range (or one with
    nothing to target) emits EmptyInjectionWarning and returns the input
    unchanged.
    """
    packets = list(packets)
    if not packets or spec.end < packets[0].ts or spec.start > packets[-1].ts:
        warnings.warn(f"{spec.kind} window [{spec.start}, {spec.end}] outside log range; nothing injected",
                      EmptyInjectionWarning, stacklevel=2)
        return packets
    rng = np.random.default_rng(seed)
    in_window = [p for p in packets if spec.start <= p.ts <= spec.end]
    if spec.kind == "fdia":
        out = _fdia(packets, spec, rng)
        if out is None:
            warnings.warn("fdia matched no measurement packets; nothing injected", EmptyInjectionWarning,
                          stacklevel=2)
            return packets
        return sort_packets(out)
    if spec.kind == "scan":
        added = _scan(packets, in_window, spec, rng)
    elif spec.kind == "dos_flood":
        added = _dos(packets, in_window, spec, rng)
    else:
        added = _mitm(packets, in_window, spec, rng)
        if not added:
            warnings.warn("spoof_mitm found no flow to duplicate; nothing injected", EmptyInjectionWarning,
                          stacklevel=2)
            return packets
    return sort_packets(packets + added)


# ---------------------------------------------------------------------------
# background sessions


@dataclass(frozen=True)
class _Service:
    name: str
    proto: str
    port: int
    weight: float
    payload_class: str
    requests: tuple  # (min, max) request/response exchanges
    req_size: tuple
    resp_pkts: tuple
    resp_size: tuple
    think: float  # mean seconds between exchanges


_INTERNET = (
    _Service("http", "tcp", 80, 4.0, "bulk", (1, 3), (300, 700), (1, 30), (600, 1460), 0.3),
    _Service("http_443", "tcp", 443, 4.0, "bulk", (1, 4), (200, 900), (1, 25), (600, 1460), 0.4),
    _Service("smtp", "tcp", 25, 1.0, "bulk", (3, 6), (20, 120), (1, 2), (40, 120), 0.2),
    _Service("ftp_data", "tcp", 20, 0.7, "bulk", (1, 1), (60, 80), (20, 120), (1400, 1460), 0.05),
    _Service("ssh", "tcp", 22, 0.8, "other", (5, 40), (60, 120), (1, 2), (60, 200), 0.8),
    _Service("domain_u", "udp", 53, 3.0, "other", (1, 1), (50, 80), (1, 1), (80, 300), 0.0),
    _Service("ntp_u", "udp", 123, 0.5, "other", (1, 1), (76, 76), (1, 1), (76, 76), 0.0),
)

_AGC_AUX = (
    _Service("iec104", "tcp", 2404, 3.0, "measurement", (1, 3), (20, 30), (2, 12), (30, 250), 0.2),
    _Service("modbus", "tcp", 502, 1.5, "measurement", (2, 8), (12, 20), (1, 1), (20, 80), 0.5),
    _Service("snmp", "udp", 161, 2.0, "other", (1, 1), (70, 110), (1, 1), (90, 400), 0.0),
    _Service("ntp_u", "udp", 123, 1.0, "other", (1, 1), (76, 76), (1, 1), (76, 76), 0.0),
    _Service("domain_u", "udp", 53, 0.5, "other", (1, 1), (50, 80), (1, 1), (80, 200), 0.0),
    _Service("ssh", "tcp", 22, 0.3, "other", (5, 30), (60, 120), (1, 2), (60, 200), 0.8),
    _Service("http", "tcp", 80, 0.7, "bulk", (1, 3), (300, 600), (1, 10), (400, 1460), 0.5),
)


def _tcp_session(rng, t, cli, srv, svc: _Service, outcome: str) -> list[PacketRecord]:
    cport = _ephemeral(rng)
    rtt = float(rng.uniform(0.0005, 0.02)) if svc.port >= 1024 or svc.name == "modbus" else float(
        rng.uniform(0.005, 0.08))
    pkts = []

    def emit(ts, up, length, flags, pc=svc.payload_class):
        src, dst, sp, dp = (cli, srv, cport, svc.port) if up else (srv, cli, svc.port, cport)
        pkts.append(PacketRecord(round(ts, 6), src, dst, sp, dp, "tcp", int(length), flags, pc))

    emit(t, True, 60, SYN, "other")
    if outcome == "noreply":
        emit(t + 1.0, True, 60, SYN, "other")
        emit(t + 3.0, True, 60, SYN, "other")
        return pkts
    if outcome == "reject":
        emit(t + rtt / 2, False, 54, RST_ACK, "other")
        return pkts
    emit(t + rtt / 2, False, 60, SYN_ACK, "other")
    t += rtt
    emit(t, True, 52, ACK, "other")
    for _ in range(int(rng.integers(svc.requests[0], svc.requests[1] + 1))):
        t += float(rng.exponential(svc.think)) + 1e-4
        emit(t, True, rng.integers(svc.req_size[0], svc.req_size[1] + 1), PSH_ACK)
        t += rtt / 2
        n_resp = int(rng.integers(svc.resp_pkts[0], svc.resp_pkts[1] + 1))
        for j in range(n_resp):
            t += float(rng.exponential(0.002))
            emit(t, False, rng.integers(svc.resp_size[0], svc.resp_size[1] + 1),
                 PSH_ACK if j == n_resp - 1 else ACK)
        t += rtt / 2
        emit(t, True, 52, ACK, "other")
    t += float(rng.exponential(0.05))
    if outcome == "reset":
        emit(t, True, 54, RST_ACK, "other")
        return pkts
    emit(t, True, 52, FIN_ACK, "other")
    emit(t + rtt / 2, False, 52, FIN_ACK, "other")
    emit(t + rtt, True, 52, ACK, "other")
    return pkts


def _udp_exchange(rng, t, cli, srv, svc: _Service) -> list[PacketRecord]:
    cport = _ephemeral(rng)
    rtt = float(rng.uniform(0.001, 0.05))
    req = PacketRecord(round(t, 6), cli, srv, cport, svc.port, "udp",
                       int(rng.integers(svc.req_size[0], svc.req_size[1] + 1)), NOFLAGS, svc.payload_class)
    resp = PacketRecord(round(t + rtt, 6), srv, cli, svc.port, cport, "udp",
                        int(rng.integers(svc.resp_size[0], svc.resp_size[1] + 1)), NOFLAGS, svc.payload_class)
    return [req, resp]


def background_sessions(profile: str, horizon: float, rate: float, seed: int,
                        failure_rate: float = 0.02) -> list[PacketRecord]:
    """Poisson-arriving client/server sessions for the ``internet`` or ``agc``
    profile. A small fraction of TCP sessions fail (reject, no reply, reset)
    as ordinary background noise."""
    rng = np.random.default_rng(seed)
    if profile == "internet":
        services = _INTERNET
        clients = [f"192.168.1.{i}" for i in range(2, 62)]
        servers = [f"203.0.113.{i}" for i in range(10, 30)]
    elif profile == "agc":
        services = _AGC_AUX
        clients = [f"10.1.0.{i}" for i in (1, 5, 7, 20, 21)]
        servers = [f"10.1.{a}.{h}" for a in (1, 2) for h in range(20, 32)]
    else:
        raise ValueError(f"unknown traffic profile {profile!r}")
    weights = np.array([s.weight for s in services])
    weights /= weights.sum()
    out: list[PacketRecord] = []
    t = float(rng.exponential(1.0 / rate))
    while t < horizon:
        svc = services[int(rng.choice(len(services), p=weights))]
        cli = clients[int(rng.integers(len(clients)))]
        srv = servers[int(rng.integers(len(servers)))]
        if svc.proto == "udp":
            out.extend(_udp_exchange(rng, t, cli, srv, svc))
        else:
            u = rng.random()
            outcome = "fin"
            if u < failure_rate:
                outcome = ("reject", "noreply", "reset")[int(rng.integers(3))]
            out.extend(_tcp_session(rng, t, cli, srv, svc, outcome))
        t += float(rng.exponential(1.0 / rate))
    return [p for p in sort_packets(out) if p.ts <= horizon]


def sensor_streams(horizon: float, n_streams: int, period: float, seed: int) -> list[PacketRecord]:
    """Long-lived publish streams (MQTT-like) for the internet profile, the
    counterpart of AGC telemetry in the source domain."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_streams):
        src = f"192.168.2.{10 + i}"
        sport = _ephemeral(rng)
        phase = float(rng.uniform(0, period))
        base = int(rng.integers(80, 160))
        level = 0.0
        for k in range(int((horizon - phase) / period)):
            level = 0.95 * level + rng.normal(0, 1.0)
            t = phase + k * period + rng.uniform(-0.01, 0.01) * period
            out.append(PacketRecord(round(max(0.0, t), 6), src, "203.0.113.50", sport, 1883, "tcp",
                                    base + int(abs(level) * 3), PSH_ACK, "measurement"))
    return sort_packets(out)


# ---------------------------------------------------------------------------
# dataset builder

ATTACK_INTENSITY = {
    "scan": (15.0, 45.0),
    "dos_flood": (1.0, 4.0),
    "fdia": (0.5, 2.0),
    "spoof_mitm": (0.5, 2.0),
}


@dataclass
class DatasetConfig:
    out_dir: str = "corpus"
    seed: int = 7
    source_horizon: float = 1280.0
    target_horizon: float = 1920.0
    source_session_rate: float = 3.0
    target_session_rate: float = 1.0
    attack_fraction: float = 0.6
    slot: float = 64.0  # attack scheduling granularity, seconds
    source_attack_fraction: float = 0.9
    source_slot: float = 32.0
    attack_kinds: tuple = ATTACK_FAMILIES
    telemetry_jitter: float = 0.003
    load_sigma: float = 0.01
    source_streams: int = 4
    source_name: str = "source.jsonl"
    target_name: str = "target.jsonl"
    manifest_name: str = "manifest.json"

    def validate(self):
        if self.source_horizon <= 0 or self.target_horizon <= 0:
            raise ValueError("requested corpus size is zero (horizons must be positive)")
        if self.source_session_rate <= 0 or self.target_session_rate <= 0:
            raise ValueError("requested corpus size is zero (session rates must be positive)")
        if not (0.0 <= self.attack_fraction <= 1.0 and 0.0 <= self.source_attack_fraction <= 1.0):
            raise ValueError("attack fractions must lie in [0, 1]")
        if self.slot <= 20 or self.source_slot <= 20:
            raise ValueError("attack slots must be longer than 20 s")
        bad = set(self.attack_kinds) - set(ATTACK_FAMILIES)
        if bad or not self.attack_kinds:
            raise ValueError(f"bad attack_kinds {sorted(bad) or '(empty)'}")

    def hashable(self) -> dict:
        d = asdict(self)
        d.pop("out_dir")
        d["attack_kinds"] = list(d["attack_kinds"])
        return d


def schedule_attacks(horizon: float, kinds, fraction: float, slot: float, seed: int,
                     attacker_ip: str) -> list[AttackSpec]:
    """At most one attack family per slot; fdia and spoof_mitm cover the whole
    slot so the affected long-lived flows are majority-anomalous."""
    rng = np.random.default_rng(seed)
    specs = []
    n_slots = int(horizon // slot)
    kinds = list(kinds)
    for s in range(n_slots):
        if rng.random() >= fraction:
            continue
        kind = kinds[int(rng.integers(len(kinds)))]
        lo, hi = ATTACK_INTENSITY[kind]
        intensity = float(rng.uniform(lo, hi))
        t0 = s * slot
        if kind in ("fdia", "spoof_mitm"):
            specs.append(AttackSpec(kind, t0, t0 + slot, intensity, attacker_ip=attacker_ip))
        elif kind == "scan":
            for _ in range(int(rng.integers(1, 4))):
                start = t0 + float(rng.uniform(0, slot - 5))
                specs.append(AttackSpec(kind, start, start + float(rng.uniform(1, 4)), intensity,
                                        attacker_ip=attacker_ip))
        else:
            start = t0 + float(rng.uniform(0, slot - 20))
            specs.append(AttackSpec(kind, start, start + float(rng.uniform(5, 20)), intensity,
                                    attacker_ip=attacker_ip))
    return specs


def _apply(packets, specs, seed):
    for i, spec in enumerate(specs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyInjectionWarning)
            packets = inject_attack(packets, spec, seed=derive_seed(seed, f"attack{i}"))
    return packets


def build_source_log(cfg: DatasetConfig, seed: int) -> list[PacketRecord]:
    h = cfg.source_horizon
    packets = sort_packets(
        background_sessions("internet", h, cfg.source_session_rate, derive_seed(seed, "sessions"))
        + sensor_streams(h, cfg.source_streams, 0.5, derive_seed(seed, "streams"))
    )
    specs = schedule_attacks(h, cfg.attack_kinds, cfg.source_attack_fraction, cfg.source_slot,
                             derive_seed(seed, "schedule"), "198.51.100.66")
    return _apply(packets, specs, derive_seed(seed, "inject"))


def build_target_log(cfg: DatasetConfig, seed: int) -> list[PacketRecord]:
    h = cfg.target_horizon
    states = simulate_agc(AgcConfig(load_sigma=cfg.load_sigma), h, 0.01, derive_seed(seed, "agc"))
    telemetry = emit_telemetry(states, NetProfile(jitter=cfg.telemetry_jitter), derive_seed(seed, "telemetry"))
    packets = sort_packets(
        telemetry + background_sessions("agc", h, cfg.target_session_rate, derive_seed(seed, "sessions"))
    )
    specs = schedule_attacks(h, cfg.attack_kinds, cfg.attack_fraction, cfg.slot,
                             derive_seed(seed, "schedule"), "10.1.9.66")
    return _apply(packets, specs, derive_seed(seed, "inject"))


def label_counts(packets: Sequence[PacketRecord]) -> dict:
    kinds = Counter(p.attack_kind for p in packets)
    return {
        "normal": kinds.get("none", 0),
        "anomalous": sum(v for k, v in kinds.items() if k != "none"),
        "per_attack_kind": {k: kinds.get(k, 0) for k in ATTACK_FAMILIES},
    }


def build_dataset(config: DatasetConfig) -> dict:
    """Write the source (internet) and target (AGC) JSONL logs plus a manifest.

    Returns the manifest dict.
    """
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src = build_source_log(config, derive_seed(config.seed, "source"))
    tgt = build_target_log(config, derive_seed(config.seed, "target"))
    if not src or not tgt:
        raise ValueError("requested corpus produced zero packets")
    write_log(out / config.source_name, src)
    write_log(out / config.target_name, tgt)
    src_counts, tgt_counts = label_counts(src), label_counts(tgt)
    manifest = {
        "schema_version": 1,
        "seed": config.seed,
        "config_hash": sha256_hex(config.hashable()),
        "counts": {
            "normal": src_counts["normal"] + tgt_counts["normal"],
            "anomalous": src_counts["anomalous"] + tgt_counts["anomalous"],
            "per_attack_kind": {k: src_counts["per_attack_kind"][k] + tgt_counts["per_attack_kind"][k]
                                for k in ATTACK_FAMILIES},
        },
        "logs": {
            "source": {"path": config.source_name, "seed": derive_seed(config.seed, "source"),
                       "counts": src_counts},
            "target": {"path": config.target_name, "seed": derive_seed(config.seed, "target"),
                       "counts": tgt_counts},
        },
    }
    with open(out / config.manifest_name, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
