"""Bidirectional flow assembly and the 39-attribute flow feature vector.

Attributes 1-13 describe the flow itself, 14-24 are wavelet-packet
frequency attributes of its byte-rate series (see :mod:`flowsense.wavelet`),
and 25-39 count related flows in the preceding two 2-second time slots.
"""

from __future__ import annotations

import csv
import heapq
import ipaddress
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .records import FLAG_ORDER, LogFormatError, PacketRecord, TcpFlag
from .wavelet import frequency_features

IDLE_TIMEOUT = 2.0
MAX_DURATION = 64.0
N_SLOTS = 64
MIN_SPAN = 0.64
TIME_SLOT = 2.0
HISTORY_WINDOW = 2 * TIME_SLOT

STATE_FLAGS = ("SF", "S0", "REJ", "RSTO", "RSTR", "SH", "S1", "S2", "S3", "OTH", "SHR")
SYN_ERROR_STATES = frozenset({"S0", "S1", "S2", "S3"})
REJ_ERROR_STATES = frozenset({"REJ"})

# feature index (1-based) -> short name; f2, f3, f4 are symbolic
FEATURE_NAMES = (
    "duration", "protocol_type", "service", "flag", "up_bytes", "down_bytes",
    "up_pkts", "down_pkts", "land", "urgent", "mean_pkt_size", "up_size_var", "down_size_var",
    "wp_band0", "wp_band1", "wp_band2", "wp_band3", "wp_band4", "wp_band5", "wp_band6",
    "wp_band7", "wp_log_energy", "wp_entropy", "wp_high_ratio",
    "count", "host_srv_count", "serror_rate", "rerror_rate", "same_srv_rate",
    "diff_srv_rate", "srv_count", "srv_serror_rate", "srv_rerror_rate",
    "srv_diff_host_rate", "host_count", "host_srv_pairs", "win_same_srv_rate",
    "win_serror_rate", "win_rerror_rate",
)
SYMBOLIC = (2, 3, 4)
NUMERIC_INDICES = tuple(i for i in range(1, 40) if i not in SYMBOLIC)
CSV_HEADER = tuple(f"f{i}" for i in range(1, 40)) + ("label",)

_SERVICES_TCP = {
    7: "echo", 9: "discard", 11: "systat", 13: "daytime", 15: "netstat", 20: "ftp_data",
    21: "ftp", 22: "ssh", 23: "telnet", 25: "smtp", 37: "time", 42: "name", 43: "whois",
    53: "domain", 57: "mtp", 70: "gopher", 71: "remote_job", 77: "rje", 79: "finger",
    80: "http", 84: "ctf", 87: "link", 95: "supdup", 101: "hostnames", 102: "iso_tsap",
    105: "csnet_ns", 109: "pop_2", 110: "pop_3", 111: "sunrpc", 113: "auth", 117: "uucp_path",
    119: "nntp", 137: "netbios_ns", 138: "netbios_dgm", 139: "netbios_ssn", 143: "imap4",
    150: "sql_net", 175: "vmnet", 179: "bgp", 194: "irc", 210: "z39_50", 243: "pm_dump",
    389: "ldap", 433: "nnsp", 443: "http_443", 502: "modbus", 512: "exec", 513: "login",
    514: "shell", 515: "printer", 520: "efs", 530: "courier", 540: "uucp", 543: "klogin",
    544: "kshell", 1883: "mqtt", 2404: "iec104", 2500: "harvest", 2784: "http_2784",
    3389: "rdp", 4840: "opcua", 5060: "sip", 5190: "aol", 6000: "x11", 8001: "http_8001",
    20000: "dnp3",
}
_SERVICES_UDP = {
    53: "domain_u", 69: "tftp_u", 123: "ntp_u", 161: "snmp", 514: "syslog", 5060: "sip",
    20000: "dnp3",
}
_SERVICES_ICMP = {8: "eco_i", 0: "ecr_i", 13: "tim_i", 14: "tim_i", 5: "red_i", 3: "urp_i"}


def service_for(proto: str, port: int) -> str:
    """Service token from the responder port (ICMP: the type carried in the port field)."""
    if proto == "tcp":
        name = _SERVICES_TCP.get(port)
    elif proto == "udp":
        name = _SERVICES_UDP.get(port)
    elif proto == "icmp":
        return _SERVICES_ICMP.get(port, "urh_i")
    else:
        return "other"
    if name is not None:
        return name
    return "private" if port >= 1024 else "other"


@lru_cache(maxsize=65536)
def _ip_int(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip))


class FlowOrderError(LogFormatError):
    """Packets handed to flow assembly were not sorted by timestamp."""


class FlowKey(NamedTuple):
    ip_lo: str
    ip_hi: str
    port_lo: int
    port_hi: int
    proto: str

    @classmethod
    def of(cls, p: PacketRecord) -> FlowKey:
        a = (_ip_int(p.src_ip), p.src_port)
        b = (_ip_int(p.dst_ip), p.dst_port)
        if a <= b:
            return cls(p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.proto)
        return cls(p.dst_ip, p.src_ip, p.dst_port, p.src_port, p.proto)

    def as_dict(self) -> dict:
        return self._asdict()


@dataclass
class FlowRecord:
    key: FlowKey
    first_ts: float
    last_ts: float
    close_ts: float
    initiator: tuple  # (ip, port) of the endpoint that sent the first packet
    responder: tuple
    up_bytes: int
    down_bytes: int
    up_pkts: int
    down_pkts: int
    up_sizes: list
    down_sizes: list
    flag_counters: dict
    service: str
    state_flag: str
    timestamps: np.ndarray
    sizes: np.ndarray
    label: str
    attack_kind: str = "none"
    rate_series: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.rate_series is None:
            self.rate_series = rate_series(self)

    @property
    def proto(self) -> str:
        return self.key.proto

    @property
    def dst_host(self) -> str:
        return self.responder[0]

    @property
    def duration(self) -> float:
        return self.last_ts - self.first_ts


class _Builder:
    __slots__ = ("key", "seq", "initiator", "responder", "first_ts", "last_ts", "up_sizes",
                 "down_sizes", "times", "sizes", "flags", "labels", "kinds", "first_flags",
                 "orig_syn", "resp_synack", "orig_fin", "resp_fin", "orig_rst", "resp_rst",
                 "resp_other", "version")

    def __init__(self, key, seq, p: PacketRecord):
        self.key = key
        self.seq = seq
        self.initiator = (p.src_ip, p.src_port)
        self.responder = (p.dst_ip, p.dst_port)
        self.first_ts = p.ts
        self.last_ts = p.ts
        self.up_sizes, self.down_sizes, self.times, self.sizes = [], [], [], []
        self.flags = Counter()
        self.labels = Counter()
        self.kinds = Counter()
        self.first_flags = p.tcp_flags
        self.orig_syn = self.resp_synack = self.orig_fin = self.resp_fin = False
        self.orig_rst = self.resp_rst = self.resp_other = False
        self.version = 0

    def add(self, p: PacketRecord):
        up = (p.src_ip, p.src_port) == self.initiator
        self.last_ts = p.ts
        self.times.append(p.ts)
        self.sizes.append(p.length)
        (self.up_sizes if up else self.down_sizes).append(p.length)
        self.labels[p.label] += 1
        if p.attack_kind != "none":
            self.kinds[p.attack_kind] += 1
        f = p.tcp_flags
        if f:
            for name in FLAG_ORDER:
                if f & TcpFlag[name]:
                    self.flags[name] += 1
        if self.key.proto != "tcp":
            return
        syn, ack = bool(f & TcpFlag.SYN), bool(f & TcpFlag.ACK)
        if up:
            if syn and not ack:
                self.orig_syn = True
            self.orig_fin |= bool(f & TcpFlag.FIN)
            self.orig_rst |= bool(f & TcpFlag.RST)
        else:
            if syn and ack:
                self.resp_synack = True
            elif f & TcpFlag.RST:
                self.resp_rst = True
            else:
                self.resp_other = True
            self.resp_fin |= bool(f & TcpFlag.FIN)

    @property
    def finishing(self) -> bool:
        return self.orig_fin and self.resp_fin

    def deadline(self, idle, max_dur) -> float:
        return min(self.last_ts + idle, self.first_ts + max_dur)

    def state_flag(self) -> str:
        if self.key.proto != "tcp":
            return "SF"
        if not self.orig_syn:
            if self.first_flags & TcpFlag.SYN and self.first_flags & TcpFlag.ACK and self.orig_fin:
                return "SHR"
            return "OTH"
        if not self.resp_synack:
            if self.resp_rst:
                return "REJ"
            if self.orig_rst:
                return "RSTO"
            if self.orig_fin:
                return "SH"
            if self.resp_other:
                return "OTH"
            return "S0"
        if self.orig_rst:
            return "RSTO"
        if self.resp_rst:
            return "RSTR"
        if self.orig_fin or self.resp_fin:
            return "SF"
        return "S1"

    def finish(self, close_ts: float) -> FlowRecord:
        label = "anomalous" if self.labels["anomalous"] > self.labels["normal"] else "normal"
        kind = "none"
        if label == "anomalous":
            best = max(self.kinds.values())
            kind = min(k for k, v in self.kinds.items() if v == best)
        proto = self.key.proto
        return FlowRecord(
            key=self.key,
            first_ts=self.first_ts,
            last_ts=self.last_ts,
            close_ts=close_ts,
            initiator=self.initiator,
            responder=self.responder,
            up_bytes=sum(self.up_sizes),
            down_bytes=sum(self.down_sizes),
            up_pkts=len(self.up_sizes),
            down_pkts=len(self.down_sizes),
            up_sizes=self.up_sizes,
            down_sizes=self.down_sizes,
            flag_counters={name: self.flags.get(name, 0) for name in FLAG_ORDER},
            service=service_for(proto, self.responder[1]),
            state_flag=self.state_flag(),
            timestamps=np.asarray(self.times, dtype=np.float64),
            sizes=np.asarray(self.sizes, dtype=np.float64),
            label=label,
            attack_kind=kind,
        )


def iter_flows(packets: Iterable[PacketRecord], idle_timeout: float = IDLE_TIMEOUT,
               max_duration: float = MAX_DURATION) -> Iterator[FlowRecord]:
    """Stream closed flows in closing-time order.

    A flow closes on a reset, after both sides sent FIN (absorbing one
    trailing pure ACK), after more than ``idle_timeout`` seconds without a
    packet, or when a packet would stretch it beyond ``max_duration``.
    """
    active: dict[FlowKey, _Builder] = {}
    heap: list = []
    seq = 0
    prev_ts = -math.inf

    def expire_before(ts):
        while heap and heap[0][0] < ts:
            deadline, _, key, version = heapq.heappop(heap)
            b = active.get(key)
            if b is not None and b.version == version:
                del active[key]
                yield b.finish(deadline)

    for p in packets:
        if p.ts < prev_ts:
            raise FlowOrderError(f"packet at ts={p.ts} follows ts={prev_ts}; input must be time-sorted")
        prev_ts = p.ts
        yield from expire_before(p.ts)
        key = FlowKey.of(p)
        b = active.get(key)
        if b is not None and b.finishing:
            if p.tcp_flags == TcpFlag.ACK:
                b.add(p)
                del active[key]
                yield b.finish(p.ts)
                continue
            del active[key]
            yield b.finish(p.ts)
            b = None
        if b is None:
            b = _Builder(key, seq, p)
            seq += 1
            active[key] = b
        b.add(p)
        if p.tcp_flags & TcpFlag.RST:
            del active[key]
            yield b.finish(p.ts)
            continue
        b.version += 1
        heapq.heappush(heap, (b.deadline(idle_timeout, max_duration), b.seq, key, b.version))
    rest = sorted(active.values(), key=lambda b: (b.deadline(idle_timeout, max_duration), b.seq))
    for b in rest:
        yield b.finish(b.deadline(idle_timeout, max_duration))


def assemble_flows(packets: Sequence[PacketRecord], idle_timeout: float = IDLE_TIMEOUT,
                   max_duration: float = MAX_DURATION) -> list[FlowRecord]:
    return list(iter_flows(packets, idle_timeout, max_duration))


def rate_series(flow: FlowRecord, n_slots: int = N_SLOTS, min_span: float = MIN_SPAN) -> np.ndarray:
    """Bytes per slot over [first_ts, first_ts + max(duration, min_span)]."""
    span = max(flow.last_ts - flow.first_ts, min_span)
    width = span / n_slots
    # a timestamp within 1e-9 slot of a boundary belongs to the upper slot
    idx = np.floor((flow.timestamps - flow.first_ts) / width + 1e-9).astype(np.int64)
    np.clip(idx, 0, n_slots - 1, out=idx)
    return np.bincount(idx, weights=flow.sizes, minlength=n_slots).astype(np.float64)


def _pvar(xs) -> float:
    n = len(xs)
    if n <= 1:
        return 0.0
    return float(np.var(np.asarray(xs, dtype=np.float64)))


def intrinsic_features(flow: FlowRecord) -> list:
    """f1..f13."""
    land = 1 if flow.initiator == flow.responder else 0
    n = flow.up_pkts + flow.down_pkts
    return [
        flow.duration,
        flow.proto,
        flow.service,
        flow.state_flag.lower(),
        flow.up_bytes,
        flow.down_bytes,
        flow.up_pkts,
        flow.down_pkts,
        land,
        flow.flag_counters.get("URG", 0),
        (flow.up_bytes + flow.down_bytes) / n,
        _pvar(flow.up_sizes),
        _pvar(flow.down_sizes),
    ]


class _Entry(NamedTuple):
    last_ts: float
    host: str
    service: str
    serror: bool
    rerror: bool


def _entry(flow: FlowRecord) -> _Entry:
    return _Entry(flow.last_ts, flow.dst_host, flow.service,
                  flow.state_flag in SYN_ERROR_STATES, flow.state_flag in REJ_ERROR_STATES)


class FlowHistory:
    """Immutable snapshot of previously closed flows."""

    __slots__ = ("_entries",)

    def __init__(self, flows: Iterable = ()):
        entries = []
        for f in flows:
            entries.append(f if isinstance(f, _Entry) else _entry(f))
        self._entries = tuple(entries)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def window(self, end_ts: float, width: float = HISTORY_WINDOW) -> list[_Entry]:
        lo = end_ts - width
        return [e for e in self._entries if lo <= e.last_ts < end_ts]


def _rate(num: int, den: int) -> float:
    return num / den if den else 0.0


def statistic_features(flow: FlowRecord, history: FlowHistory, window: float = HISTORY_WINDOW) -> list:
    """f25..f39 over history flows whose last_ts lies in [last_ts - window, last_ts)."""
    win = history.window(flow.last_ts, window)
    host, srv = flow.dst_host, flow.service
    same_host = [e for e in win if e.host == host]
    same_srv = [e for e in win if e.service == srv]
    n_h, n_s, n_w = len(same_host), len(same_srv), len(win)
    h_same_srv = sum(1 for e in same_host if e.service == srv)
    return [
        n_h,
        h_same_srv,
        _rate(sum(e.serror for e in same_host), n_h),
        _rate(sum(e.rerror for e in same_host), n_h),
        _rate(h_same_srv, n_h),
        _rate(n_h - h_same_srv, n_h),
        n_s,
        _rate(sum(e.serror for e in same_srv), n_s),
        _rate(sum(e.rerror for e in same_srv), n_s),
        _rate(len({e.host for e in same_srv}), n_s),
        len({e.host for e in win}),
        len({(e.host, e.service) for e in win}),
        _rate(n_s, n_w),
        _rate(sum(e.serror for e in win), n_w),
        _rate(sum(e.rerror for e in win), n_w),
    ]


@dataclass(frozen=True)
class FeatureVector39:
    values: tuple
    label: str = "normal"

    def __post_init__(self):
        if len(self.values) != 39:
            raise ValueError(f"feature vector needs 39 entries, got {len(self.values)}")

    def __getitem__(self, i: int):
        """1-based access: fv[1] is duration."""
        return self.values[i - 1]

    @property
    def numeric(self) -> np.ndarray:
        return np.array([self.values[i - 1] for i in NUMERIC_INDICES], dtype=np.float64)

    @property
    def symbolic(self) -> tuple:
        return tuple(self.values[i - 1] for i in SYMBOLIC)

    def reversed_direction(self) -> FeatureVector39:
        """Swap the upstream/downstream attributes."""
        v = list(self.values)
        for a, b in ((5, 6), (7, 8), (12, 13)):
            v[a - 1], v[b - 1] = v[b - 1], v[a - 1]
        return FeatureVector39(tuple(v), self.label)


def extract_features(flow: FlowRecord, history: FlowHistory) -> FeatureVector39:
    values = intrinsic_features(flow) + frequency_features(flow.rate_series) + statistic_features(flow, history)
    return FeatureVector39(tuple(values), flow.label)


class FeatureExtractor:
    """Streaming extraction: each flow sees the flows closed before it.

    Only entries that can still fall inside a future flow's window are kept.
    """

    def __init__(self, window: float = HISTORY_WINDOW, idle_timeout: float = IDLE_TIMEOUT):
        self.window = window
        self.slack = idle_timeout
        self._recent: deque[_Entry] = deque()

    def push(self, flow: FlowRecord) -> FeatureVector39:
        # later flows have last_ts >= close_ts - idle_timeout
        horizon = flow.close_ts - self.slack - self.window
        while self._recent and self._recent[0].last_ts < horizon:
            self._recent.popleft()
        fv = extract_features(flow, FlowHistory(e for e in self._recent if e.last_ts >= flow.last_ts - self.window))
        self._recent.append(_entry(flow))
        return fv


def flow_features(packets: Iterable[PacketRecord], **assembly) -> Iterator[tuple[FlowRecord, FeatureVector39]]:
    ex = FeatureExtractor(idle_timeout=assembly.get("idle_timeout", IDLE_TIMEOUT))
    for flow in iter_flows(packets, **assembly):
        yield flow, ex.push(flow)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    x = float(v)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".9g")


def write_features_csv(path, vectors: Iterable[FeatureVector39]) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for fv in vectors:
            w.writerow([_fmt(v) for v in fv.values] + [fv.label])
            n += 1
    return n


def read_features_csv(path) -> list[FeatureVector39]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise LogFormatError(f"{path}: expected 40-column feature header f1..f39,label")
        for lineno, row in enumerate(r, 2):
            if len(row) != 40:
                raise LogFormatError(f"{path}:{lineno}: expected 40 columns, got {len(row)}")
            try:
                vals = tuple(row[i - 1] if i in SYMBOLIC else float(row[i - 1]) for i in range(1, 40))
            except ValueError as exc:
                raise LogFormatError(f"{path}:{lineno}: {exc}") from exc
            if row[39] not in ("normal", "anomalous"):
                raise LogFormatError(f"{path}:{lineno}: bad label {row[39]!r}")
            out.append(FeatureVector39(vals, row[39]))
    return out
