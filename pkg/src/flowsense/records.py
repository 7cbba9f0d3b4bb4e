"""Packet metadata records and the JSONL packet-log format."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

PROTOCOLS = ("tcp", "udp", "icmp", "other")
PAYLOAD_CLASSES = ("measurement", "setpoint", "bulk", "probe", "other")
LABELS = ("normal", "anomalous")
ATTACK_KINDS = ("none", "dos_flood", "fdia", "scan", "spoof_mitm")


class TcpFlag(enum.IntFlag):
    SYN = 1
    ACK = 2
    FIN = 4
    RST = 8
    URG = 16
    PSH = 32


FLAG_ORDER = ("SYN", "ACK", "FIN", "RST", "URG", "PSH")


class LogFormatError(ValueError):
    """Malformed or out-of-order packet log."""


@dataclass(frozen=True, slots=True)
class PacketRecord:
    ts: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    proto: str
    length: int
    tcp_flags: TcpFlag = TcpFlag(0)
    payload_class: str = "other"
    label: str = "normal"
    attack_kind: str = "none"

    def __post_init__(self):
        if (self.label == "anomalous") != (self.attack_kind != "none"):
            raise ValueError(
                f"label {self.label!r} inconsistent with attack_kind {self.attack_kind!r}"
            )

    def as_attack(self, kind: str, **changes) -> PacketRecord:
        return replace(self, label="anomalous", attack_kind=kind, **changes)

    def to_json(self) -> str:
        flags = [name for name in FLAG_ORDER if self.tcp_flags & TcpFlag[name]]
        return json.dumps(
            {
                "ts": self.ts,
                "src_ip": self.src_ip,
                "dst_ip": self.dst_ip,
                "src_port": self.src_port,
                "dst_port": self.dst_port,
                "proto": self.proto,
                "length": self.length,
                "tcp_flags": flags,
                "payload_class": self.payload_class,
                "label": self.label,
                "attack_kind": self.attack_kind,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> PacketRecord:
        try:
            d = json.loads(line)
            flags = TcpFlag(0)
            for name in d["tcp_flags"]:
                flags |= TcpFlag[name]
            rec = cls(
                ts=float(d["ts"]),
                src_ip=d["src_ip"],
                dst_ip=d["dst_ip"],
                src_port=int(d["src_port"]),
                dst_port=int(d["dst_port"]),
                proto=d["proto"],
                length=int(d["length"]),
                tcp_flags=flags,
                payload_class=d["payload_class"],
                label=d["label"],
                attack_kind=d.get("attack_kind") or "none",
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(f"bad packet record: {exc}") from exc
        if rec.proto not in PROTOCOLS or rec.payload_class not in PAYLOAD_CLASSES:
            raise LogFormatError(f"bad enum value in record at ts={rec.ts}")
        if rec.attack_kind not in ATTACK_KINDS:
            raise LogFormatError(f"unknown attack_kind {rec.attack_kind!r}")
        if not (0 <= rec.src_port <= 65535 and 0 <= rec.dst_port <= 65535) or rec.length < 0:
            raise LogFormatError(f"field out of range in record at ts={rec.ts}")
        return rec


def sort_packets(packets: Iterable[PacketRecord]) -> list[PacketRecord]:
    # stable: equal timestamps keep generation order
    return sorted(packets, key=lambda p: p.ts)


def write_log(path: str | Path, packets: Iterable[PacketRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in packets:
            fh.write(p.to_json())
            fh.write("\n")
            n += 1
    return n


def iter_log(path: str | Path) -> Iterator[PacketRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield PacketRecord.from_json(line)
            except (LogFormatError, ValueError) as exc:
                raise LogFormatError(f"{path}:{lineno}: {exc}") from exc


def read_log(path: str | Path) -> list[PacketRecord]:
    return list(iter_log(path))
