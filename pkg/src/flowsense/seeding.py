"""Stage-seed derivation and config hashing."""

import hashlib
import json


def derive_seed(seed: int, stage: str) -> int:
    """Deterministic 63-bit seed for a named stage: sha256("<seed>:<stage>")."""
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(obj) -> str:
    if isinstance(obj, (bytes, bytearray)):
        return hashlib.sha256(obj).hexdigest()
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()
