"""Map classic 41-attribute KDD-style connection CSVs onto the 39-feature layout.

Columns without a counterpart (packet counts, size variances, the frequency
block) are filled with 0, which is also what a flow with no spectral energy
produces. Any label other than ``normal`` is treated as anomalous.
"""

from __future__ import annotations

import csv

from .flows import FeatureVector39
from .records import LogFormatError

KDD_COLUMNS = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
)

# feature position (1-based) -> KDD column; positions not listed become 0
FEATURE_FROM_KDD = {
    1: "duration", 2: "protocol_type", 3: "service", 4: "flag", 5: "src_bytes",
    6: "dst_bytes", 9: "land", 10: "urgent", 25: "count", 27: "serror_rate",
    28: "rerror_rate", 29: "same_srv_rate", 30: "diff_srv_rate", 31: "srv_count",
    32: "srv_serror_rate", 33: "srv_rerror_rate", 34: "srv_diff_host_rate",
    35: "dst_host_count", 36: "dst_host_srv_count", 37: "dst_host_same_srv_rate",
    38: "dst_host_serror_rate", 39: "dst_host_rerror_rate",
}


def kdd_row_to_vector(row) -> FeatureVector39:
    """One KDD row (41 attributes, label, optional difficulty) -> FeatureVector39."""
    if len(row) not in (42, 43):
        raise LogFormatError(f"expected 42 or 43 KDD columns, got {len(row)}")
    rec = dict(zip(KDD_COLUMNS, row))
    vals = []
    for i in range(1, 40):
        col = FEATURE_FROM_KDD.get(i)
        if col is None:
            vals.append(0.0)
        elif i in (2, 3, 4):
            vals.append(rec[col].strip().lower())
        else:
            vals.append(float(rec[col]))
    label = "normal" if row[41].strip().rstrip(".").lower() == "normal" else "anomalous"
    return FeatureVector39(tuple(vals), label)


def read_kdd_csv(path) -> list[FeatureVector39]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or (lineno == 1 and row[0] == "duration"):
                continue
            try:
                out.append(kdd_row_to_vector(row))
            except (LogFormatError, ValueError) as exc:
                raise LogFormatError(f"{path}:{lineno}: {exc}") from exc
    return out
