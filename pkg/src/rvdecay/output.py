"""Deterministic file writers: CSV, gnuplot data, key=value text, manifest.

Numbers are written with ``%.17g`` (round-trip exact, locale independent);
undefined values become empty CSV fields or ``NaN`` in gnuplot files.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

__all__ = ["fmt", "write_csv", "write_dat", "write_text", "sha256_file", "write_manifest"]


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def write_csv(path, header, columns):
    """Write equal-length columns under ``header`` (newline ``\\n``)."""
    cols = [list(c) for c in columns]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(fmt(c[i]) for c in cols) + "\n")


def write_dat(path, header, columns):
    """Whitespace-separated gnuplot data with a ``#`` header line."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in zip(*cols):
            fh.write(" ".join("NaN" if math.isnan(v) else fmt(v) for v in row) + "\n")


def write_text(path, text):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, payload, outputs):
    """manifest.json with the sha256 of every output file (sorted, no timestamps)."""
    out_dir = Path(out_dir)
    payload = _clean(dict(payload))
    payload["outputs"] = {name: sha256_file(out_dir / name) for name in sorted(outputs)}
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"
    write_text(out_dir / "manifest.json", text)


def _clean(o):
    """Replace non-finite floats by strings so the JSON stays strict."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return fmt(o) or "nan"
    return o


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
