"""Sink-output containers, multiset comparison and digests.

Enactments return ``SinkOutputs``: per-sink ordered lists of record field
maps.  Mappings other than the sequential one may reorder records, so
equivalence is multiset equality per sink, with a relative tolerance for
floats.
"""

from __future__ import annotations

import hashlib
import json
import math

SinkOutputs = dict[str, list[dict]]

FLOAT_REL_TOL = 1e-9


def _sort_token(value):
    if isinstance(value, float):
        return f"{value:.9g}"
    return value


def _sort_key(fields: dict) -> str:
    return json.dumps(fields, sort_keys=True, default=str)


def _values_equal(a, b, rel_tol: float) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        if not isinstance(a, (int, float)) or not isinstance(b, (int, float)):
            return False
        return math.isclose(a, b, rel_tol=rel_tol, abs_tol=1e-12)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_values_equal(x, y, rel_tol) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_values_equal(a[k], b[k], rel_tol) for k in a)
    return a == b


def records_equal(a: dict, b: dict, rel_tol: float = FLOAT_REL_TOL) -> bool:
    return _values_equal(a, b, rel_tol)


def sink_outputs_equal(a: SinkOutputs, b: SinkOutputs, rel_tol: float = FLOAT_REL_TOL) -> bool:
    """Per-sink multiset equality; exact for ints and strings, relative
    tolerance for floats."""
    if set(a) != set(b):
        return False
    for sink in a:
        left = sorted(a[sink], key=_sort_key)
        right = sorted(b[sink], key=_sort_key)
        if len(left) != len(right):
            return False
        if not all(records_equal(x, y, rel_tol) for x, y in zip(left, right)):
            return False
    return True


def sink_digest(outputs: SinkOutputs) -> str:
    """Deterministic digest over sorted sink outputs; identical runs with the
    same seed and backend produce identical digests."""
    doc = {sink: sorted(records, key=_sort_key) for sink, records in sorted(outputs.items())}
    blob = json.dumps(doc, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
