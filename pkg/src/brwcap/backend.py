"""Sampling backend selection.

The compiled Cython core is used when available; the pure-Python twin is the
fallback and the cross-check.  Set ``BRWCAP_BACKEND=python`` to force the
fallback.  Both implement the same draw protocol, so results are bit-identical
either way (the test suite asserts this, and ``benchmarks/bench_backends.py``
compares their throughput).
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - source checkout without build
    _compiled = None

if os.environ.get("BRWCAP_BACKEND", "").lower() == "python" or _compiled is None:
    kernels = _kernels_py
else:
    kernels = _compiled

kernels_py = _kernels_py
kernels_compiled = _compiled


def backend_name() -> str:
    return kernels.BACKEND


def has_compiled() -> bool:
    return _compiled is not None
