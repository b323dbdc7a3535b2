"""Numeric kernels: compiled extension when available, pure-Python twin otherwise.

Selection happens at import time; DOCRERANK_BACKEND=python|compiled forces a
backend, and set_backend() switches at runtime (used by the benchmark and the
parity tests). Both backends implement identical float operation order, so
switching never changes results, only speed.
"""

from __future__ import annotations

import os

from . import _pyref

try:
    from . import _speedups as _compiled
except ImportError:
    _compiled = None

_FORCED = os.environ.get("DOCRERANK_BACKEND")
if _FORCED == "python":
    _impl = _pyref
elif _FORCED == "compiled":
    if _compiled is None:
        raise ImportError(
            "DOCRERANK_BACKEND=compiled but the docrerank.kernels._speedups "
            "extension is not built"
        )
    _impl = _compiled
elif _FORCED:
    raise ImportError(f"DOCRERANK_BACKEND must be 'python' or 'compiled', got {_FORCED!r}")
else:
    _impl = _compiled if _compiled is not None else _pyref


def backend_name() -> str:
    return _impl.BACKEND_NAME


def compiled_available() -> bool:
    return _compiled is not None


def set_backend(name: str) -> None:
    global _impl
    if name == "python":
        _impl = _pyref
    elif name == "compiled":
        if _compiled is None:
            raise ValueError("compiled backend is not built")
        _impl = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


def lm_event_lp10(*args):
    return _impl.lm_event_lp10(*args)


def lm_score_run(*args):
    return _impl.lm_score_run(*args)


def ibm1_score(*args):
    return _impl.ibm1_score(*args)


def ibm1_em_step(*args):
    return _impl.ibm1_em_step(*args)
