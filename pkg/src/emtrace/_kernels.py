"""Selects the ray-casting kernel implementation at import time.

The compiled module `emtrace._core` is preferred; the numpy fallback
`emtrace._core_np` implements the identical interface. Set
EMTRACE_FORCE_FALLBACK=1 to force the fallback (used by the benchmark and
the kernel equivalence tests).
"""

import os

from . import _core_np

try:
    from . import _core
except ImportError:
    _core = None

_FORCED = bool(os.environ.get("EMTRACE_FORCE_FALLBACK"))


def active():
    if _FORCED or _core is None:
        return _core_np
    return _core


def backend_name():
    return "compiled" if active() is not _core_np else "numpy"


def available_backends():
    out = {"numpy": _core_np}
    if _core is not None:
        out["compiled"] = _core
    return out
