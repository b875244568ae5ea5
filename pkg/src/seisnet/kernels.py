"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Set ``SEISNET_PURE_PYTHON=1`` to force the
fallback. Both backends share one function-level API, so callers go through
:func:`get` (or the module-level ``active``) rather than importing either one.
"""

import contextlib
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"numpy": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

if os.environ.get("SEISNET_PURE_PYTHON", "") not in ("", "0") or _ckernels is None:
    active = _pykernels
else:
    active = _ckernels


def available():
    """Names of the backends importable in this environment."""
    return sorted(_BACKENDS)


def get():
    return active


def set_backend(name):
    global active
    try:
        active = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {available()}") from None
    return active


@contextlib.contextmanager
def using(name):
    """Temporarily switch backend, e.g. for cross-checks and benchmarks."""
    previous = active
    set_backend(name)
    try:
        yield active
    finally:
        set_backend(previous.NAME)
