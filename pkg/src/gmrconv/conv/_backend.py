import os
from contextlib import contextmanager

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_requested = os.environ.get("GMRCONV_BACKEND", "auto").lower()
if _requested == "auto":
    _active = "compiled" if "compiled" in _BACKENDS else "python"
elif _requested in _BACKENDS:
    _active = _requested
else:
    raise ImportError(
        f"GMRCONV_BACKEND={_requested!r} is not available; choose from {sorted(_BACKENDS)}"
    )

_num_threads = max(1, int(os.environ.get("GMRCONV_THREADS", "1")))


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    """Name of the active depthwise backend."""
    return _active


def kernels():
    return _BACKENDS[_active]


@contextmanager
def use_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} is not available; have {available_backends()}")
    prev, _active = _active, name
    try:
        yield _BACKENDS[name]
    finally:
        _active = prev


def set_num_threads(n):
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads():
    return _num_threads
