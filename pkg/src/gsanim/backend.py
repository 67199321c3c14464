"""Kernel lane selection.

Two interchangeable lanes implement the hot kernels (point skinning, tile
rasterization forward/backward): a compiled Cython extension and a pure
numpy fallback. The lane is picked once, lazily, from GSANIM_BACKEND
(auto | compiled | python, default auto: compiled if importable), and can
be overridden programmatically with set_backend(). Thread counts come from
an explicit override, else GSANIM_THREADS, else the CPU count; the numpy
lane ignores them.
"""

import os

from .errors import InvariantError

_LANES = ("auto", "compiled", "python")
_active = None
_active_name = None


def _load(name):
    if name == "python":
        from . import _kernels_py
        return _kernels_py, "python"
    try:
        from ._kernels import _core
        return _core, "compiled"
    except ImportError:
        if name == "compiled":
            raise InvariantError(
                "compiled kernel lane requested but the extension is not built"
            )
        from . import _kernels_py
        return _kernels_py, "python"


def set_backend(name):
    """Force a lane ('auto', 'compiled', 'python'); returns the lane chosen."""
    global _active, _active_name
    if name not in _LANES:
        raise InvariantError(f"unknown backend {name!r}, expected one of {_LANES}")
    _active, _active_name = _load(name)
    return _active_name


def active():
    """The module object implementing the kernel contract for this process."""
    if _active is None:
        requested = os.environ.get("GSANIM_BACKEND", "auto")
        set_backend(requested)
    return _active


def active_name():
    active()
    return _active_name


def thread_count(override=None):
    if override is not None:
        n = int(override)
    else:
        env = os.environ.get("GSANIM_THREADS")
        n = int(env) if env else (os.cpu_count() or 1)
    if n < 1:
        raise InvariantError(f"thread count must be >= 1, got {n}")
    return n
