"""Joint embedding/generation transformer with cached retrieval serving."""

try:
    from ._gritcore import *  # noqa: F401,F403  (installed wheel layout)
    from . import _gritcore as _core  # noqa: F401
except ImportError:  # build-tree layout: extension on PYTHONPATH
    from _gritcore import *  # noqa: F401,F403
    import _gritcore as _core  # noqa: F401

__all__ = [name for name in dir(_core) if not name.startswith("_")]
