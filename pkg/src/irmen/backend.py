"""Kernel selection.

The compiled stepper is used when it was built; otherwise the numpy fallback.
Set ``IRMEN_BACKEND=python`` to force the fallback.
"""

import logging
import os

from . import _fallback

log = logging.getLogger(__name__)


def _select():
    if os.environ.get("IRMEN_BACKEND", "").lower() == "python":
        return _fallback
    try:
        from . import _kernel
    except ImportError:
        log.debug("compiled kernel not built, using numpy fallback")
        return _fallback
    return _kernel


kernel = _select()


def get(name=None):
    """Return a backend module by name ('compiled' or 'python'), or the active one."""
    if name is None:
        return kernel
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernel
        return _kernel
    raise ValueError(f"unknown backend {name!r}")


def available():
    names = ["python"]
    try:
        from . import _kernel  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names
