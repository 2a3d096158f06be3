"""Select the compiled kernel module, falling back to numpy.

Set ``STABLE_LNN_PURE_PYTHON=1`` to force the numpy implementation.
"""
import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)


def _load():
    if os.environ.get("STABLE_LNN_PURE_PYTHON", "") not in ("", "0"):
        return _fallback
    try:
        from . import _kernels
    except ImportError as exc:  # extension not built
        logger.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
        return _fallback
    return _kernels


kernels = _load()


def use(name):
    """Switch backend at runtime: ``"compiled"`` or ``"python"``."""
    global kernels
    if name == "python":
        kernels = _fallback
    elif name == "compiled":
        from . import _kernels

        kernels = _kernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    return kernels


def name():
    return kernels.NAME
