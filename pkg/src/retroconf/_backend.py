"""Select the hot-kernel implementation at import time.

The compiled extension is preferred; ``RETROCONF_BACKEND=python`` forces the
numpy fallback (useful for debugging and for the backend benchmark).
"""

import importlib
import logging
import os

log = logging.getLogger(__name__)

_MODULES = {"cython": "retroconf._ckernels", "python": "retroconf._pykernels"}


def load(name: str):
    """Import and return the kernel module called ``name``."""
    try:
        return importlib.import_module(_MODULES[name])
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(_MODULES)}") from None


def available() -> list[str]:
    names = []
    for name in _MODULES:
        try:
            load(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select():
    wanted = os.environ.get("RETROCONF_BACKEND", "").strip().lower()
    if wanted:
        return load(wanted)
    try:
        return load("cython")
    except ImportError:
        log.debug("compiled kernels unavailable; using numpy fallback")
        return load("python")


kernels = _select()
