"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementation in ``_pykernels`` takes over. ``SPARSETUCK_BACKEND`` set
to ``python`` or ``cython`` overrides the choice.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels


def _default():
    name = os.environ.get("SPARSETUCK_BACKEND", "").strip().lower()
    if name:
        if name not in BACKENDS:
            raise ImportError(f"SPARSETUCK_BACKEND={name!r} is not available (have {sorted(BACKENDS)})")
        return name
    return "cython" if "cython" in BACKENDS else "python"


DEFAULT = _default()


def get(name=None):
    """Return the kernel module ``name`` (default backend when None)."""
    if name is None:
        name = DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {sorted(BACKENDS)}") from None


def available():
    return sorted(BACKENDS)
