"""Backend selection for the accelerated kernels.

The hot loops (per-slot network physics, advantage recursion) exist in two
interchangeable forms: numba-compiled kernels and pure-numpy fallbacks.
Selection is controlled by the ``MOCHARGE_NUMBA`` environment variable read
once at import time:

* ``"0"`` (also ``off``/``false``/``no``): force the pure-numpy path.
* ``"1"`` (also ``on``/``true``/``yes``): require numba, raise if missing.
* unset or anything else: use numba when importable, fall back silently.

Call sites may still override per call; see :func:`mocharge.env.advance_slot`.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("MOCHARGE_NUMBA", "auto").strip().lower()


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


if _FLAG in ("0", "off", "false", "no"):
    NUMBA_ENABLED = False
elif _FLAG in ("1", "on", "true", "yes"):
    import numba  # noqa: F401  # fail loudly when forced on

    NUMBA_ENABLED = True
else:
    NUMBA_ENABLED = _numba_importable()


def numba_enabled() -> bool:
    """True when the compiled kernels are the active default."""
    return NUMBA_ENABLED
