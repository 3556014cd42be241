"""Kernel backend selection.

The compiled Cython kernel is preferred; the pure-numpy twin is used when
the extension is missing.  ``CHIRPEST_KERNEL=python|cython`` forces a
backend (useful for the kernel benchmark and parity tests).
"""

import os

from chirpest import _kernel_py

__all__ = ["backend", "backend_name", "available_backends"]


def _load():
    forced = os.environ.get("CHIRPEST_KERNEL", "").strip().lower()
    if forced == "python":
        return _kernel_py
    try:
        from chirpest import _kernel_cy
    except ImportError:
        if forced == "cython":
            raise ImportError(
                "CHIRPEST_KERNEL=cython but the compiled kernel is not built"
            ) from None
        return _kernel_py
    return _kernel_cy


backend = _load()
backend_name: str = backend.KERNEL_NAME


def available_backends() -> dict:
    """Map of backend name -> module for every importable kernel."""
    out = {"python": _kernel_py}
    try:
        from chirpest import _kernel_cy

        out["cython"] = _kernel_cy
    except ImportError:
        pass
    return out
