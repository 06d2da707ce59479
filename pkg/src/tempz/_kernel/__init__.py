"""Backend selection for the hot sweep kernel.

The compiled (Cython) kernel is preferred; the pure-numpy fallback is
used when the extension was not built.  Set TEMPZ_FORCE_FALLBACK=1 to
force the fallback (useful for the backend benchmark and tests).
"""

import os

from . import _gibbs_py

try:
    from . import _gibbs_cy  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on build environment
    _gibbs_cy = None

_FORCED = os.environ.get("TEMPZ_FORCE_FALLBACK", "") == "1"


def backend_name() -> str:
    return "fallback" if (_gibbs_cy is None or _FORCED) else "compiled"


def get_kernel(backend: str = "auto"):
    """Return the sweep kernel function for the requested backend."""
    if backend == "auto":
        backend = backend_name()
    if backend == "compiled":
        if _gibbs_cy is None:
            raise RuntimeError("compiled kernel not available")
        return _gibbs_cy.run_rbm_sweeps
    if backend == "fallback":
        return _gibbs_py.run_rbm_sweeps
    raise ValueError(f"unknown backend {backend!r}")
