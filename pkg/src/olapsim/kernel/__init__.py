"""Simulation kernel, compiled when available.

The Cython extension ``_ckernel`` is preferred; ``OLAPSIM_BACKEND=python``
forces the pure-Python kernel.  Both are exposed for comparison runs.
"""

from __future__ import annotations

import os

from . import _pykernel

python_simulate = _pykernel.simulate

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

compiled_simulate = _ckernel.simulate if _ckernel is not None else None

if compiled_simulate is not None and os.environ.get("OLAPSIM_BACKEND", "").lower() != "python":
    simulate = compiled_simulate
    BACKEND = "cython"
else:
    simulate = python_simulate
    BACKEND = "python"


def get_simulate(backend: str | None = None):
    """Kernel entry point for ``backend`` ('cython', 'python' or None for the default)."""
    if backend is None:
        return simulate
    if backend == "python":
        return python_simulate
    if backend == "cython":
        if compiled_simulate is None:
            raise ImportError("compiled kernel not built; run `pip install -e . --no-build-isolation`")
        return compiled_simulate
    raise ValueError(f"unknown backend {backend!r}")


__all__ = ["BACKEND", "simulate", "python_simulate", "compiled_simulate", "get_simulate"]
