"""Selection between the compiled and numpy kernel implementations.

The compiled extension ``scalar_closure._kernels`` is optional; when it
is missing (or when ``SCALAR_CLOSURE_BACKEND=python`` is set) the numpy
module ``scalar_closure._kernels_py`` is used.  Both expose the same
functions and field codes, and ``benchmarks/bench_kernels.py`` compares
their throughput.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - build environment dependent
    _compiled = None

_ENV_VAR = "SCALAR_CLOSURE_BACKEND"


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _compiled is not None else ("python",)


def get_backend(name: str | None = None):
    """Return the kernel namespace for ``name``.

    ``name`` may be 'compiled', 'python', or None/'auto' (environment
    override via SCALAR_CLOSURE_BACKEND, else compiled when available).
    """
    if name is None:
        name = os.environ.get(_ENV_VAR, "auto")
    if name in (None, "auto"):
        return _compiled if _compiled is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel backend is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}; choose 'compiled', 'python' or 'auto'")


# namespace selected once at import; drivers take an optional override
kernels = get_backend()
