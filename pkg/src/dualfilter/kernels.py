"""Backend selection for the dual-filter hot loops.

The compiled extension is used when it was built; otherwise, or when
``DUALFILTER_PURE_PYTHON=1`` is set, the numpy implementation is used.
Both expose ``gain``, ``project``, ``backward_pass``, ``apply_pass``,
``adjoint_recovery`` and ``single_shot``.
"""

from __future__ import annotations

import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

if not os.environ.get("DUALFILTER_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if backend is compiled_backend else "python"


def get_backend(name: str | None = None):
    """Kernel module by name (``"cython"``/``"python"``); ``None`` gives the default."""
    if name is None:
        return backend
    if name == "python":
        return python_backend
    if name == "cython":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available in this install")
        return compiled_backend
    raise ValueError(f"unknown kernel backend {name!r}")
