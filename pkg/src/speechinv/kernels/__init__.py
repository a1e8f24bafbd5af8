"""Backend selection for the hot GRU kernels.

The env flag SPEECHINV_BACKEND picks the implementation:

    SPEECHINV_BACKEND=numba   require the jitted kernels (error if unavailable)
    SPEECHINV_BACKEND=numpy   force the plain-numpy fallback
    unset / auto              numba when importable, numpy otherwise

Both backends run the same source (gru_ops); numba compiles it. See
benchmarks/bench_backends.py for the speed comparison.
"""

import os
from types import SimpleNamespace

from . import gru_ops

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

_jitted = None


def _jit_kernels():
    global _jitted
    if _jitted is None:
        jit = numba.njit(cache=True)
        _jitted = SimpleNamespace(
            name="numba",
            gru_forward=jit(gru_ops.gru_forward),
            gru_backward=jit(gru_ops.gru_backward),
        )
    return _jitted


_plain = SimpleNamespace(
    name="numpy",
    gru_forward=gru_ops.gru_forward,
    gru_backward=gru_ops.gru_backward,
)


def get_kernels(backend: str | None = None) -> SimpleNamespace:
    """Return the kernel namespace for a backend name (or the env default)."""
    if backend is None:
        backend = os.environ.get("SPEECHINV_BACKEND", "auto").lower()
    if backend == "auto":
        backend = "numba" if NUMBA_AVAILABLE else "numpy"
    if backend == "numba":
        if not NUMBA_AVAILABLE:
            raise ImportError("SPEECHINV_BACKEND=numba but numba is not installed")
        return _jit_kernels()
    if backend == "numpy":
        return _plain
    raise ValueError(f"unknown backend {backend!r} (use numba, numpy, or auto)")


_active = get_kernels()


def active_backend() -> str:
    """Name of the backend the model is using in this process."""
    return _active.name


gru_forward = _active.gru_forward
gru_backward = _active.gru_backward
