"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``WEAKSUPCON_NUMBA`` is not set to ``0``. Both backends stay
importable as ``numpy_backend`` / ``numba_backend`` for cross-checks and
benchmarks (``numba_backend`` is ``None`` when numba is unavailable).
``attention_pool`` always dispatches to numpy, which the benchmark shows is
faster for it.
"""
import os

from . import _numpy as numpy_backend

try:
    from . import _numba as numba_backend
except ImportError:  # pragma: no cover - numba is optional
    numba_backend = None

_wanted = os.environ.get("WEAKSUPCON_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

if _wanted and numba_backend is not None:
    BACKEND = "numba"
    _impl = numba_backend
else:
    BACKEND = "numpy"
    _impl = numpy_backend

# one BLAS call plus a vectorized tanh: numpy beats the compiled twin at bag sizes
attention_pool = numpy_backend.attention_pool
abmil_bag_grad = _impl.abmil_bag_grad
top2_eigh = _impl.top2_eigh

__all__ = ["BACKEND", "attention_pool", "abmil_bag_grad", "top2_eigh", "numpy_backend", "numba_backend"]
