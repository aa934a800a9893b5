"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise (or when
``FEDRAG_PURE_PYTHON=1`` is set) the numpy/pure-Python fallback is used.
Both expose ``rag_sweep``, ``value_sweep`` and ``cartpole_advance``.
"""
import os

from fedrag import _kernels_py

python_backend = _kernels_py

compiled_backend = None
if os.environ.get("FEDRAG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from fedrag import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if compiled_backend is not None else "python"

rag_sweep = backend.rag_sweep
value_sweep = backend.value_sweep
cartpole_advance = backend.cartpole_advance
