"""Kernel backend selection.

The compiled extension is preferred when present; the pure-numpy module is
the fallback.  ``FEWSHOT_DML_BACKEND`` forces the choice:

    auto      compiled if importable, else python (default)
    compiled  require the extension, raise if missing
    python    always use the pure-numpy kernels

Both backends are numerically equivalent (same formulas, same float64
conventions); results may differ in the last bits because BLAS and fused
loops sum in different orders.  Each backend is individually deterministic.
"""

import importlib
import os

from .errors import ConfigError

_choice = os.environ.get("FEWSHOT_DML_BACKEND", "auto").lower()
if _choice not in ("auto", "compiled", "python"):
    raise ConfigError(f"FEWSHOT_DML_BACKEND must be auto, compiled or python, got {_choice!r}")

if _choice == "python":
    kernels = importlib.import_module("fewshot_dml._kernels_py")
else:
    try:
        kernels = importlib.import_module("fewshot_dml._kernels")
    except ImportError:
        if _choice == "compiled":
            raise ConfigError("compiled kernels requested but the extension is not built")
        kernels = importlib.import_module("fewshot_dml._kernels_py")

BACKEND_NAME = kernels.BACKEND_NAME


def load_backend(name):
    """Return a specific kernel module by name (for tests and benchmarks)."""
    if name == "python":
        return importlib.import_module("fewshot_dml._kernels_py")
    if name == "compiled":
        return importlib.import_module("fewshot_dml._kernels")
    raise ConfigError(f"unknown backend {name!r}")
