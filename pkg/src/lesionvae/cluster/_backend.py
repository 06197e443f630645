"""Select the clustering kernel implementation at import time."""

try:
    from . import _kernels as kernels  # type: ignore[attr-defined]
except ImportError:  # extension not built; numpy fallback
    from . import _kernels_py as kernels  # type: ignore[no-redef]

BACKEND: str = kernels.BACKEND
