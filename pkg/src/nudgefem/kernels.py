"""Hot element-loop kernels.

The compiled extension ``nudgefem._kernels`` is used when it was built; otherwise
the numpy versions in ``nudgefem._fallback`` are used. Set ``NUDGEFEM_PURE_PYTHON=1``
to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("NUDGEFEM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback

advection_local = _impl.advection_local
scatter_add = _impl.scatter_add
locate_points = _impl.locate_points
