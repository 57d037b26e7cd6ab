"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Setting ``MOCAPFUSE_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

BACKENDS = {"python": _fallback}

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["compiled"] = _compiled

if _compiled is not None and os.environ.get("MOCAPFUSE_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "compiled"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]
ssm_scan = _impl.ssm_scan
distance_residual = _impl.distance_residual
