"""Hot pixel kernels with a compiled fast path.

The Cython extension is optional: if it was not built (or the environment
variable ``TCD_NO_SPEEDUPS=1`` is set) the numpy implementations in
``_fallback`` are used instead.  Both backends implement the same contract
and are compared against each other in the test suite.
"""

import os

from . import _fallback

if os.environ.get("TCD_NO_SPEEDUPS") == "1":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

rasterize_rings = _impl.rasterize_rings
confusion_counts = _impl.confusion_counts
block_all_equal = _impl.block_all_equal

__all__ = ["BACKEND", "rasterize_rings", "confusion_counts", "block_all_equal"]
