"""Split-search backends for the tree growers.

The compiled extension is preferred; the pure-python backend is selected
when the extension is unavailable or ``CONSTRAINTLAB_PURE_PYTHON=1`` is
set. Both implement identical arithmetic, so the choice affects speed
only (see ``benchmarks/bench_split.py``).
"""

import os

from . import fallback as _fallback

if os.environ.get("CONSTRAINTLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _split as _impl
    except ImportError:  # pragma: no cover - source tree without build
        _impl = _fallback

backend_name = _impl.backend_name
best_split_classification = _impl.best_split_classification
best_split_rawlsian = _impl.best_split_rawlsian
best_split_regression = _impl.best_split_regression
