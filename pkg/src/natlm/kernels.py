"""Hot-loop kernels, compiled when available.

The Cython build of ``_speedups`` is preferred; set ``NATLM_PURE_PYTHON=1`` to
force the pure-Python path. ``BACKEND`` records which one was loaded.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
decode = _pykernels.decode
score_rows = _pykernels.score_rows

if not os.environ.get("NATLM_PURE_PYTHON"):
    try:
        from . import _speedups
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        decode = _speedups.decode
        score_rows = _speedups.score_rows
