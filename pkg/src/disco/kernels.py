"""Select the compiled histogram kernels when available.

Set ``DISCO_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names
the implementation in use (``"cython"`` or ``"python"``).
"""

import os

from . import _kernels_py

if os.environ.get("DISCO_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

discretize_columns = _impl.discretize_columns
joint_counts = _impl.joint_counts
pairwise_joint_counts = _impl.pairwise_joint_counts
