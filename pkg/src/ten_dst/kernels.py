"""Backend selection for the hot kernels.

The compiled extension is preferred. Setting ``TEN_DST_PURE_PYTHON=1`` (or a
missing build) selects the numpy fallback. ``BACKEND`` names the active one.
"""

import os

from . import _kernels_py

if os.environ.get("TEN_DST_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward
bp_chain_forward = _impl.bp_chain_forward
bp_chain_backward = _impl.bp_chain_backward

__all__ = [
    "BACKEND",
    "gru_forward",
    "gru_backward",
    "bp_chain_forward",
    "bp_chain_backward",
]
