"""Fused recurrent-cell kernels.

The gated-recurrence cell is the hot inner loop of every forward and
backward pass, so its elementwise part ships as a compiled Cython
extension with a pure-numpy fallback.  The backend is chosen once at
import time: the extension if it built, numpy otherwise.  Setting the
environment variable ``PHONEMBED_PURE_PYTHON=1`` forces the fallback
(used by the benchmark and by CI on platforms without a compiler).

Both backends implement the same two functions:

``gru_cell_forward(xp, hp, h_prev) -> (h, r, z, n)``
    One cell update given the precomputed input projection ``xp`` and
    recurrent projection ``hp`` (both ``[B, 3H]``, gate order reset /
    update / candidate) and the previous state ``h_prev`` ``[B, H]``.
    Returns the new state plus the gate activations needed by backward.

``gru_cell_backward(dh, hp, h_prev, r, z, n) -> (dxp, dhp, dh_prev)``
    Gradients of a scalar with respect to the three forward inputs,
    given the gradient ``dh`` with respect to the new state.

All arrays must be C-contiguous float64.  The two backends evaluate the
same expressions in the same order, but numpy's vectorized exp/tanh and
libm's scalar calls may differ in the last ulp, so cross-backend outputs
agree to ~1e-15 rather than bit-for-bit.  Within one backend results are
bit-reproducible.
"""

import os

_FORCED = os.environ.get("PHONEMBED_PURE_PYTHON", "") not in ("", "0")

if _FORCED:
    from . import _cells_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _cells_cy as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _cells_py as _impl

        BACKEND = "python"

gru_cell_forward = _impl.gru_cell_forward
gru_cell_backward = _impl.gru_cell_backward

__all__ = ["BACKEND", "gru_cell_forward", "gru_cell_backward"]
