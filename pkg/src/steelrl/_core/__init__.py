"""Backend selection for the pairwise-kernel core.

The compiled Cython extension is preferred when importable; otherwise the
numpy implementation is used.  ``STEELRL_BACKEND=numpy`` (or ``compiled``)
forces the choice, which keeps benchmark comparisons and debugging honest.
"""

import os

from . import _pykernels

_requested = os.environ.get("STEELRL_BACKEND", "").strip().lower()

if _requested == "numpy":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "STEELRL_BACKEND=compiled but the steelrl._core._ckernels "
                "extension is not built; reinstall the package or unset the "
                "variable to use the numpy fallback"
            )
        _impl = _pykernels

BACKEND_NAME = _impl.BACKEND_NAME
gaussian_gram = _impl.gaussian_gram
gaussian_kde = _impl.gaussian_kde
weighted_cross_sum = _impl.weighted_cross_sum
