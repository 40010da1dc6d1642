"""Select the compiled kernel module when available.

Set ``GPSELECT_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _pykernels

if os.environ.get("GPSELECT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

corr_cross = _impl.corr_cross
corr_sym = _impl.corr_sym
corr_dstack = _impl.corr_dstack
grad_contract = _impl.grad_contract


def use_backend(name):
    """Switch the active backend at runtime ("cython" or "python")."""
    global _impl, BACKEND, corr_cross, corr_sym, corr_dstack, grad_contract
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        from . import _ckernels

        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    corr_cross = _impl.corr_cross
    corr_sym = _impl.corr_sym
    corr_dstack = _impl.corr_dstack
    grad_contract = _impl.grad_contract
