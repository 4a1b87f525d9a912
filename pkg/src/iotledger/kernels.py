"""Kernel dispatch: compiled extension when importable, else pure Python.

Set ``IOTLEDGER_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

leading_zero_bits = _kernels_py.leading_zero_bits
NO_NONCE = _kernels_py.NO_NONCE

BACKEND = "python"
pow_search = _kernels_py.pow_search
search_tree = _kernels_py.search_tree

if not os.environ.get("IOTLEDGER_PURE_PYTHON"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        pow_search = _ckernels.pow_search
        search_tree = _ckernels.search_tree
