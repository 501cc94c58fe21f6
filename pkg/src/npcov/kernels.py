"""Hot-kernel dispatch.

The compiled extension ``npcov._ckernels`` is used when it was built and
imports cleanly; otherwise the numpy versions in ``npcov._pykernels`` are
used.  Set ``NPCOV_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from npcov import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("NPCOV_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from npcov import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b, stride, padding):
    return _impl.conv2d_forward(_f64(x), _f64(w), _f64(b), int(stride), int(padding))


def conv2d_relevance(x, w, z, r, stride, padding, eps):
    return _impl.conv2d_relevance(_f64(x), _f64(w), _f64(z), _f64(r), int(stride), int(padding), float(eps))


def maxpool_forward(x, size, stride):
    return _impl.maxpool_forward(_f64(x), int(size), int(stride))


def maxpool_relevance(x, y, r, size, stride):
    return _impl.maxpool_relevance(_f64(x), _f64(y), _f64(r), int(size), int(stride))


def path_similarity_matrix(a_bits, b_bits, offsets):
    a_bits = np.ascontiguousarray(a_bits, dtype=np.uint8)
    b_bits = np.ascontiguousarray(b_bits, dtype=np.uint8)
    if a_bits.ndim == 1:
        a_bits = a_bits[None, :]
    if b_bits.ndim == 1:
        b_bits = b_bits[None, :]
    offsets = [int(o) for o in offsets]
    if a_bits.shape[0] == 0 or b_bits.shape[0] == 0:
        return np.zeros((a_bits.shape[0], b_bits.shape[0]))
    return _impl.path_similarity_matrix(a_bits, b_bits, offsets)


def backends():
    """Return the kernel modules available in this process, keyed by name."""
    found = {"python": _pykernels}
    try:
        from npcov import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
