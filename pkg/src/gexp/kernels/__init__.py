"""Hot sweeps over the path tree.

The backend is chosen once at import from ``GEXP_BACKEND`` (``numba`` or
``numpy``); ``numba`` is the default when it imports cleanly. Setting
``GEXP_DISABLE_NUMBA=1`` also forces the numpy path.
"""

import os

from . import _numpy


def _load(name):
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba
        return _numba
    raise ValueError(f"unknown backend {name!r}")


def _select():
    if os.environ.get("GEXP_DISABLE_NUMBA", "").strip() not in ("", "0"):
        return "numpy"
    name = os.environ.get("GEXP_BACKEND", "numba").strip().lower()
    if name == "numba":
        try:
            _load("numba")
        except ImportError:
            return "numpy"
    return name


BACKEND = _select()
_impl = _load(BACKEND)

backward_affine = _impl.backward_affine
forward_adjoint = _impl.forward_adjoint


def get_backend(name):
    """Module exposing ``backward_affine`` and ``forward_adjoint`` for ``name``."""
    return _load(name)
