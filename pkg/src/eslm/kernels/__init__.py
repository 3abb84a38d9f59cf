"""Backend selection for the hot numeric kernels.

The environment variable ``ESLM_BACKEND`` picks the implementation:

    auto   (default) numba if importable, else numpy
    numba  require the jitted kernels, fail loudly if numba is missing
    numpy  force the pure-numpy fallback

Both backends compute the same quantities; the numba one runs explicit
per-sample loops, the numpy one vectorized einsums. ``benchmarks/`` holds a
script that times them side by side.
"""

import os

from ..errors import ConfigError

_ENV_VAR = "ESLM_BACKEND"


def _load(choice: str):
    if choice == "numpy":
        from . import numpy_backend
        return numpy_backend
    if choice == "numba":
        from . import numba_backend
        return numba_backend
    if choice == "auto":
        try:
            from . import numba_backend
            return numba_backend
        except ImportError:
            from . import numpy_backend
            return numpy_backend
    raise ConfigError(
        f"unknown {_ENV_VAR} value {choice!r}: expected auto, numba or numpy"
    )


_impl = _load(os.environ.get(_ENV_VAR, "auto").strip().lower())

backend_name = _impl.NAME
masked_softmax = _impl.masked_softmax
attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward
scatter_add_rows = _impl.scatter_add_rows
adagrad_dense = _impl.adagrad_dense
adagrad_rows = _impl.adagrad_rows
