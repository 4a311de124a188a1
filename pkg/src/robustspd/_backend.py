"""Kernel backend selection.

The hot numerical kernels in :mod:`robustspd.kernels` are written once in
numba-compatible numpy and compiled with ``@njit`` when numba is active.
The environment variable ``ROBUSTSPD_BACKEND`` picks the backend:

* ``auto`` (default) -- use numba when it imports, else pure numpy;
* ``numba``          -- require numba, raise if unavailable;
* ``numpy``          -- run the same kernel source uncompiled.

Both backends execute identical arithmetic; the numpy path merely
interprets the kernel source, so it is the slow-but-dependency-free twin.
"""

import functools
import os

import numpy as np

_CHOICE = os.environ.get("ROBUSTSPD_BACKEND", "auto").strip().lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"ROBUSTSPD_BACKEND must be one of auto|numba|numpy, got {_CHOICE!r}"
    )

NUMBA_ENABLED = False
if _CHOICE in ("auto", "numba"):
    try:
        from numba import njit as _numba_njit

        NUMBA_ENABLED = True
    except ImportError:
        if _CHOICE == "numba":
            raise

BACKEND = "numba" if NUMBA_ENABLED else "numpy"


if NUMBA_ENABLED:

    def njit(*args, **kwargs):
        return _numba_njit(*args, **kwargs)

else:

    def njit(*args, **kwargs):
        # Fallback twin: run the undecorated kernel. The uint64 RNG relies on
        # wraparound, which compiled code does silently; numpy warns on scalar
        # overflow, so suppress that here to keep the two paths equivalent.
        def wrap(fn):
            @functools.wraps(fn)
            def run(*a, **k):
                with np.errstate(over="ignore"):
                    return fn(*a, **k)

            return run

        if args and callable(args[0]) and not kwargs:
            return wrap(args[0])
        return wrap
