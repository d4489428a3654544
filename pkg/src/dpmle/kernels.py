"""Backend selection for the HMM recursions.

The compiled extension is used when it imports; set ``DPMLE_KERNELS=python``
to force the numpy fallback (the benchmark and the backend-equivalence
tests do this per call through :func:`get_backend`).
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def get_backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return _active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(_BACKENDS)}") from None


def available_backends():
    return sorted(_BACKENDS)


_requested = os.environ.get("DPMLE_KERNELS", "").strip().lower()
if _requested:
    _active = get_backend(_requested)
else:
    _active = _ckernels if _ckernels is not None else _pykernels

BACKEND = "cython" if _active is _ckernels else "python"

forward = _active.forward
backward = _active.backward
xi_sum = _active.xi_sum
xi_all = _active.xi_all
reward_pairs = _active.reward_pairs
viterbi = _active.viterbi
