"""Kernel backend selection: compiled fused loops with a numpy fallback.

The compiled extension is optional. At import time the package picks the
compiled backend when it is present, unless ``MGFUSION_KERNELS`` forces a
choice (``numpy`` or ``compiled``). The active backend can also be swapped
at runtime (used by the benchmark and the cross-backend tests).
"""

import os

from . import reference

try:
    from . import _fused
except ImportError:
    _fused = None

WMEAN_EPS = reference.WMEAN_EPS

_BACKENDS = {"numpy": reference}
if _fused is not None:
    _BACKENDS["compiled"] = _fused


def available_backends():
    return sorted(_BACKENDS)


def _initial_backend():
    forced = os.environ.get("MGFUSION_KERNELS", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"MGFUSION_KERNELS={forced!r} requested but only "
                f"{available_backends()} are available"
            )
        return forced
    return "compiled" if _fused is not None else "numpy"


BACKEND = _initial_backend()
_active = _BACKENDS[BACKEND]


def use_backend(name):
    """Switch the active backend; returns the previously active name."""
    global BACKEND, _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    previous = BACKEND
    BACKEND = name
    _active = _BACKENDS[name]
    return previous


def get_backend(name):
    return _BACKENDS[name]


def edge_forward(gram, denom, thresh):
    return _active.edge_forward(gram, denom, thresh)


def edge_backward(gram, denom, thresh, d_out):
    return _active.edge_backward(gram, denom, thresh, d_out)


def wmean_forward(weights, feats):
    return _active.wmean_forward(weights, feats)


def wmean_backward(weights, feats, out, rowsum, d_out):
    return _active.wmean_backward(weights, feats, out, rowsum, d_out)


def adamw_update(param, grad, m, v, t, lr, beta1, beta2, eps, weight_decay):
    return _active.adamw_update(param, grad, m, v, t, lr, beta1, beta2, eps, weight_decay)
