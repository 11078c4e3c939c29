"""Recurrence-kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always available. RADLABEL_BACKEND=python|cython forces a choice (useful
for benchmarks and for debugging build problems).
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _recurrence_py

_BACKENDS: dict[str, ModuleType] = {"python": _recurrence_py}
try:
    from . import _recurrence_cy  # type: ignore[attr-defined]

    _BACKENDS["cython"] = _recurrence_cy
except ImportError:
    pass

_forced = os.environ.get("RADLABEL_BACKEND")
if _forced and _forced not in _BACKENDS:
    raise ImportError(
        f"RADLABEL_BACKEND={_forced!r} requested but that backend is unavailable; "
        f"have: {sorted(_BACKENDS)}"
    )
_active = _forced or ("cython" if "cython" in _BACKENDS else "python")


def available_backends() -> dict[str, ModuleType]:
    return dict(_BACKENDS)


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {sorted(_BACKENDS)}")
    _active = name


def sequence_forward(x_gates, wh, rec_mask):
    return _BACKENDS[_active].sequence_forward(x_gates, wh, rec_mask)


def sequence_backward(gates, cells, tanh_cells, wh, rec_mask, d_h_last):
    return _BACKENDS[_active].sequence_backward(
        gates, cells, tanh_cells, wh, rec_mask, d_h_last
    )
