"""Backend selection for the hot loops.

The compiled extension is preferred; set ``SPDCSIM_PURE_PYTHON=1`` to force
the numpy fallback (the benchmark and the parity tests do this per call via
:func:`get_backend`).
"""
import importlib
import os

from . import _kernels_py


def get_backend(name=None):
    """Return a kernel module: ``"cython"``, ``"python"`` or ``None`` (auto)."""
    if name == "python":
        return _kernels_py
    try:
        return importlib.import_module("spdcsim._kernels")
    except ImportError:
        if name == "cython":
            raise
        return _kernels_py


if os.environ.get("SPDCSIM_PURE_PYTHON", "") not in ("", "0"):
    _active = _kernels_py
else:
    _active = get_backend()

BACKEND = _active.BACKEND
windowed_histogram = _active.windowed_histogram
dead_time_mask = _active.dead_time_mask
ou_intensity = _active.ou_intensity
