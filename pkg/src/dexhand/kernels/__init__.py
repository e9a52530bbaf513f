"""Kernel backend selection.

The compiled extension is preferred when present; the pure-Python twin is the
fallback. Set ``DEXHAND_PURE=1`` to force the pure backend (used by the
backend-parity tests and the benchmark).
"""

import os

from . import pybackend

if os.environ.get("DEXHAND_PURE") == "1":
    _impl = pybackend
else:
    try:
        from . import _cykernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = pybackend

BACKEND_NAME = _impl.BACKEND_NAME
fk_tips = _impl.fk_tips
jacobian = _impl.jacobian
gravity_torque = _impl.gravity_torque
ik_solve = _impl.ik_solve
servo_run = _impl.servo_run
env_substep = _impl.env_substep


def available_backends():
    """Names of importable backends (for the benchmark and diagnostics)."""
    names = ["python"]
    try:
        from . import _cykernels  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names
