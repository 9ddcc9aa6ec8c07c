"""Sweep-kernel backend selection.

Prefers the compiled extension; falls back to the pure-Python twin when the
extension is missing or BLOCKLINK_FORCE_PY is set. Both expose the same
``run_sweeps`` and produce bit-identical chains.
"""

import os

if os.environ.get("BLOCKLINK_FORCE_PY"):
    from . import _sweep_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _sweep as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _sweep_py as _impl

        BACKEND = "python"

run_sweeps = _impl.run_sweeps
