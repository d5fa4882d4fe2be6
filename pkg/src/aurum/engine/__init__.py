"""Engine backend selection: compiled core when available, pure Python otherwise.

Set AURUM_ENGINE=python to force the fallback (used by the backend-equivalence
tests and the benchmark).  Both backends consume the random stream identically,
so results are bit-for-bit the same either way.
"""

import os

if os.environ.get("AURUM_ENGINE", "").lower() == "python":
    from . import _core_py as backend
else:
    try:
        from . import _core as backend  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - exercised via AURUM_ENGINE
        from . import _core_py as backend

BACKEND = backend.BACKEND

__all__ = ["backend", "BACKEND"]
