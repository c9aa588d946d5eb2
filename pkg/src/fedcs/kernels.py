"""Backend selection for the OWL-QN inner kernels.

Imports the compiled extension when available, else the NumPy fallback.
``FEDCS_BACKEND=python`` forces the fallback; ``FEDCS_BACKEND=native``
requires the extension and raises if it is missing. ``ACTIVE.BACKEND``
names the selected module.
"""

from __future__ import annotations

import os

from . import _owlqn_py

_choice = os.environ.get("FEDCS_BACKEND", "").strip().lower()

if _choice == "python":
    ACTIVE = _owlqn_py
elif _choice == "native":
    from . import _owlqn_native as ACTIVE  # type: ignore[no-redef]
elif _choice == "":
    try:
        from . import _owlqn_native as ACTIVE  # type: ignore[no-redef]
    except ImportError:
        ACTIVE = _owlqn_py
else:
    raise ValueError(f"FEDCS_BACKEND must be 'python' or 'native', got {_choice!r}")


def available_backends() -> list[str]:
    """Names of importable kernel backends ('native' first when present)."""
    out = []
    try:
        from . import _owlqn_native  # noqa: F401
        out.append("native")
    except ImportError:
        pass
    out.append("python")
    return out


def get_backend(name: str):
    """Return the kernel module for ``name`` ('python' or 'native')."""
    if name == "python":
        return _owlqn_py
    if name == "native":
        from . import _owlqn_native
        return _owlqn_native
    raise ValueError(f"unknown backend {name!r}")
