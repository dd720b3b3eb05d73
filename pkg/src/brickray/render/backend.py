"""Marching-kernel backend selection.

The compiled extension covers the hot single-volume path; the pure-Python
kernel is the portable fallback and the only path for multi-volume scenes.
Selection order: explicit argument, then the BRICKRAY_BACKEND environment
variable (auto|compiled|python), then auto (compiled when importable).
"""

from __future__ import annotations

import os

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build environment
    _compiled = None

from . import _pykernel

COMPILED = "compiled"
PYTHON = "python"


def available_backends() -> list:
    names = [PYTHON]
    if _compiled is not None:
        names.insert(0, COMPILED)
    return names


def resolve_backend(name: str | None = None) -> str:
    """Resolve a backend request to a concrete backend name."""
    req = name or os.environ.get("BRICKRAY_BACKEND", "auto") or "auto"
    if req == "auto":
        return COMPILED if _compiled is not None else PYTHON
    if req == COMPILED:
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        return COMPILED
    if req == PYTHON:
        return PYTHON
    raise ValueError(f"unknown backend '{req}' (expected auto|compiled|python)")


def compiled_march_band():
    if _compiled is None:
        raise RuntimeError("compiled kernels are not available in this install")
    return _compiled.march_band


def python_march_band():
    return _pykernel.march_band
