"""Kernel backend chosen at import: compiled ``_ckernels`` if built, else ``_pykernels``.

Set ``TREEPOISON_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import contextlib
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

if os.environ.get("TREEPOISON_PURE_PYTHON") or _ckernels is None:
    kernels = _pykernels
    name = "python"
else:
    kernels = _ckernels
    name = "cython"


def available() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(backend: str) -> None:
    global kernels, name
    try:
        kernels = _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"backend {backend!r} not available; have {available()}") from None
    name = backend


@contextlib.contextmanager
def using(backend: str):
    previous = name
    set_backend(backend)
    try:
        yield
    finally:
        set_backend(previous)
