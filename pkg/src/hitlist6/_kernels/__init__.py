"""Kernel backend selection.

The compiled extension (_ckern) is preferred when built; the numpy fallback
(pyback) is used otherwise. Set HITLIST6_PURE=1 to force the fallback, e.g.
for the comparison benchmark or to debug a suspected extension issue.
"""

from __future__ import annotations

import os

from .trie import TrieArrays, build_trie, lookup_one

if os.environ.get("HITLIST6_PURE") == "1":
    from . import pyback as _impl
else:
    try:
        from . import _ckern as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import pyback as _impl

BACKEND = _impl.NAME
popcount64 = _impl.popcount64
classify_iids = _impl.classify_iids
trie_lookup = _impl.trie_lookup


def available_backends():
    """Names of importable backends, compiled one first if present."""
    names = []
    try:
        from . import _ckern  # noqa: F401

        names.append("c")
    except ImportError:
        pass
    names.append("py")
    return names


def load_backend(name: str):
    """Explicitly fetch a backend module ("c" or "py")."""
    if name == "c":
        from . import _ckern

        return _ckern
    if name == "py":
        from . import pyback

        return pyback
    raise ValueError(f"unknown kernel backend {name!r}")


__all__ = [
    "BACKEND",
    "TrieArrays",
    "available_backends",
    "build_trie",
    "classify_iids",
    "load_backend",
    "lookup_one",
    "popcount64",
    "trie_lookup",
]
