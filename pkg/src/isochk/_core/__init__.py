"""Kernel backend selection.

Prefers the compiled extension; falls back to the pure-Python kernel when
the extension is unavailable or when ISOCHK_PURE is set in the environment.
"""

import os

from ._pykernel import topological_order

if os.environ.get("ISOCHK_PURE"):
    from ._pykernel import BACKEND, BitClosure, TopoGraph
else:
    try:
        from ._kernel import BACKEND, BitClosure, TopoGraph
    except ImportError:
        from ._pykernel import BACKEND, BitClosure, TopoGraph

__all__ = ["BACKEND", "BitClosure", "TopoGraph", "topological_order"]
