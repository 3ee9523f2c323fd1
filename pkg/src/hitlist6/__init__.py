"""hitlist6: build, filter, probe, and analyze IPv6 hitlists.

Pipeline stages map onto submodules:

- addr: address parsing, canonical text, EUI-64 codec, IID classification
- ingest: flow/list/hostname/traceroute sources into a deduplicated TargetSet
- filtering: CIDR sets, pfx2as longest-prefix-match, the filter cascade
- probe: interval probe planning and execution (simulated or raw backend)
- analytics: coverage, runup, IID profiles, stable core, recommendations
- cli: the `hitlist6` command

The hot kernels (LPM walks, popcount, IID classification) run on a compiled
extension when built, with a numpy fallback selected at import time; see
hitlist6._kernels.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "__version__"]
