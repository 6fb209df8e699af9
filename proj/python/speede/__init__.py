"""Desk-scale toolkit for accelerating deformable 3D Gaussian splatting.

Thin wrapper over the `_speede` extension: scene synthesis, temporal
sensitivity pruning, grouped rigid motion compression, rendering, and
evaluation, all deterministic in their seeds.
"""

try:
    # installed layout: the extension lives inside this package
    from ._speede import *  # noqa: F401,F403
    from ._speede import __version__  # noqa: F401
except ImportError:
    # development layout: the extension sits on sys.path (e.g. build/python)
    from _speede import *  # noqa: F401,F403
    from _speede import __version__  # noqa: F401
