"""Model-aware data selection laboratory.

Thin package over the compiled ``mates._core`` extension: corpus generation,
staged selection-and-pretraining runs, influence-model fitting and scoring,
subset selection, and run-report analysis. See ``help(mates._core)`` for the
full surface.
"""

from mates._core import *  # noqa: F401,F403
from mates._core import __doc__ as _core_doc  # noqa: F401

__version__ = "0.1.0"
