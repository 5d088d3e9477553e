"""Desk-scale 2D driving microworld with replay-based action-value labeling.

The pipeline: collect logs in a deterministic microworld, fit a kinematic
ego model to the logged motion, compute dense time-indexed action values by
backward induction while the rest of the world replays verbatim, distill the
values into a reactive raster policy, and benchmark everything on fixed
route suites.
"""

__version__ = "0.1.0"

from microdrive.world import Action, EgoState, NPCState, WorldSnapshot  # noqa: F401
