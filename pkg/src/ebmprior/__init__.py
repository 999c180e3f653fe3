"""Learned energy-based trajectory priors for sampling-based motion planning.

Modules: ``core`` (grids, states, RNG), ``gp`` (GP trajectory prior),
``costs``, ``kinematics`` (planar arm), ``environments``, ``ebm`` (energy
networks and training), ``planners`` (StochGPMP and friends) and the
``bench`` harness.
"""

__version__ = "0.1.0"
