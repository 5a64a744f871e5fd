"""Interaction-picture Magnus propagators and field optimization for weakly coupled systems.

The main entry points are :func:`magnusctl.system.build_rotor_system`,
:func:`magnusctl.propagators.propagate` and
:func:`magnusctl.optimizer.optimize`.
"""

__version__ = "0.1.0"
