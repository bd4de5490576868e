"""Quadruped locomotion stack: force-based convex MPC over a compensated
single-rigid-body model, with an optional learned residual policy, verified
in an included rigid-body simulator."""

__version__ = "0.1.0"
