"""Potential theory of transient branching random walks on Z^d (d >= 5).

Samplers for critical, adjoint and invariant tree-indexed walks, lattice
Green's function tables (simple and branching), Monte Carlo estimators for the
equilibrium measure and branching capacity, variational solvers, and the
statistical experiment harness behind the ``brwcap`` CLI.
"""

__version__ = "0.1.0"

from .backend import backend_name, has_compiled  # noqa: F401
