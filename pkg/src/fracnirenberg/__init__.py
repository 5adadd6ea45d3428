"""Numerical toolkit for the fractional Nirenberg problem on S^n.

Modules: ``constants`` (Gamma-function constants), ``sphere_spectral``
(grids and harmonic transforms), ``fractional_ops`` (P_sigma and the
flat fractional Laplacian), ``extension`` (Caffarelli-Silvestre extension),
``exact_solutions`` (bubbles, Kelvin and Moebius maps), ``identities``
(integral identities and structural checks), ``solver`` (Newton solver and
blow-up diagnostics), ``config``/``cli`` (experiments from the command line).
"""

__version__ = "0.1.0"
