"""Heterogeneous porous medium equation with growth and its incompressible limit.

Modules:
    exprlang      expressions for coefficients, growth term and initial data
    model         problem description, pressure law, assumption checks
    grid_ops      grids, discrete operators, space-time norms
    pme_solver    explicit finite-volume solver
    diagnostics   estimate norms, complementarity, fronts
    limit_oracle  saturated profiles, front ODE, Cauchy tables
    cli           command-line front end
"""

__version__ = "0.1.0"
