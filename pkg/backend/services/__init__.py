"""
Numerical services: quadrature, mean-field maps, EOC solver, checks, simulator, reproduction
"""
