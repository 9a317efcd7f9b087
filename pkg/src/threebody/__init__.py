"""Relative periodic orbits of the planar three-body problem.

Modules
-------
numerics      scalar backends (float, mpfr) and dense linear algebra
dynamics      Newtonian vector field, rotations, conserved quantities
cns           Taylor integrator with optional variational columns
finder        Newton corrector, refinement, grid search
continuation  mass-parameter continuation and the seed lattice
stability     return-map eigenvalues and labels
ann           small MLP with AMSGrad, datasets, metrics
expansion     train / predict / correct rounds over the mass plane
store         orbit stores and trajectory export
cli           command-line front end
"""

__version__ = "0.1.0"
