"""Vortex solutions of the Ginzburg-Landau equations on the non-compact
hyperbolic surfaces H/Gamma(N): exact congruence-group arithmetic, equivariant
line-bundle meshes, magnetic-Laplacian spectra, Poincare-series cusp forms,
Abrikosov bifurcation coefficients, and a full nonlinear energy minimizer."""

__version__ = "0.1.0"
