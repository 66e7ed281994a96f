"""Kinetic simulation and verification toolkit for wall-bounded
Vlasov-Poisson-Boltzmann flows with Cercignani-Lampis gas-surface scattering.

The package is organized around small, independently testable pieces:

- ``geometry``        convex analytic domains (ball, ellipsoid, 2D disk) and wall temperature
- ``bessel``          modified Bessel function I0 (series / asymptotic / scaled)
- ``quadrature``      tanh-sinh, exp-sinh and Gauss rules with refinement control
- ``integrals``       closed-form Gaussian and Gaussian-Bessel identities with quadrature twins
- ``scattering``      the Cercignani-Lampis kernel: evaluation, exact sampling, identities
- ``characteristics`` trajectory integration, backward exit times, kinetic weight alpha, cycles
- ``collision``       hard-potential Boltzmann operator: DSMC step, loss frequency, gain estimate
- ``field``           charge deposition and the cut-cell Neumann Poisson solve
- ``simulator``       forward particle runs, diagnostics, backward Duhamel estimator
- ``picard``          the 2D-disk Picard iteration with wall coupling
- ``cli``             the ``clvpb`` command-line entry point
"""

__version__ = "0.1.0"
