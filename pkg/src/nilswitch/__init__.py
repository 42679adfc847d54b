"""Numerical study of minimum-time extremals of two-input control-affine systems near
the switching locus {H1 = H2 = 0}.

Modules
-------
polyfield      polynomial vector fields and Lie brackets with exact rational coefficients
pmp            Hamiltonian lifts, maximized and singular flows
chart          adapted polar coordinates, classification of switching points, normal form
blowup         quasi-homogeneous blow-up of the nilpotent equilibrium
integrate      event-driven integration across the switching locus
manifolds      invariant manifolds, strata, phase portraits on the blown-up sphere
example_kepler a concrete system with a contact on Sigma_0
cli            command-line front end
"""
__version__ = "0.1.0"
