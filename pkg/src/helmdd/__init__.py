"""Non-iterative domain decomposition for the 2-D Helmholtz equation by difference potentials.

Square subdomains are each reduced to a boundary equation with projection on a
grid band around their boundary; Chebyshev expansions of the Cauchy data on
every side are the unknowns, coupled across interfaces through one global
least-squares system.
"""

__version__ = "0.1.0"
