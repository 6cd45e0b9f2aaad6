"""Random hyperbolic punctured spheres via labeled binary trees.

Subpackages:
    specfun   Bessel functions, constants, invariant densities
    genfun    power series, volume recursions, offspring laws
    sampler   random labeled trees (free, exact-size, local limit)
    hplane    upper half-plane primitives: points, horocycles, Moebius maps
    surface   explicit gluing, developments, horocycle distances
    limitlab  statistical verification suites for the limit laws
    cli       the `wp` command line tool
"""

__version__ = "0.1.0"
