"""Grid-based construction and verification of Helmholtz quadrature domains.

Subpackage map:

* :mod:`qdom.specfun` -- Bessel functions, zeros, kernel, ball capacity
* :mod:`qdom.grid` -- grids, fields, masks, measures, IO
* :mod:`qdom.linsolve` -- CG, projected SOR, smallest eigenvalue
* :mod:`qdom.balayage` -- Helmholtz potentials and partial balayage
* :mod:`qdom.multiphase` -- segregated energy minimization
* :mod:`qdom.twophase` -- two-phase domains by minimization and balayage
* :mod:`qdom.verify` -- quadrature identities, null balls, energy identities
* :mod:`qdom.scatter` -- invisible contrasts and TE permittivity
* :mod:`qdom.cli` -- the ``qdom`` command line front end
"""

__version__ = "0.1.0"
