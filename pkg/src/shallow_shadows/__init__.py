"""Classical shadows with shallow brickwork circuits: shadow-norm engines.

Engine modules (imps, exact_markov, clifford, walkers, meanfield,
brownian, lattice2d) compute or bound the shadow norm of Pauli
operators under locally twirled shallow-circuit measurements; cli wires
them into batch sweeps and cross-checks.
"""

__version__ = "0.1.0"
