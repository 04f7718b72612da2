"""Lattice Schwinger model with Ising-interface and Rydberg-array encodings.

Submodules: ``lattice`` (gauge sector and Hamiltonian), ``interface`` (domain
wall encoding), ``rydberg`` (array design and patch checks), ``fluctuations``
(field-fluctuation bounds and resource estimates), ``dynamics`` (real-time
evolution) and ``cli``.
"""

__version__ = "0.1.0"

from .errors import CapacityError, ConvergenceError, EquivalenceError, ValidationError
from .lattice import (
    GaugeConfig,
    LatticeParams,
    SectorBasis,
    SparseHamiltonian,
    build_hamiltonian,
    enumerate_basis,
    gauss_fields,
    ground_state,
    measure,
)
from .interface import decode_path, encode_path, verify_equivalence
from .fluctuations import DiracParams, correlation_matrix, entanglement_spectrum, fcs_distribution
from .dynamics import EvolutionSpec, QuenchScenario, krylov_evolve, run_quench
