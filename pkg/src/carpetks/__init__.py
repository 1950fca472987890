"""Generalized Sierpinski carpets: cells, approximation graphs, discrete p-energies
and Monte-Carlo Korevaar-Schoen functionals with an inequality harness."""

from .carpet import (
    Address,
    CarpetSpec,
    Cell,
    ahlfors_scan,
    cell_of_word,
    level_cells,
    measure_ball,
    menger_sponge,
    standard_carpet,
    validate_carpet,
    word_of_lattice,
)
from .exceptions import (
    BracketWidthError,
    BudgetExceededError,
    CarpetKSError,
    CarpetSpecError,
    ConfigError,
    ConvergenceError,
    LevelMismatchError,
    NotACellError,
    RejectionRateError,
    SubcriticalError,
)
from .functionals import (
    GeometryConstants,
    MCQuadrature,
    annulus_A,
    annulus_decomposition,
    functional_A,
    holder_ratio,
    ks_E,
    poincare_deficit,
)
from .functions import CellFunction, PointFunction, coordinate_function, face_indicator
from .graph import Graph, LevelGraph, build_level_graph, compute_L_star
from .penergy import (
    SolverConfig,
    cell_average,
    estimate_rho_beta,
    graph_p_energy,
    min_k,
    p_capacity,
    p_harmonic_solve,
    tail_ratio,
)
from .verify import FunctionSuite, HarnessConfig, InequalityReport, run_suite

__version__ = "0.1.0"
