"""mcflow: min-cost network flow by a regularized interior-point method.

Newton steps are reduced to weighted graph-Laplacian systems and solved by
AMG-preconditioned Krylov iteration; an exact successive-shortest-paths
solver provides ground truth at desk scale.
"""

from .amg import AmgHierarchy, build_hierarchy, vcycle
from .ipm import (ActiveSet, InfeasibleProblemError, IpmState,
                  NonConvergenceError, Residuals, SolveResult, SolverConfig,
                  SolverError, StallError, solve)
from .krylov import KrylovStats, bicgstab, cg
from .netcore import (DimacsFormatError, Network, NetworkValidationError,
                      gen_grid, gen_random_sparse, incidence_matrix,
                      parse_dimacs, write_dimacs)
from .oracle import FlowSolution, OracleInputError, ssp_solve
from .schur import (Metric, SchurOperator, SchurSolveError, assemble_schur,
                    connected_components_labelprop, pin_components,
                    solve_newton_system)

__all__ = [
    "ActiveSet", "AmgHierarchy", "DimacsFormatError", "FlowSolution",
    "InfeasibleProblemError", "IpmState", "KrylovStats", "Metric", "Network",
    "NetworkValidationError", "NonConvergenceError", "OracleInputError",
    "Residuals", "SchurOperator", "SchurSolveError", "SolveResult",
    "SolverConfig", "SolverError", "StallError", "assemble_schur", "bicgstab",
    "build_hierarchy", "cg", "connected_components_labelprop", "gen_grid",
    "gen_random_sparse", "incidence_matrix", "parse_dimacs", "pin_components",
    "solve", "solve_newton_system", "ssp_solve", "vcycle", "write_dimacs",
]

__version__ = "0.1.0"
