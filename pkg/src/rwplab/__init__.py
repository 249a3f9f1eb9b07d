"""rwplab: robust width analysis for compressed sensing.

Signal models (CS spaces), a sharp-norm decoder, Gaussian-width and
robust-width estimation, RIP enumeration, Grassmannian tools and experiment
harnesses.
"""

__version__ = "0.1.0"

from .cs_space import (  # noqa: E402
    BlockSparsity, CsSpace, Decomposition, GradientSparsity, LowRank, WeightedSparsity,
    best_atom_approx, decompose, gradient_operator_norm_bound, make_space, sharp_norm,
)
from .exceptions import (  # noqa: E402
    ConvergenceError, GuardError, InputError, PreconditionError, RwpLabError,
)
from .solvers import (  # noqa: E402
    DecodeProblem, DecodeResult, SensingOperator, SharpNormDecoder, SolverConfig, decode,
    prox_sharp, project_l2_ball,
)
from .width_rwp import (  # noqa: E402
    RipReport, RobustWidthSearch, RwpParams, RwpReport, WidthEstimate,
    analytic_width_bound_l1, cai_zhang_feasible, converse_constants, gaussian_width_mc,
    guarantee_constants, measurement_budget, rip_enumerate, rip_to_rwp, rwp_search,
    width_sample,
)
