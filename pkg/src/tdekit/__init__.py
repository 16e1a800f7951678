"""Numerical toolkit for the total differential equation ``grad u = lambda g``."""

from .errors import (BracketError, ChartError, DomainError, FieldError, GuardExitError, KinkError,
                     NonFiniteError, OdeError, ParseError, TdeError, ZeroFieldError)
from .expr import Expr, parse_expr, to_text
from .fieldspec import BUILTIN_FIELDS, DomainBox, FieldSpec, builtin, eval_field, jacobian
from .foliation import (LevelSetTrace, compare_solutions, monotone_section, tangent_orthogonality_residual,
                        trace_level_set)
from .gallery import ExampleCase, get_example, list_examples, verify_example
from .integrability import (IntegrabilityReport, check_integrability, jacobi_residual, reduced_triples,
                            symmetry_residual)
from .kktopt import (ConstraintSpec, KKTCertificate, kkt_search, kkt_verify, minimize_oracle, nnls,
                     slater_check)
from .localsolver import (ChartConfig, SolutionChart, SolutionValue, build_chart, eval_level_fn,
                          eval_solution, gradient_alignment_residual, recover_lambda)
from .odecore import OdeConfig, Trajectory, integrate, ray_rhs, solution_function
from .quasiconvex import (QCConfig, QCReport, directional_limsup, pairwise_condition, qc_classify,
                          quasiconvexity_bruteforce)

__version__ = "0.1.0"
