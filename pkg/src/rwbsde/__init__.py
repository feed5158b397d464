"""Random-walk lattice solvers for one-dimensional BSDEs."""

from .errors import (BSDEError, EvaluationError, ExpressionError, NumericalError,
                     QuadratureError, ValidationError)
from .expr import Expression, evaluate, format_expression, parse
from .lattice import Lattice, LevelFunction
from .problem import (Barrier, Generator, ItoBarrier, PhiReflection, ProblemSpec, ZInterval,
                      stability_guard, validate)
from .schemes import SolutionSurface, solve_explicit, solve_implicit, solve_split
from .reflected import (ReflectedSurface, accumulate_K, solve_penalized_explicit_implicit,
                        solve_penalized_implicit, solve_reflected_explicit,
                        solve_reflected_implicit)
from .constrained import ConstrainedSurface, accumulate_A, solve_phi_reflected, solve_z_constrained
from .solve import solve

__version__ = "0.1.0"
