"""Low-rank approximate inverses of Kronecker-sum operators.

Tensors are float64 arrays of shape ``dims`` laid out with mode 0 fastest
(Fortran order); flat vectors are accepted wherever a tensor is expected.
"""

import numpy as np

from . import _core
from ._core import (
    BasisOperator,
    KroninvError,
    KronSumOperator,
    Problem,
    error_estimate,
    greedy_inverse,
    load,
    mean_based_preconditioner,
    poisson,
    save,
    stochastic_elliptic,
)

__version__ = _core.__version__

__all__ = [
    "BasisOperator",
    "KroninvError",
    "KronSumOperator",
    "Problem",
    "apply",
    "as_tensor",
    "error_estimate",
    "greedy_inverse",
    "load",
    "mean_based_preconditioner",
    "poisson",
    "reference_solution",
    "save",
    "solve",
    "stochastic_elliptic",
]


def as_tensor(flat, dims):
    """Reshape a flat mode-0-fastest vector to an array of shape ``dims``."""
    return np.asarray(flat).reshape(tuple(dims), order="F")


def _flat(x):
    return np.asarray(x, dtype=np.float64).reshape(-1, order="F")


def apply(op, x):
    """``op @ x`` for a KronSumOperator or BasisOperator; keeps the shape of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = op.matvec(_flat(x))
    return y if x.ndim == 1 else as_tensor(y, op.dims)


def reference_solution(problem):
    """Direct solve of ``problem.a u = problem.b``, shaped like the problem."""
    return as_tensor(_core.reference_solution(problem), problem.dims)


def solve(problem, preconditioner=None, method="gmres", rank=10, max_iterations=30,
          residual_tolerance=0.0, reference=None):
    """Low-rank GMRES or PCG. Returns ``(u, trace)`` with ``u`` shaped like the problem."""
    ref = None if reference is None else _flat(reference)
    u, trace = _core.solve(problem, preconditioner, method, rank, max_iterations,
                           residual_tolerance, ref)
    return as_tensor(u, problem.dims), trace
