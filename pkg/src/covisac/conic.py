r"""Implement a small conic-program builder on top of ``cvxpy``.

Every program is real-valued: complex beamformers are stacked as
``[Re w; Im w]`` and Hermitian covariances are stored through their
real ``2n x 2n`` symmetric embedding. Constraints are grouped in named
blocks (a constraint family and a cone tag) so that a program can be
counted, checked against a candidate point and dumped for
cross-checking.
"""

from __future__ import annotations

__all__ = [
    "CONE_TAGS",
    "ConicProgram",
    "ConicSettings",
    "ConicSolution",
    "ConstraintBlock",
    "HermitianVariable",
    "cubic_epigraph",
    "exp_epigraph",
    "hermitian_psd_embed",
    "inverse_square_epigraph",
    "real_embedding",
    "rotated_soc",
    "stack_complex",
    "unstack_complex",
]

from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
import time
from typing import TYPE_CHECKING, Any

from coola.utils import str_indent, str_mapping
import cvxpy as cp
import numpy as np

from covisac.errors import BuildError, InputError, SolverError

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

CONE_TAGS = ("zero", "nonneg", "soc", "rsoc", "exp", "pow", "psd")

_STATUS = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "inaccurate",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "unbounded",
    cp.UNBOUNDED_INACCURATE: "unbounded",
    cp.USER_LIMIT: "iteration_limit",
}


def real_embedding(matrix: np.ndarray) -> np.ndarray:
    r"""Return the real embedding ``[[Re M, -Im M], [Im M, Re M]]`` of a
    complex matrix.

    ``||M w||`` equals ``||real_embedding(M) stack_complex(w)||`` and a
    Hermitian matrix is PSD if and only if its embedding is.

    Example usage:

    ```pycon
    >>> import numpy as np
    >>> from covisac.conic import real_embedding
    >>> real_embedding(np.array([[1j]]))
    array([[ 0., -1.],
           [ 1.,  0.]])

    ```
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
    return np.block([[matrix.real, -matrix.imag], [matrix.imag, matrix.real]])


def stack_complex(vector: np.ndarray) -> np.ndarray:
    r"""Return ``[Re v; Im v]`` of a complex vector."""
    vector = np.asarray(vector, dtype=complex)
    return np.concatenate([vector.real, vector.imag])


def unstack_complex(vector: np.ndarray) -> np.ndarray:
    r"""Invert ``stack_complex``."""
    vector = np.asarray(vector, dtype=float)
    half = vector.shape[0] // 2
    return vector[:half] + 1j * vector[half:]


def _flat(expr: Any) -> cp.Expression:
    expr = cp.Expression.cast_to_const(expr)
    return cp.reshape(expr, (expr.size,), order="F")


def rotated_soc(x: Any, y: Any, z: Any) -> cp.Constraint:
    r"""Return the rotated second-order cone ``x y >= ||z||^2``,
    ``x, y >= 0``.

    When ``x`` and ``y`` are vectors of size ``m``, ``z`` holds one
    column per cone (shape ``(m,)`` or ``(r, m)``) and ``m`` cones are
    returned in one constraint.

    Args:
        x: The first bound.
        y: The second bound.
        z: The bounded expression.

    Returns:
        The second-order cone constraint.
    """
    x = cp.Expression.cast_to_const(x)
    y = cp.Expression.cast_to_const(y)
    z = cp.Expression.cast_to_const(z)
    size = max(x.size, y.size)
    if size == 1:
        diff = cp.reshape(x - y, (1,), order="F")
        return cp.SOC(_flat(x + y), cp.hstack([diff, 2 * _flat(z)]))
    rows = z.size // size
    stacked = cp.vstack(
        [cp.reshape(x - y, (1, size), order="F"), 2 * cp.reshape(z, (rows, size), order="F")]
    )
    return cp.SOC(_flat(x + y), stacked, axis=0)


def exp_epigraph(bound: Any, exponent: Any) -> cp.Constraint:
    r"""Return the exponential-cone constraint ``bound >= exp(exponent)``
    (elementwise)."""
    exponent = cp.Expression.cast_to_const(exponent)
    return cp.constraints.ExpCone(exponent, cp.Constant(np.ones(exponent.shape)), bound)


def cubic_epigraph(
    value: Any, bound: Any, aux: cp.Variable, power_cone: bool = False
) -> list[cp.Constraint]:
    r"""Return constraints enforcing ``bound >= value^3`` for
    ``value >= 0`` (elementwise).

    The default encoding uses two rotated cones, ``aux >= value^2`` and
    ``bound value >= aux^2``. With ``power_cone=True`` the 3-D power
    cone ``bound^(1/3) >= |value|`` is used instead and ``aux`` is left
    unconstrained.

    Args:
        value: The base, nonnegative.
        bound: The epigraph variable.
        aux: An auxiliary variable with the shape of ``value``.
        power_cone: If ``True``, use the power cone.

    Returns:
        The constraints.
    """
    if power_cone:
        bound = cp.Expression.cast_to_const(bound)
        return [cp.PowCone3D(bound, cp.Constant(np.ones(bound.shape)), value, 1.0 / 3.0)]
    value = cp.Expression.cast_to_const(value)
    ones = cp.Constant(np.ones(value.shape))
    return [rotated_soc(aux, ones, value), rotated_soc(bound, value, aux)]


def inverse_square_epigraph(bound: Any, value: Any, aux: cp.Variable) -> list[cp.Constraint]:
    r"""Return constraints enforcing ``bound >= 1 / value^2`` for
    ``value > 0`` (elementwise).

    The encoding is ``aux value >= 1`` and ``bound >= aux^2``.
    """
    ones = cp.Constant(np.ones(aux.shape))
    return [rotated_soc(aux, value, ones), rotated_soc(bound, ones, aux)]


class HermitianVariable:
    r"""Implement an ``n x n`` Hermitian decision variable.

    The variable is stored as a real symmetric ``2n x 2n`` matrix ``E``
    tied to the embedding structure, so ``Re X = E[:n, :n]`` and
    ``Im X = E[n:, :n]``.

    Args:
        size: The dimension ``n``.
        name: The variable name.
    """

    def __init__(self, size: int, name: str) -> None:
        if size < 1:
            msg = f"size has to be positive but received {size}"
            raise InputError(msg)
        self._size = int(size)
        self._name = name
        self.embedding = cp.Variable((2 * size, 2 * size), symmetric=True, name=name)

    def __repr__(self) -> str:
        return f"{self.__class__.__qualname__}(size={self._size}, name={self._name})"

    @property
    def name(self) -> str:
        return self._name

    @property
    def size(self) -> int:
        return self._size

    def structure(self) -> list[cp.Constraint]:
        r"""Return the equalities tying ``E`` to an embedding."""
        n = self._size
        e = self.embedding
        return [e[:n, :n] == e[n:, n:], e[:n, n:] == -e[n:, :n]]

    def trace(self) -> cp.Expression:
        r"""Return ``tr(X)``."""
        return cp.trace(self.embedding) / 2

    def inner(self, matrix: np.ndarray) -> cp.Expression:
        r"""Return ``tr(A X)`` for a Hermitian constant ``A``."""
        return cp.sum(cp.multiply(real_embedding(matrix), self.embedding)) / 2

    def quad(self, vector: np.ndarray) -> cp.Expression:
        r"""Return ``v^H X v``."""
        vector = np.asarray(vector, dtype=complex)
        return self.inner(np.outer(vector, vector.conj()))

    @property
    def value(self) -> np.ndarray | None:
        r"""The Hermitian value, or ``None`` before a solve."""
        if self.embedding.value is None:
            return None
        n = self._size
        e = np.asarray(self.embedding.value)
        real = 0.5 * (e[:n, :n] + e[n:, n:])
        imag = 0.5 * (e[n:, :n] - e[:n, n:])
        matrix = real + 1j * imag
        return 0.5 * (matrix + matrix.conj().T)

    def assign(self, matrix: np.ndarray) -> None:
        r"""Set the variable to a Hermitian matrix."""
        matrix = np.asarray(matrix, dtype=complex)
        embedded = real_embedding(0.5 * (matrix + matrix.conj().T))
        self.embedding.value = 0.5 * (embedded + embedded.T)


def hermitian_psd_embed(variable: HermitianVariable) -> list[cp.Constraint]:
    r"""Return the constraints making ``variable`` a Hermitian PSD
    matrix: the embedding structure and ``E >> 0``."""
    return [*variable.structure(), variable.embedding >> 0]


@dataclass(frozen=True)
class ConicSettings:
    r"""Define the settings of the conic backend.

    Args:
        solver: The ``cvxpy`` solver name.
        feasibility_tolerance: The primal/dual feasibility tolerance.
        gap_tolerance: The duality gap tolerance.
        max_iterations: The interior-point iteration cap.
        residual_tolerance: The largest constraint violation of a
            usable point, in the scaled units of the program.
        power_cone: If ``True``, cubic epigraphs use the power cone.
    """

    solver: str = "CLARABEL"
    feasibility_tolerance: float = 1e-8
    gap_tolerance: float = 1e-8
    max_iterations: int = 200
    residual_tolerance: float = 1e-6
    power_cone: bool = False

    def __post_init__(self) -> None:
        if self.feasibility_tolerance <= 0 or self.gap_tolerance <= 0:
            msg = "the backend tolerances have to be positive"
            raise InputError(msg)
        if self.max_iterations < 1:
            msg = f"max_iterations has to be positive but received {self.max_iterations}"
            raise InputError(msg)

    def solver_options(self) -> dict[str, Any]:
        r"""Return the keyword arguments passed to ``Problem.solve``."""
        name = self.solver.upper()
        if name == "CLARABEL":
            return {
                "tol_feas": self.feasibility_tolerance,
                "tol_gap_abs": self.gap_tolerance,
                "tol_gap_rel": self.gap_tolerance,
                "max_iter": self.max_iterations,
            }
        if name == "SCS":
            return {
                "eps_abs": self.feasibility_tolerance,
                "eps_rel": self.gap_tolerance,
                "max_iters": self.max_iterations * 100,
            }
        if name == "ECOS":
            return {
                "feastol": self.feasibility_tolerance,
                "abstol": self.gap_tolerance,
                "reltol": self.gap_tolerance,
                "max_iters": self.max_iterations,
            }
        return {}


@dataclass(frozen=True)
class ConicSolution:
    r"""Define the outcome of a conic solve.

    Args:
        status: One of ``optimal``, ``infeasible``, ``unbounded``,
            ``inaccurate`` or ``iteration_limit``.
        values: The primal values by variable name.
        objective: The objective value (``nan`` without a point).
        max_residual: The largest constraint violation at the point.
        solve_time: The wall-clock solve time (s).
        residual_tolerance: The tolerance used to judge the point.
    """

    status: str
    values: dict[str, np.ndarray] = field(repr=False)
    objective: float
    max_residual: float
    solve_time: float
    residual_tolerance: float = 1e-6

    @property
    def usable(self) -> bool:
        r"""``True`` if the point can be used by an outer loop."""
        if self.status == "optimal":
            return True
        return self.status == "inaccurate" and self.max_residual <= self.residual_tolerance

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


@dataclass(frozen=True)
class ConstraintBlock:
    r"""Define a group of constraints of one family and one cone."""

    family: str
    cone: str
    constraints: tuple[cp.Constraint, ...]

    @property
    def rows(self) -> int:
        r"""The total scalar size of the block."""
        return sum(c.size for c in self.constraints)


class ConicProgram:
    r"""Implement a conic program with named variables and constraint
    blocks.

    Args:
        name: The program name used in messages and dumps.

    Example usage:

    ```pycon
    >>> from covisac.conic import ConicProgram, exp_epigraph
    >>> program = ConicProgram("toy")
    >>> x = program.variable("x")
    >>> bound = program.variable("bound")
    >>> program.add("epigraph", "exp", [exp_epigraph(bound, x)])
    >>> program.add("bounds", "nonneg", [x >= 0])
    >>> program.minimize(bound)
    >>> program.count("epigraph")
    1

    ```
    """

    def __init__(self, name: str = "program") -> None:
        self.name = name
        self._variables: dict[str, cp.Variable] = {}
        self._hermitian: dict[str, HermitianVariable] = {}
        self._blocks: list[ConstraintBlock] = []
        self._objective: cp.Expression | None = None

    def __repr__(self) -> str:
        args = str_indent(
            str_mapping(
                {
                    "name": self.name,
                    "num_variables": len(self._variables),
                    "num_blocks": len(self._blocks),
                    "rows": {family: rows for family, rows in self.rows_by_family().items()},
                }
            )
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    @property
    def variables(self) -> dict[str, cp.Variable]:
        return dict(self._variables)

    @property
    def blocks(self) -> tuple[ConstraintBlock, ...]:
        return tuple(self._blocks)

    def variable(self, name: str, shape: int | tuple[int, ...] = (), **kwargs: Any) -> cp.Variable:
        r"""Declare a real variable.

        Raises:
            BuildError: if the name is already declared.
        """
        if name in self._variables:
            msg = f"variable {name!r} is already declared in {self.name}"
            raise BuildError(msg)
        var = cp.Variable(shape, name=name, **kwargs)
        self._variables[name] = var
        return var

    def hermitian(self, name: str, size: int) -> HermitianVariable:
        r"""Declare a Hermitian variable and add its PSD block under the
        ``psd`` family."""
        var = HermitianVariable(size, name)
        if name in self._variables:
            msg = f"variable {name!r} is already declared in {self.name}"
            raise BuildError(msg)
        self._variables[name] = var.embedding
        self._hermitian[name] = var
        *structure, psd = hermitian_psd_embed(var)
        self.add("hermitian_structure", "zero", structure)
        self.add("psd", "psd", [psd])
        return var

    def add(self, family: str, cone: str, constraints: Iterable[cp.Constraint]) -> None:
        r"""Add a block of constraints.

        Raises:
            BuildError: if the cone tag is unknown or a constraint
                references an undeclared variable.
        """
        if cone not in CONE_TAGS:
            msg = f"unknown cone tag {cone!r} (expected one of {CONE_TAGS})"
            raise BuildError(msg)
        constraints = tuple(constraints)
        declared = {id(v) for v in self._variables.values()}
        for constraint in constraints:
            for var in constraint.variables():
                if id(var) not in declared:
                    msg = f"family {family!r} references the undeclared variable {var.name()!r}"
                    raise BuildError(msg)
        self._blocks.append(ConstraintBlock(family, cone, constraints))

    def minimize(self, objective: Any) -> None:
        r"""Set the objective."""
        objective = cp.Expression.cast_to_const(objective)
        if objective.size != 1:
            msg = f"the objective has to be scalar but has shape {objective.shape}"
            raise BuildError(msg)
        declared = {id(v) for v in self._variables.values()}
        if any(id(var) not in declared for var in objective.variables()):
            msg = "the objective references an undeclared variable"
            raise BuildError(msg)
        self._objective = objective

    def count(self, family: str | None = None) -> int:
        r"""Return the number of constraints of a family (or all of
        them)."""
        return sum(
            len(block.constraints)
            for block in self._blocks
            if family is None or block.family == family
        )

    def rows_by_family(self) -> dict[str, int]:
        r"""Return the scalar constraint size of each family."""
        rows: dict[str, int] = {}
        for block in self._blocks:
            rows[block.family] = rows.get(block.family, 0) + block.rows
        return rows

    def families(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(block.family for block in self._blocks))

    def assign(self, values: Mapping[str, Any]) -> None:
        r"""Set variable values, for instance a linearization point."""
        for name, value in values.items():
            if name in self._hermitian:
                self._hermitian[name].assign(value)
            elif name in self._variables:
                self._variables[name].value = np.asarray(value, dtype=float).reshape(
                    self._variables[name].shape
                )
            else:
                msg = f"unknown variable {name!r}"
                raise BuildError(msg)

    def hermitian_value(self, name: str) -> np.ndarray | None:
        return self._hermitian[name].value

    def violations(self, families: Sequence[str] | None = None) -> dict[str, float]:
        r"""Return the largest violation of each family at the current
        values."""
        worst: dict[str, float] = {}
        for block in self._blocks:
            if families is not None and block.family not in families:
                continue
            for constraint in block.constraints:
                value = float(np.max(np.atleast_1d(constraint.violation())))
                worst[block.family] = max(worst.get(block.family, 0.0), value)
        return worst

    def max_violation(self) -> float:
        r"""Return the largest constraint violation at the current
        values."""
        return max(self.violations().values(), default=0.0)

    def objective_value(self) -> float:
        r"""Return the objective at the current values."""
        if self._objective is None:
            msg = f"{self.name} has no objective"
            raise BuildError(msg)
        return float(self._objective.value)

    def dump(self, path: Path | str) -> None:
        r"""Write the program as text, one constraint block per record.

        Each record starts with ``block <index> <family> <cone>
        rows=<n>`` and lists its constraints, one per line, indented.
        """
        lines = [f"# covisac.program/1 {self.name}"]
        if self._objective is not None:
            lines.append(f"minimize {self._objective}")
        for index, block in enumerate(self._blocks):
            lines.append(f"block {index} {block.family} {block.cone} rows={block.rows}")
            lines.extend(f"  {constraint}" for constraint in block.constraints)
        Path(path).write_text("\n".join(lines) + "\n")

    def solve(self, settings: ConicSettings | None = None) -> ConicSolution:
        r"""Solve the program.

        Args:
            settings: The backend settings.

        Returns:
            The solution. An ``optimal`` status is downgraded to
                ``inaccurate`` when the point violates a constraint by
                more than ``settings.feasibility_tolerance``; such a
                point stays usable up to
                ``settings.residual_tolerance``.

        Raises:
            BuildError: if the program has no objective or is not
                disciplined convex.
            SolverError: if the backend fails.
        """
        settings = settings or ConicSettings()
        if self._objective is None:
            msg = f"{self.name} has no objective"
            raise BuildError(msg)
        constraints = [c for block in self._blocks for c in block.constraints]
        problem = cp.Problem(cp.Minimize(self._objective), constraints)
        if not problem.is_dcp():
            msg = f"{self.name} is not a disciplined convex program"
            raise BuildError(msg)
        start = time.perf_counter()
        try:
            problem.solve(solver=settings.solver, **settings.solver_options())
        except cp.error.SolverError as exc:
            msg = f"{settings.solver} failed on {self.name}: {exc}"
            raise SolverError(msg) from exc
        elapsed = time.perf_counter() - start
        status = _STATUS.get(problem.status, "inaccurate")
        values = {
            name: np.asarray(var.value)
            for name, var in self._variables.items()
            if var.value is not None
        }
        # variables outside every constraint and the objective get no value
        used = {var.name() for var in problem.variables()}
        has_point = used <= values.keys() and status in ("optimal", "inaccurate")
        residual = self.max_violation() if has_point else math.inf
        if status == "optimal" and residual > settings.feasibility_tolerance:
            level = logging.DEBUG if residual <= settings.residual_tolerance else logging.WARNING
            logger.log(
                level,
                f"{self.name}: {settings.solver} reported optimal with residual {residual:.3e}",
            )
            status = "inaccurate"
        objective = float(problem.value) if has_point else math.nan
        logger.debug(f"{self.name}: {status} in {elapsed:.3f}s (objective={objective:.6e})")
        return ConicSolution(
            status=status,
            values=values,
            objective=objective,
            max_residual=residual,
            solve_time=elapsed,
            residual_tolerance=settings.residual_tolerance,
        )
