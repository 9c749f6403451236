from __future__ import annotations

import math
from typing import TYPE_CHECKING
from unittest.mock import patch

import cvxpy as cp
import numpy as np
import pytest

from covisac.conic import (
    ConicProgram,
    ConicSettings,
    ConicSolution,
    HermitianVariable,
    cubic_epigraph,
    exp_epigraph,
    inverse_square_epigraph,
    real_embedding,
    rotated_soc,
    stack_complex,
    unstack_complex,
)
from covisac.errors import BuildError, InputError

if TYPE_CHECKING:
    from pathlib import Path


####################################
#     Tests for real_embedding     #
####################################


def test_real_embedding_preserves_norm() -> None:
    rng = np.random.default_rng(0)
    matrix = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    vector = rng.normal(size=2) + 1j * rng.normal(size=2)
    assert np.linalg.norm(real_embedding(matrix) @ stack_complex(vector)) == pytest.approx(
        np.linalg.norm(matrix @ vector)
    )


def test_real_embedding_psd() -> None:
    vector = np.array([1.0, 1j])
    embedded = real_embedding(np.outer(vector, vector.conj()))
    assert np.min(np.linalg.eigvalsh(embedded)) >= -1e-12


def test_unstack_complex() -> None:
    assert np.allclose(unstack_complex([1.0, 2.0, 3.0, 4.0]), [1 + 3j, 2 + 4j])


###################################
#     Tests for the epigraphs     #
###################################


def _minimize(program: ConicProgram, objective: cp.Expression) -> ConicSolution:
    program.minimize(objective)
    solution = program.solve()
    assert solution.usable
    return solution


def test_rotated_soc_scalar() -> None:
    program = ConicProgram("rsoc")
    x = program.variable("x")
    program.add("cone", "rsoc", [rotated_soc(x, 2.0, 3.0)])
    assert _minimize(program, x).objective == pytest.approx(4.5, rel=1e-6)


def test_rotated_soc_vector() -> None:
    program = ConicProgram("rsoc")
    x = program.variable("x", 2)
    program.add("cone", "rsoc", [rotated_soc(x, np.ones(2), np.array([1.0, 2.0]))])
    solution = _minimize(program, cp.sum(x))
    assert np.allclose(solution["x"], [1.0, 4.0], rtol=1e-6)


def test_exp_epigraph() -> None:
    program = ConicProgram("exp")
    x = program.variable("x")
    bound = program.variable("bound")
    program.add("epigraph", "exp", [exp_epigraph(bound, x)])
    program.add("bounds", "nonneg", [x >= 1.0])
    assert _minimize(program, bound).objective == pytest.approx(math.e, rel=1e-6)


@pytest.mark.parametrize("power_cone", [False, True])
def test_cubic_epigraph(power_cone: bool) -> None:
    program = ConicProgram("cubic")
    value = program.variable("value")
    bound = program.variable("bound")
    aux = program.variable("aux")
    cone = "pow" if power_cone else "rsoc"
    program.add("epigraph", cone, cubic_epigraph(value, bound, aux, power_cone=power_cone))
    program.add("bounds", "nonneg", [value >= 2.0])
    assert _minimize(program, bound).objective == pytest.approx(8.0, rel=1e-6)


def test_inverse_square_epigraph() -> None:
    program = ConicProgram("inverse")
    value = program.variable("value")
    bound = program.variable("bound")
    aux = program.variable("aux")
    program.add("epigraph", "rsoc", inverse_square_epigraph(bound, value, aux))
    program.add("bounds", "nonneg", [0.5 - value >= 0])
    assert _minimize(program, bound).objective == pytest.approx(4.0, rel=1e-6)


#######################################
#     Tests for HermitianVariable     #
#######################################


def test_hermitian_variable_assign_and_value() -> None:
    var = HermitianVariable(2, "X")
    matrix = np.array([[2.0, 1j], [-1j, 1.0]])
    var.assign(matrix)
    assert np.allclose(var.value, matrix)
    assert var.trace().value == pytest.approx(3.0)
    assert var.quad(np.array([1.0, 0.0])).value == pytest.approx(2.0)
    assert var.inner(np.eye(2)).value == pytest.approx(3.0)


def test_hermitian_variable_value_before_solve() -> None:
    assert HermitianVariable(2, "X").value is None


def test_hermitian_variable_incorrect_size() -> None:
    with pytest.raises(InputError, match="size has to be positive"):
        HermitianVariable(0, "X")


def test_hermitian_variable_minimum_trace() -> None:
    program = ConicProgram("hermitian")
    var = program.hermitian("X", 2)
    vector = np.array([1.0, 1j])
    program.add("gain", "nonneg", [var.quad(vector) >= 1.0])
    solution = _minimize(program, var.trace())
    assert solution.objective == pytest.approx(0.5, rel=1e-5)
    value = program.hermitian_value("X")
    assert np.allclose(value, np.outer(vector, vector.conj()) / 4.0, atol=1e-5)
    assert "psd" in program.families()


##################################
#     Tests for ConicProgram     #
##################################


def test_conic_program_duplicate_variable() -> None:
    program = ConicProgram("dup")
    program.variable("x")
    with pytest.raises(BuildError, match="variable 'x' is already declared in dup"):
        program.variable("x")


def test_conic_program_unknown_cone() -> None:
    program = ConicProgram()
    x = program.variable("x")
    with pytest.raises(BuildError, match="unknown cone tag 'lp'"):
        program.add("bounds", "lp", [x >= 0])


def test_conic_program_undeclared_variable() -> None:
    program = ConicProgram()
    with pytest.raises(BuildError, match="references the undeclared variable"):
        program.add("bounds", "nonneg", [cp.Variable(name="y") >= 0])


def test_conic_program_objective_not_scalar() -> None:
    program = ConicProgram()
    x = program.variable("x", 2)
    with pytest.raises(BuildError, match="the objective has to be scalar"):
        program.minimize(x)


def test_conic_program_solve_without_objective() -> None:
    with pytest.raises(BuildError, match="has no objective"):
        ConicProgram().solve()


def test_conic_program_not_dcp() -> None:
    program = ConicProgram("concave")
    x = program.variable("x")
    program.add("bounds", "nonneg", [x >= 1.0])
    program.minimize(cp.sqrt(x))
    with pytest.raises(BuildError, match="is not a disciplined convex program"):
        program.solve()


def test_conic_program_infeasible() -> None:
    program = ConicProgram("infeasible")
    x = program.variable("x")
    program.add("bounds", "nonneg", [x >= 1.0, -x >= 0])
    program.minimize(x)
    solution = program.solve()
    assert solution.status == "infeasible"
    assert not solution.usable
    assert math.isnan(solution.objective)


def _toy_program() -> ConicProgram:
    program = ConicProgram("toy")
    x = program.variable("x")
    program.add("bounds", "nonneg", [x >= 1.0])
    program.minimize(x)
    return program


def test_conic_program_solve_optimal_within_feasibility_tolerance() -> None:
    program = _toy_program()
    with patch.object(ConicProgram, "max_violation", return_value=5e-9):
        solution = program.solve()
    assert solution.status == "optimal"
    assert solution.max_residual == 5e-9


def test_conic_program_solve_downgrades_residual_above_feasibility_tolerance() -> None:
    program = _toy_program()
    with patch.object(ConicProgram, "max_violation", return_value=1e-7):
        solution = program.solve()
    assert solution.status == "inaccurate"
    assert solution.usable
    assert solution.objective == pytest.approx(1.0, rel=1e-6)


def test_conic_program_solve_downgrades_unusable_residual() -> None:
    program = _toy_program()
    with patch.object(ConicProgram, "max_violation", return_value=1e-3):
        solution = program.solve()
    assert solution.status == "inaccurate"
    assert not solution.usable


def test_conic_program_solve_custom_feasibility_tolerance() -> None:
    program = _toy_program()
    with patch.object(ConicProgram, "max_violation", return_value=1e-7):
        solution = program.solve(ConicSettings(feasibility_tolerance=1e-6))
    assert solution.status == "optimal"


def test_conic_program_counts() -> None:
    program = ConicProgram()
    x = program.variable("x", 3)
    program.add("bounds", "nonneg", [x >= 0, x <= 1])
    program.add("sum", "zero", [cp.sum(x) == 1])
    assert program.count("bounds") == 2
    assert program.count() == 3
    assert program.rows_by_family() == {"bounds": 6, "sum": 1}
    assert program.families() == ("bounds", "sum")
    assert str(program).startswith("ConicProgram(")


def test_conic_program_violations_at_assigned_point() -> None:
    program = ConicProgram()
    x = program.variable("x")
    program.add("bounds", "nonneg", [x >= 0])
    program.minimize(x)
    program.assign({"x": -1.5})
    assert program.violations() == {"bounds": pytest.approx(1.5)}
    assert program.max_violation() == pytest.approx(1.5)
    assert program.objective_value() == pytest.approx(-1.5)


def test_conic_program_assign_unknown() -> None:
    with pytest.raises(BuildError, match="unknown variable 'z'"):
        ConicProgram().assign({"z": 1.0})


def test_conic_program_dump(tmp_path: Path) -> None:
    program = ConicProgram("toy")
    x = program.variable("x")
    program.add("bounds", "nonneg", [x >= 0])
    program.minimize(x)
    path = tmp_path / "toy.txt"
    program.dump(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# covisac.program/1 toy"
    assert lines[1].startswith("minimize")
    assert lines[2] == "block 0 bounds nonneg rows=1"


###################################
#     Tests for ConicSettings     #
###################################


def test_conic_settings_clarabel_options() -> None:
    options = ConicSettings(feasibility_tolerance=1e-7, max_iterations=50).solver_options()
    assert options["tol_feas"] == 1e-7
    assert options["max_iter"] == 50


def test_conic_settings_unknown_solver_options() -> None:
    assert ConicSettings(solver="OTHER").solver_options() == {}


@pytest.mark.parametrize(
    "kwargs", [{"feasibility_tolerance": 0.0}, {"gap_tolerance": -1.0}, {"max_iterations": 0}]
)
def test_conic_settings_incorrect(kwargs: dict) -> None:
    with pytest.raises(InputError):
        ConicSettings(**kwargs)


###################################
#     Tests for ConicSolution     #
###################################


@pytest.mark.parametrize(
    ("status", "residual", "usable"),
    [
        ("optimal", 0.0, True),
        ("inaccurate", 1e-9, True),
        ("inaccurate", 1e-3, False),
        ("iteration_limit", 0.0, False),
    ],
)
def test_conic_solution_usable(status: str, residual: float, usable: bool) -> None:
    solution = ConicSolution(status, {}, 0.0, residual, 0.1)
    assert solution.usable is usable
