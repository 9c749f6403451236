r"""Implement the ``covisac`` command-line front end.

The subcommands are:

- ``validate``: parse a scenario, echo the resolved parameters and
  check the initial straight flight.
- ``solve``: solve a scenario with one design.
- ``sweep``: solve a scenario for several values of one parameter.
- ``mc-dep``: compare the Monte Carlo warden error with the closed
  form.
- ``report``: turn a result directory into plot-ready tables and
  vector figures.

A scenario is a TOML file (or the name of a shipped scenario) with
the sections ``[time]``, ``[geometry]``, ``[antennas]``, ``[channel]``,
``[power]``, ``[computation]``, ``[requirements]``, ``[mobility]`` and
``[propulsion]``. Only the geometry keys ``ap_positions``,
``warden_positions``, ``uav_altitudes``, ``uav_start``, ``uav_end``
and ``sensing_box`` are required; ``covisac validate`` prints the
complete resolved file.
"""

from __future__ import annotations

__all__ = ["MANIFEST_SCHEMA", "RESULT_SCHEMA", "main"]

import argparse
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from covisac.ao_driver import (  # noqa: E402
    SWEEP_PARAMETERS,
    AoSettings,
    Design,
    solve_design,
    sweep,
)
from covisac.covert import (  # noqa: E402
    DetectionStats,
    dep_from_mu,
    f_inverse,
    mc_dep_oracle,
)
from covisac.errors import (  # noqa: E402
    BuildError,
    InfeasibleError,
    InputError,
    InternalError,
    ScenarioError,
    SolverError,
)
from covisac.events import (  # noqa: E402
    AO_ROUND,
    SCA_ITERATION,
    SCA_RESTORATION,
    TRUST_REGION_ITERATION,
    ConditionalEventHandler,
    EventManager,
    LoggingEventHandler,
    PeriodicCondition,
)
from covisac.scenario import (  # noqa: E402
    dump_scenario,
    load_scenario,
    repair_spacing,
    sample_sensing_area,
    scenario_from_mapping,
    straight_trajectory,
    validate_trajectory,
)
from covisac.utils import (  # noqa: E402
    atomic_write_bytes,
    atomic_write_text,
    canonical_json,
    file_sha256,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from covisac.ao_driver import SolveReport

logger = logging.getLogger(__name__)

RESULT_SCHEMA = "covisac.result/1"
MANIFEST_SCHEMA = "covisac.manifest/1"
OUTPUT_DIR_ENV = "COVISAC_OUTPUT_DIR"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INFEASIBLE = 4
EXIT_SOLVER = 5

_PARAMETER_COLUMNS = {
    "p_uav_max": "p_uav_max_W",
    "gamma_min": "gamma_min_ratio",
    "task_bits": "task_bits_bit",
    "kappa_edge": "kappa_edge_coef",
}

plt.rcParams["svg.hashsalt"] = "covisac"
plt.rcParams["svg.fonttype"] = "none"


def _parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="covisac",
        description="Energy-efficient covert MEC over networked sensing and communication.",
    )
    parser.add_argument(
        "--output-dir",
        type=Path,
        default=Path(os.environ.get(OUTPUT_DIR_ENV, "results")),
        help=f"Output directory (default: ${OUTPUT_DIR_ENV} or 'results').",
    )
    parser.add_argument("--jobs", type=int, default=1, help="Maximum number of worker threads.")
    parser.add_argument("--seed", type=int, default=0, help="Random seed.")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level.",
    )
    parser.add_argument("--solver", default="CLARABEL", help="Conic backend (cvxpy name).")
    parser.add_argument(
        "--log-every",
        type=int,
        default=10,
        help="Log one SCA and trust-region iteration out of this many (0 disables).",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="Parse and check a scenario.")
    validate.add_argument("scenario", help="Scenario file or shipped scenario name.")

    solve = commands.add_parser("solve", help="Solve a scenario with one design.")
    solve.add_argument("scenario", help="Scenario file or shipped scenario name.")
    solve.add_argument(
        "--design", default=Design.PROPOSED.value, choices=[design.value for design in Design]
    )

    sweep_parser = commands.add_parser("sweep", help="Solve a scenario over parameter values.")
    sweep_parser.add_argument("scenario", help="Scenario file or shipped scenario name.")
    sweep_parser.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    sweep_parser.add_argument("--values", required=True, type=float, nargs="+")
    sweep_parser.add_argument(
        "--design", default=Design.PROPOSED.value, choices=[design.value for design in Design]
    )

    mc_dep = commands.add_parser("mc-dep", help="Monte Carlo check of the warden error.")
    target = mc_dep.add_mutually_exclusive_group(required=True)
    target.add_argument("--mu", type=float, nargs="+", help="Power ratios to simulate.")
    target.add_argument("--xi-min", type=float, help="Covertness requirement.")
    mc_dep.add_argument("--samples", type=int, default=1_000_000, help="Samples per hypothesis.")

    report = commands.add_parser("report", help="Emit figure data from a result directory.")
    report.add_argument("result_dir", type=Path, help="Output directory of solve or sweep.")
    return parser.parse_args(argv)


def _settings(args: argparse.Namespace) -> AoSettings:
    return AoSettings(jobs=max(1, args.jobs)).with_backend(args.solver)


def _event_manager(args: argparse.Namespace) -> EventManager:
    r"""Return the manager that logs the solver progress.

    Every AO round and restoration record is logged; the SCA and
    trust-region iterations are thinned to one out of
    ``args.log_every``.
    """
    if args.log_every < 0:
        msg = f"--log-every has to be nonnegative but received {args.log_every}"
        raise InputError(msg)
    manager = EventManager()
    for event in (AO_ROUND, SCA_RESTORATION):
        manager.add_event_handler(event, LoggingEventHandler(event, level=logging.INFO))
    if args.log_every > 0:
        for event in (SCA_ITERATION, TRUST_REGION_ITERATION):
            manager.add_event_handler(
                event,
                ConditionalEventHandler(
                    LoggingEventHandler(event, level=logging.INFO).handle,
                    PeriodicCondition(args.log_every),
                ),
            )
    return manager


def _write_csv(path: Path, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def _write_manifest(
    args: argparse.Namespace, output_dir: Path, artifacts: Sequence[Path], settings: dict[str, Any]
) -> Path:
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": args.command,
        "scenario": str(getattr(args, "scenario", getattr(args, "result_dir", ""))),
        "settings": settings,
        "seed": args.seed,
        "output_dir": str(output_dir),
        "artifacts": {path.name: file_sha256(path) for path in sorted(artifacts)},
    }
    text = canonical_json(manifest, indent=2) + "\n"
    return atomic_write_text(output_dir / "manifest.json", text)


def _result_document(report: SolveReport) -> str:
    return canonical_json({"schema": RESULT_SCHEMA} | report.to_dict(), indent=2) + "\n"


def _trace_frame(report: SolveReport) -> pd.DataFrame:
    frames = [
        pd.DataFrame(list(records)).assign(source=source)
        for source, records in (
            ("ao", report.rounds),
            ("sca", report.sca_trace),
            ("trust_region", report.trajectory_trace),
        )
        if records
    ]
    if not frames:
        return pd.DataFrame({"source": []})
    frame = pd.concat(frames, ignore_index=True, sort=False)
    return frame[["source", *[column for column in frame.columns if column != "source"]]]


def cmd_validate(args: argparse.Namespace) -> int:
    r"""Parse a scenario, echo it and check the initial straight
    flight."""
    scenario = load_scenario(args.scenario)
    sys.stdout.write(dump_scenario(scenario))
    sys.stdout.write(
        f"\n# Q={scenario.num_samples} mu_max={scenario.mu_max:g} "
        f"APs={scenario.num_aps} UAVs={scenario.num_uavs} wardens={scenario.num_wardens}\n"
    )
    samples = sample_sensing_area(scenario.sensing_box, scenario.num_samples)
    trajectory = repair_spacing(straight_trajectory(scenario), scenario, samples)
    report = validate_trajectory(trajectory, scenario, samples)
    for name, margin in report.min_margins.items():
        sys.stdout.write(f"# min margin {name}: {margin:.6g}\n")
    if not report.ok:
        families = sorted({violation.constraint for violation in report.violations})
        msg = f"the initial flight violates {', '.join(families)}"
        raise InfeasibleError(msg, families=families)
    logger.info(f"Scenario {args.scenario} is valid")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    r"""Solve a scenario and write the result files."""
    scenario = load_scenario(args.scenario)
    report = solve_design(scenario, args.design, _settings(args), _event_manager(args))
    output_dir = args.output_dir
    artifacts = [
        atomic_write_text(output_dir / "result.json", _result_document(report)),
        _write_csv(output_dir / "energy.csv", report.energy.to_frame()),
        _write_csv(output_dir / "trace.csv", _trace_frame(report)),
    ]
    _write_manifest(args, output_dir, artifacts, {"design": args.design, "solver": args.solver})
    logger.info(
        f"{args.design}: total energy {report.total_energy:.6e} J, timings "
        + ", ".join(f"{key}={value:.2f}" for key, value in sorted(report.timings.items()))
    )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    r"""Solve a scenario over parameter values and write the table."""
    scenario = load_scenario(args.scenario)
    results = sweep(
        scenario, args.param, args.values, _settings(args), args.design, _event_manager(args)
    )
    output_dir = args.output_dir
    artifacts = [
        _write_csv(output_dir / "sweep.csv", pd.DataFrame([row.to_record() for row, _ in results]))
    ]
    for index, (_, report) in enumerate(results):
        path = output_dir / f"result_{index:03d}.json"
        artifacts.append(atomic_write_text(path, _result_document(report)))
    settings = {
        "design": args.design,
        "parameter": args.param,
        "solver": args.solver,
        "values": list(args.values),
    }
    _write_manifest(args, output_dir, artifacts, settings)
    return EXIT_OK


def cmd_mc_dep(args: argparse.Namespace) -> int:
    r"""Compare the Monte Carlo warden error with the closed form."""
    mus = [f_inverse(1.0 - args.xi_min)] if args.xi_min is not None else list(args.mu)
    rows = []
    for mu in mus:
        if mu < 0.0:
            msg = f"mu has to be nonnegative but received {mu}"
            raise InputError(msg)
        result = mc_dep_oracle(
            DetectionStats(lambda0=1.0, lambda1=1.0 + mu),
            samples=args.samples,
            seed=args.seed,
            workers=args.jobs,
        )
        rows.append(
            {
                "mu_ratio": mu,
                "dep_analytic_prob": dep_from_mu(mu),
                "dep_mc_prob": result.estimate,
                "dep_mc_stderr_prob": result.stderr,
                "threshold_W": result.threshold,
                "grid_dep_min_prob": result.grid_minimum,
                "samples_count": result.samples,
            }
        )
    frame = pd.DataFrame(rows)
    path = _write_csv(args.output_dir / "mc_dep.csv", frame)
    _write_manifest(args, args.output_dir, [path], {"samples": args.samples, "mu": mus})
    sys.stdout.write(frame.to_string(index=False) + "\n")
    return EXIT_OK


def _save_svg(fig: plt.Figure, path: Path) -> Path:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return atomic_write_bytes(path, buffer.getvalue())


def _report_trajectory(result_path: Path, output_dir: Path) -> list[Path]:
    document = json.loads(result_path.read_text(encoding="utf-8"))
    scenario = scenario_from_mapping(document["scenario"])
    waypoints = document["waypoints"]
    records = [
        {"uav": k, "waypoint": n, "x_m": point[0], "y_m": point[1]}
        for k, path in enumerate(waypoints)
        for n, point in enumerate(path)
    ]
    frame = pd.DataFrame(records)
    fig, ax = plt.subplots(figsize=(6, 6))
    for k, group in frame.groupby("uav", sort=True):
        ax.plot(group["x_m"], group["y_m"], marker=".", label=f"UAV {k}")
    ax.scatter(*scenario.ap_positions[:, :2].T, marker="^", color="k", label="AP")
    ax.scatter(*scenario.warden_positions[:, :2].T, marker="x", color="r", label="warden")
    (x0, y0), (x1, y1) = scenario.sensing_box[0, :2], scenario.sensing_box[1, :2]
    ax.add_patch(plt.Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, ls="--", label="target"))
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    ax.legend(loc="best")
    ax.set_title(f"Trajectories ({document['design']})")
    return [
        _write_csv(output_dir / "trajectory.csv", frame),
        _save_svg(fig, output_dir / "trajectory.svg"),
    ]


def _report_sweep(sweep_path: Path, output_dir: Path) -> list[Path]:
    frame = pd.read_csv(sweep_path)
    artifacts = []
    for parameter, group in frame.groupby("parameter", sort=True):
        column = _PARAMETER_COLUMNS.get(parameter, parameter)
        table = group.drop(columns="parameter").rename(columns={"value": column})
        table = table.sort_values(column, kind="stable")
        energy_columns = [name for name in table.columns if name.endswith("_energy_J")]
        fig, ax = plt.subplots(figsize=(6, 4))
        for name in energy_columns:
            ax.plot(table[column], table[name], marker="o", label=name.removesuffix("_J"))
        ax.set_xlabel(column)
        ax.set_ylabel("energy (J)")
        ax.legend(loc="best")
        stem = f"energy_vs_{parameter}"
        artifacts.append(_write_csv(output_dir / f"{stem}.csv", table))
        artifacts.append(_save_svg(fig, output_dir / f"{stem}.svg"))
    return artifacts


def cmd_report(args: argparse.Namespace) -> int:
    r"""Emit plot-ready tables and vector figures from a result
    directory."""
    result_dir = args.result_dir
    artifacts = []
    if (result_dir / "result.json").is_file():
        artifacts.extend(_report_trajectory(result_dir / "result.json", result_dir))
    if (result_dir / "sweep.csv").is_file():
        artifacts.extend(_report_sweep(result_dir / "sweep.csv", result_dir))
    if not artifacts:
        msg = f"no result.json or sweep.csv in {result_dir}"
        raise FileNotFoundError(msg)
    for path in artifacts:
        logger.info(f"Wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "mc-dep": cmd_mc_dep,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    r"""Run the command line.

    Args:
        argv: The arguments, ``sys.argv[1:]`` if ``None``.

    Returns:
        The exit code: 0 on success, 2 for a usage error, 3 for a
            missing or unparsable file, 4 for an infeasible problem
            and 5 for a solver failure.
    """
    try:
        args = _parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=args.log_level)
    try:
        return _COMMANDS[args.command](args)
    except (ScenarioError, FileNotFoundError) as exc:
        logger.error(f"{exc}")
        return EXIT_PARSE
    except InfeasibleError as exc:
        logger.error(f"infeasible ({', '.join(exc.families) or 'unknown'}): {exc}")
        return EXIT_INFEASIBLE
    except (SolverError, BuildError, InternalError) as exc:
        logger.error(f"{exc.__class__.__name__}: {exc}")
        return EXIT_SOLVER
    except InputError as exc:
        logger.error(f"{exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
