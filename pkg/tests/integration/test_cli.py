from __future__ import annotations

import json
import logging
import math
from typing import TYPE_CHECKING

import pandas as pd
import pytest

from covisac.cli import MANIFEST_SCHEMA, main
from covisac.utils import file_sha256

if TYPE_CHECKING:
    from pathlib import Path


def _solve(output_dir: Path, *extra: str) -> int:
    return main(["--output-dir", str(output_dir), *extra, "solve", "desk", "--design", "straight"])


###########################
#     Tests for solve     #
###########################


@pytest.mark.timeout(1800)
def test_solve_writes_results(tmp_path: Path) -> None:
    assert _solve(tmp_path) == 0
    result = json.loads((tmp_path / "result.json").read_text())
    assert result["schema"] == "covisac.result/1"
    assert result["design"] == "straight"
    assert len(result["allocations"]) == 6

    energy = pd.read_csv(tmp_path / "energy.csv")
    assert list(energy.columns) == [
        "slot",
        "comm_energy_J",
        "sensing_energy_J",
        "local_energy_J",
        "edge_energy_J",
        "propulsion_energy_J",
    ]
    assert energy["slot"].tolist() == list(range(6))
    assert energy.drop(columns="slot").to_numpy().sum() == pytest.approx(
        result["energy"]["total_energy_J"], rel=1e-9
    )

    trace = pd.read_csv(tmp_path / "trace.csv")
    assert trace.columns[0] == "source"
    assert set(trace["source"]) == {"ao", "sca"}

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["schema"] == MANIFEST_SCHEMA
    assert manifest["command"] == "solve"
    assert manifest["settings"] == {"design": "straight", "solver": "CLARABEL"}
    for name in ("result.json", "energy.csv", "trace.csv"):
        assert manifest["artifacts"][name] == file_sha256(tmp_path / name)


@pytest.mark.timeout(3600)
def test_solve_deterministic(tmp_path: Path) -> None:
    assert _solve(tmp_path / "a") == 0
    assert _solve(tmp_path / "b", "--jobs", "2") == 0
    for name in ("result.json", "energy.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.timeout(1800)
def test_solve_then_report(tmp_path: Path) -> None:
    assert _solve(tmp_path) == 0
    assert main(["report", str(tmp_path)]) == 0
    frame = pd.read_csv(tmp_path / "trajectory.csv")
    assert len(frame) == 7
    assert frame["x_m"].iloc[0] == pytest.approx(-50.0)
    assert frame["x_m"].iloc[-1] == pytest.approx(50.0)
    assert (tmp_path / "trajectory.svg").is_file()


@pytest.mark.timeout(3600)
def test_solve_log_every(tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
    def count(event: str) -> int:
        return sum(f"[{event}]" in record.getMessage() for record in caplog.records)

    with caplog.at_level(logging.INFO, logger="covisac"):
        assert _solve(tmp_path / "every", "--log-every", "1") == 0
    every = count("sca_iteration")
    assert every > 0
    assert count("ao_round") > 0

    caplog.clear()
    with caplog.at_level(logging.INFO, logger="covisac"):
        assert _solve(tmp_path / "thinned", "--log-every", "3") == 0
    assert count("sca_iteration") == math.ceil(every / 3)
    assert count("ao_round") > 0


###########################
#     Tests for sweep     #
###########################


@pytest.mark.timeout(3600)
def test_sweep_writes_table(tmp_path: Path) -> None:
    args = ["--output-dir", str(tmp_path), "sweep", "desk", "--param", "p_uav_max"]
    assert main([*args, "--values", "0.01", "0.02", "--design", "straight"]) == 0
    table = pd.read_csv(tmp_path / "sweep.csv")
    assert table["value"].tolist() == [0.01, 0.02]
    assert (tmp_path / "result_000.json").is_file()
    assert (tmp_path / "result_001.json").is_file()
    assert main(["report", str(tmp_path)]) == 0
    assert (tmp_path / "energy_vs_p_uav_max.csv").is_file()
