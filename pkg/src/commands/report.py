"""
Report Stage.

Turns a run directory (in-process `run_log.csv` or split-node `plant_log.csv`)
into plot-ready tables, one CSV per figure analogue:

- tracking.csv: measured IMEP/CA50/NOx/MPRR against the references
- actuations.csv: fuel and water injection durations and NVO
- lstm_states.csv: LSTM cell and hidden states (in-process runs only)
- timing.csv: per-cycle solve time, plus timing_summary.csv

together with `report.xlsx` and one HTML chart per table.
"""

import logging
from pathlib import Path

import pandas as pd

from commands.closed_loop import STATE_COLUMNS, summarise_run
from commands.utils.artifacts import CLOSED_LOOP_DIR, PLANT_LOG_FILE, REPORT_DIR, RUN_LOG_FILE, require
from commands.utils.excel import write_report_workbook
from commands.utils.plotting import line_figure, stacked_figure, write_figure
from lstm_nmpc.config import ExperimentConfig, save_config
from lstm_nmpc.domain import ACTUATOR_NAMES, OUTPUT_NAMES
from lstm_nmpc.errors import MissingArtifactError
from lstm_nmpc.rt_bridge.timing import collect_timing

logger = logging.getLogger(__name__)

TIMING_COLUMNS = ["solve_time_us", "round_trip_ms", "jitter_ms", "status", "miss"]


def _read_run_log(run_dir: Path) -> pd.DataFrame:
    for name in (RUN_LOG_FILE, PLANT_LOG_FILE):
        if (run_dir / name).is_file():
            return pd.read_csv(run_dir / name)
    raise MissingArtifactError(run_dir / RUN_LOG_FILE, "closed-loop")


def figure_tables(log: pd.DataFrame) -> dict:
    """Split a run log into the per-figure tables."""
    tables = {
        "tracking": log[["cycle", *OUTPUT_NAMES, "r_imep", "r_ca50"]],
        "actuations": log[["cycle", *ACTUATOR_NAMES]],
    }
    if set(STATE_COLUMNS) <= set(log.columns):
        tables["lstm_states"] = log[["cycle", *STATE_COLUMNS]]
    else:
        logger.warning("Run log has no LSTM state columns; lstm_states.csv is skipped")
    tables["timing"] = log[["cycle", *[c for c in TIMING_COLUMNS if c in log.columns]]]
    return tables


def build_report(run_dir, config: ExperimentConfig) -> dict:
    """
    Write every report artifact for one run directory.

    Returns:
        dict: Artifact name to written path.
    """
    run_dir = require(Path(run_dir), "closed-loop")
    log = _read_run_log(run_dir)
    output_dir = run_dir / REPORT_DIR
    output_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, output_dir)

    tables = figure_tables(log)
    written = {}
    for name, table in tables.items():
        written[name] = output_dir / f"{name}.csv"
        table.to_csv(written[name], index=False)
    stats = collect_timing(log, config.clock.budget_ms)
    written["timing_summary"] = stats.to_csv(output_dir / "timing_summary.csv")

    summary = summarise_run(
        log, config.bounds, config.closed_loop.warmup_cycles, config.clock.budget_ms,
        config.plant.noise_imep,
    ).to_frame()
    written["workbook"] = write_report_workbook(summary, tables, output_dir / "report.xlsx")

    figures = {
        "tracking": stacked_figure(
            tables["tracking"],
            {"IMEP [bar]": ["imep", "r_imep"], "CA50 [CAD aTDC]": ["ca50", "r_ca50"],
             "NOx [ppm]": ["nox"], "MPRR [bar/CAD]": ["mprr"]},
            "Reference tracking",
        ),
        "actuations": stacked_figure(
            tables["actuations"],
            {"DOI fuel [ms]": ["doi_fuel"], "DOI water [ms]": ["doi_water"], "NVO [CAD]": ["nvo"]},
            "Actuations",
        ),
        "timing": line_figure(tables["timing"], ["solve_time_us"], "Solve time per cycle", "us"),
    }
    if "lstm_states" in tables:
        figures["lstm_states"] = line_figure(
            tables["lstm_states"], STATE_COLUMNS, "LSTM cell and hidden states", "state"
        )
    for name, fig in figures.items():
        written[f"{name}_html"] = write_figure(fig, output_dir / f"{name}.html")
    return written


def main(config: ExperimentConfig, args=None):
    run_dir = getattr(args, "run_dir", None) or Path(config.output_dir) / CLOSED_LOOP_DIR
    written = build_report(run_dir, config)
    for name, path in written.items():
        print(f"{name}: {path}")
    return written
