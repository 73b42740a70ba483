"""
Figure Export.

Interactive plotly line charts of run series, written as standalone HTML files
next to the CSV tables they are drawn from.
"""

import logging
from pathlib import Path

import pandas as pd
import plotly.express as px
from plotly.subplots import make_subplots

logger = logging.getLogger(__name__)


def line_figure(df: pd.DataFrame, columns: list, title: str, yaxis_title: str, x: str = "cycle"):
    """
    Build a line chart of `columns` against `x`.

    Parameters:
        df (pd.DataFrame): Table holding `x` and every plotted column.
        columns (list): Columns drawn as separate lines.
        title (str): Figure title.
        yaxis_title (str): Label of the value axis.
        x (str): Column on the horizontal axis.

    Returns:
        plotly.graph_objects.Figure: The chart.
    """
    fig = px.line(df, x=x, y=columns, title=title)
    fig.update_layout(xaxis_title="Engine cycle", yaxis_title=yaxis_title)
    return fig


def stacked_figure(df: pd.DataFrame, panels: dict, title: str, x: str = "cycle"):
    """One subplot per panel; `panels` maps a panel title to its columns."""
    fig = make_subplots(
        rows=len(panels), cols=1, shared_xaxes=True, subplot_titles=list(panels)
    )
    for row, columns in enumerate(panels.values(), start=1):
        for trace in line_figure(df, columns, "", "", x).data:
            fig.add_trace(trace, row=row, col=1)
    fig.update_layout(title=title, height=280 * len(panels))
    fig.update_xaxes(title_text="Engine cycle", row=len(panels), col=1)
    return fig


def write_figure(fig, output_path) -> Path:
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(path, include_plotlyjs="cdn")
    logger.info("Figure written to %s", path)
    return path
