"""
Excel Report Workbook.

Writes the figure-analogue tables of a run into one styled workbook with
`openpyxl`: a summary sheet first, then one sheet per table. Header and value
styles are defined once on template cells of a scratch sheet, copied onto
every written cell, and the scratch sheet is removed before saving.

Functions:
- copy_cell_style(source_cell, target_cell): copies font, border, fill, number
  format and alignment from one cell to another.
- write_frame(ws, df, header_cell, value_cell): writes a DataFrame with styles.
- write_report_workbook(summary, sheets, output_path): builds and saves the
  workbook.
"""

import logging
import math
from copy import copy
from pathlib import Path

import openpyxl
import pandas as pd
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

logger = logging.getLogger(__name__)

HEADER_FILL = "1F4E78"
VALUE_NUMBER_FORMAT = "0.0000"
# openpyxl limits sheet titles to 31 characters
MAX_SHEET_TITLE = 31
COLUMN_WIDTH = 14


def copy_cell_style(source_cell, target_cell):
    """
    Copy the style of a source cell to a target cell.

    Parameters:
        source_cell (openpyxl.cell.Cell): The cell from which to copy the style.
        target_cell (openpyxl.cell.Cell): The cell to which the style is copied.
    """
    try:
        target_cell.font = copy(source_cell.font)
        target_cell.border = copy(source_cell.border)
        target_cell.fill = copy(source_cell.fill)
        target_cell.number_format = source_cell.number_format
        target_cell.alignment = copy(source_cell.alignment)
    except AttributeError as e:
        logger.warning("Unable to copy some cell properties: %s", e)


def _style_templates(ws):
    """Set up the header (A1) and value (A2) template cells on `ws`."""
    thin = Side(style="thin", color="999999")
    header = ws.cell(row=1, column=1)
    header.font = Font(bold=True, color="FFFFFF")
    header.fill = PatternFill("solid", fgColor=HEADER_FILL)
    header.border = Border(bottom=thin)
    header.alignment = Alignment(horizontal="center")
    value = ws.cell(row=2, column=1)
    value.border = Border(bottom=thin)
    value.number_format = VALUE_NUMBER_FORMAT
    return header, value


def write_frame(ws, df, header_cell, value_cell):
    """
    Write a DataFrame with a styled header row and styled numeric cells.

    Parameters:
        ws (openpyxl.worksheet.worksheet.Worksheet): Target sheet.
        df (pd.DataFrame): Table to write, index ignored.
        header_cell (openpyxl.cell.Cell): Style template of header cells.
        value_cell (openpyxl.cell.Cell): Style template of numeric cells.
    """
    for col, name in enumerate(df.columns, start=1):
        cell = ws.cell(row=1, column=col, value=str(name))
        copy_cell_style(header_cell, cell)
        ws.column_dimensions[get_column_letter(col)].width = max(COLUMN_WIDTH, len(str(name)) + 2)
    for row, values in enumerate(df.itertuples(index=False), start=2):
        for col, value in enumerate(values, start=1):
            if hasattr(value, "item"):
                value = value.item()
            if isinstance(value, float) and math.isnan(value):
                value = None
            cell = ws.cell(row=row, column=col, value=value)
            if isinstance(value, float):
                copy_cell_style(value_cell, cell)
    ws.freeze_panes = "A2"


def write_report_workbook(summary: pd.DataFrame, sheets: dict, output_path) -> Path:
    """
    Create the report workbook.

    Parameters:
        summary (pd.DataFrame): Metric/value table for the first sheet.
        sheets (dict): Sheet title to DataFrame, written in order.
        output_path (str | Path): Destination `.xlsx` file.

    Returns:
        Path: The saved workbook path.
    """
    wb = openpyxl.Workbook()
    ws = wb.active
    ws.title = "summary"
    templates = wb.create_sheet(title="styles")
    header_cell, value_cell = _style_templates(templates)
    write_frame(ws, summary, header_cell, value_cell)
    for title, df in sheets.items():
        sheet = wb.create_sheet(title=title[:MAX_SHEET_TITLE])
        write_frame(sheet, df, header_cell, value_cell)
    wb.remove(templates)
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wb.save(path)
    wb.close()
    logger.info("Report workbook written to %s", path)
    return path
