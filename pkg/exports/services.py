import csv
import json
import logging
import math
from pathlib import Path

import numpy as np
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SUMMARY_NAME = "summary.json"
WORKBOOK_NAME = "report.xlsx"

THIN_BORDER = Border(
    left=Side(style="thin", color="D9D9D9"),
    right=Side(style="thin", color="D9D9D9"),
    top=Side(style="thin", color="D9D9D9"),
    bottom=Side(style="thin", color="D9D9D9"),
)


def plain(value):
    """Приводит значения отчёта к типам JSON; inf и nan становятся null."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [plain(v) for v in value.tolist()]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (complex, np.complexfloating)):
        return [plain(value.real), plain(value.imag)]
    return value


def _cell(value) -> str:
    value = plain(value)
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return " ".join(_cell(v) for v in value)
    return str(value)


def write_summary_json(summary: dict, out_dir: Path) -> Path:
    """summary.json: ключи отсортированы, без отметок времени."""
    path = Path(out_dir) / SUMMARY_NAME
    text = json.dumps(plain(summary), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_csv_tables(tables: dict[str, list[dict]], out_dir: Path) -> list[Path]:
    paths = []
    for name, rows in sorted(tables.items()):
        path = Path(out_dir) / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if rows:
                header = list(rows[0].keys())
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_cell(row.get(col)) for col in header])
        paths.append(path)
    return paths


# -------------------------
# Книга Excel
# -------------------------

def _safe_sheet_title(name: str) -> str:
    invalid = ['\\', '/', '*', '[', ']', ':', '?']
    for ch in invalid:
        name = name.replace(ch, " ")
    return name[:31] or "Лист"


def _apply_header_style(cell):
    cell.font = Font(bold=True, color="FFFFFF")
    cell.fill = PatternFill("solid", fgColor="4472C4")
    cell.alignment = Alignment(horizontal="center", vertical="center", wrap_text=True)
    cell.border = THIN_BORDER


def _apply_body_style(cell, failed: bool = False):
    cell.alignment = Alignment(vertical="top", wrap_text=True)
    cell.border = THIN_BORDER
    if failed:
        cell.fill = PatternFill("solid", fgColor="F8CBAD")


def _set_column_widths(ws, widths: list[int]):
    for col_idx, width in enumerate(widths, start=1):
        ws.column_dimensions[get_column_letter(col_idx)].width = width


def _xlsx_value(value):
    value = plain(value)
    if isinstance(value, list):
        return _cell(value)
    return value


def build_report_workbook(summary: dict, tables: dict[str, list[dict]]) -> Workbook:
    wb = Workbook()
    default_ws = wb.active
    wb.remove(default_ws)

    ws = wb.create_sheet("Критерии")
    ws.append(["Критерий", "Значение", "Граница", "Условие", "Пройден", "Свойство"])
    for cell in ws[1]:
        _apply_header_style(cell)
    for c in summary.get("criteria", []):
        ws.append([c["name"], _xlsx_value(c.get("value")), _xlsx_value(c.get("bound")),
                   c.get("relation", ""), "да" if c["passed"] else "нет", c.get("anchor", "")])
        for cell in ws[ws.max_row]:
            _apply_body_style(cell, failed=not c["passed"])
    ws.freeze_panes = "A2"
    _set_column_widths(ws, [36, 18, 18, 10, 10, 40])

    ws = wb.create_sheet("Метрики")
    ws.append(["Метрика", "Значение", "Свойство"])
    for cell in ws[1]:
        _apply_header_style(cell)
    for m in summary.get("metrics", []):
        ws.append([m["name"], _xlsx_value(m.get("value")), m.get("anchor", "")])
        for cell in ws[ws.max_row]:
            _apply_body_style(cell)
    ws.freeze_panes = "A2"
    _set_column_widths(ws, [36, 24, 40])

    for name, rows in sorted(tables.items()):
        ws = wb.create_sheet(_safe_sheet_title(name))
        if not rows:
            ws.append(["Нет строк"])
            continue
        header = list(rows[0].keys())
        ws.append(header)
        for cell in ws[1]:
            _apply_header_style(cell)
        for row in rows:
            ws.append([_xlsx_value(row.get(col)) for col in header])
        for row in ws.iter_rows(min_row=2):
            for cell in row:
                _apply_body_style(cell)
        ws.freeze_panes = "A2"
        _set_column_widths(ws, [16] * len(header))

    return wb


def emit_report(summary: dict, tables: dict[str, list[dict]], out_dir: Path, xlsx: bool = False) -> list[Path]:
    """Пишет summary.json, CSV-таблицы и, по запросу, книгу Excel в out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [write_summary_json(summary, out_dir)]
    paths += write_csv_tables(tables, out_dir)
    if xlsx:
        path = out_dir / WORKBOOK_NAME
        build_report_workbook(summary, tables).save(path)
        paths.append(path)
    logger.info("Отчёт %s: %d файлов в %s", summary.get("command"), len(paths), out_dir)
    return paths
