from typing import Any, Dict, List

import os

from nonlocal_cauchy import utils
from nonlocal_cauchy.errors import ConfigurationError

SUMMARY_COLUMNS = ["report", "kind", "item", "passed", "detail"]


def _rows(path: str, report: Dict[str, Any]) -> List[List[str]]:
    kind = str(report.get("kind", "unknown"))
    body = report.get("body", {})
    if kind == "verify":
        return [
            [path, kind, c["criterion"], str(bool(c["passed"])), c.get("error", "")]
            for c in body.get("criteria", [])
        ]
    if kind == "check-kernel":
        rows = []
        for c in body.get("assumptions", {}).get("clauses", []):
            rows.append([path, kind, c["clause"], str(bool(c["passed"])), str(c["value"])])
        for c in (body.get("lower_order") or {}).get("assumptions", {}).get("clauses", []):
            rows.append([path, kind, c["clause"], str(bool(c["passed"])), str(c["value"])])
        return rows
    if kind.startswith("solve"):
        return [
            [
                path,
                kind,
                f"forcing-{s['forcing_index']}",
                "",
                f"residual={s['defs_residual']}",
            ]
            for s in body.get("solutions", [])
        ]
    if kind == "simulate":
        rows = []
        for j, e in enumerate(body.get("estimates", [])):
            detail = f"mc={e['value']} se={e['standard_error']}"
            if "pde" in e:
                detail += f" pde={e['pde']}"
            rows.append([path, kind, f"probe-{j}", "", detail])
        return rows
    return [[path, kind, "", "", ""]]


def report(output_dir, verbose=False) -> List[List[str]]:
    """
    Collect every JSON report below ``output_dir`` into ``summary.csv``
    and return its rows.
    """
    utils.config_logging(verbose)
    logger = utils.get_script_logger(__file__)

    if not os.path.isdir(output_dir):
        raise ConfigurationError(f"report: {output_dir} is not a directory")
    rows: List[List[str]] = []
    for path in utils.list_reports(output_dir):
        data = utils.read_json(path)
        if not isinstance(data, dict) or "kind" not in data or "body" not in data:
            continue
        for row in _rows(os.path.relpath(path, output_dir), data):
            rows.append([str(cell).replace(",", ";") for cell in row])
    if not rows:
        raise ConfigurationError(f"report: no reports found in {output_dir}")
    logger.info(f"Collected {len(rows)} summary rows from {output_dir}")
    utils.write_csv(os.path.join(output_dir, "summary.csv"), SUMMARY_COLUMNS, rows)
    return rows
