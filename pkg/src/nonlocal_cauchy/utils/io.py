from typing import Any, Dict, List, Mapping, Optional, Sequence

import json
import math
import os
import time

import numpy as np
from nonlocal_cauchy.utils.utils import get_module_logger, yaml_convert_scalars

# This logger will inherit its settings from the root logger, created in env
logger = get_module_logger(__name__)


def to_builtin(data: Any) -> Any:
    """
    Convert numpy scalars and arrays (possibly nested in mappings and lists)
    into JSON-serializable builtins. Non-finite floats become strings.
    """
    if isinstance(data, Mapping):
        return {str(k): to_builtin(v) for k, v in data.items()}
    if isinstance(data, np.ndarray):
        return [to_builtin(x) for x in data.tolist()]
    if isinstance(data, (list, tuple)):
        return [to_builtin(x) for x in data]
    if isinstance(data, (complex, np.complexfloating)):
        return {"re": to_builtin(data.real), "im": to_builtin(data.imag)}
    if hasattr(data, "item") and not isinstance(data, (str, bytes)):
        data = data.item()
    if isinstance(data, float) and not math.isfinite(data):
        return str(data)
    return data


def make_report(
    kind: str, body: Mapping[str, Any], config: Optional[Mapping] = None
) -> Dict[str, Any]:
    """
    Assemble a report. The ``meta`` block holds everything that changes
    between identical runs; ``body`` and ``config`` are reproducible.
    """
    report = {
        "kind": kind,
        "body": to_builtin(body),
        "meta": {
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        },
    }
    if config is not None:
        report["config"] = to_builtin(yaml_convert_scalars(dict(config)))
    return report


def write_json(file_path: str, data: Mapping[str, Any]) -> str:
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(file_path, "w") as fp:
        json.dump(to_builtin(data), fp, sort_keys=True, indent=2)
        fp.write("\n")
    logger.info(f"wrote {file_path}")
    return file_path


def read_json(file_path: str) -> Dict[str, Any]:
    if not os.path.isfile(file_path):
        raise OSError(f"read_json: invalid file_path: {file_path}")
    with open(file_path) as fp:
        return json.load(fp)


def write_csv(
    file_path: str,
    columns: Sequence[str],
    rows: Sequence[Sequence[Any]],
    fmt: str = "%.17g",
) -> str:
    """
    Write a numeric table with a single header line. Rows may contain
    strings, in which case every cell is written with ``str``.
    """
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    header = ",".join(columns)
    if len(rows) and any(isinstance(x, str) for row in rows for x in row):
        with open(file_path, "w") as fp:
            fp.write(header + "\n")
            for row in rows:
                fp.write(
                    ",".join(
                        x if isinstance(x, str) else fmt % x for x in row
                    )
                    + "\n"
                )
    else:
        data = np.asarray(rows, dtype=float).reshape(-1, len(columns))
        np.savetxt(
            file_path, data, delimiter=",", header=header, comments="", fmt=fmt
        )
    logger.info(f"wrote {file_path}")
    return file_path


def read_csv(file_path: str) -> Dict[str, np.ndarray]:
    with open(file_path) as fp:
        columns = fp.readline().strip().split(",")
    data = np.loadtxt(file_path, delimiter=",", skiprows=1, ndmin=2)
    return {c: data[:, i] for i, c in enumerate(columns)}


def list_reports(output_dir: str) -> List[str]:
    paths = []
    for root, _, files in os.walk(output_dir):
        for name in files:
            if name.endswith(".json"):
                paths.append(os.path.join(root, name))
    return sorted(paths)
