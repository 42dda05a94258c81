"""
Report assembly for the ion-saturation commands.

A Report collects named result sections and echoes the resolved configuration,
so every emitted file is reproducible from its own contents. It renders as a
JSON document or as flat `key,value` CSV rows.
"""
import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

FORMATS = ("json", "csv")


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats to JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _flatten(prefix: str, value: Any, rows: list[tuple[str, Any]]) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, rows)
    else:
        rows.append((prefix, "" if value is None else value))


class Report:
    """Builds the output document of one command."""

    def __init__(self, title: str, config: dict[str, Any] | None = None):
        self.title = title
        self.config = config or {}
        self.sections: dict[str, dict[str, Any]] = {}
        self.files: list[str] = []

    def add_section(self, name: str, data: dict[str, Any]) -> "Report":
        """Add or extend a named result section."""
        self.sections.setdefault(name, {}).update(_plain(data))
        return self

    def add_file(self, path: str | Path) -> "Report":
        self.files.append(str(path))
        return self

    def get(self, dotted: str, default: Any = None) -> Any:
        """Look up a value as 'section.key[.subkey...]'."""
        node: Any = self.sections
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def to_dict(self) -> dict[str, Any]:
        document: dict[str, Any] = {"command": self.title}
        document.update(self.sections)
        if self.files:
            document["files"] = list(self.files)
        document["config"] = _plain(self.config)
        return document

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        rows: list[tuple[str, Any]] = []
        _flatten("", self.to_dict(), rows)
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["key", "value"])
        for key, value in rows:
            writer.writerow([key, json.dumps(value) if isinstance(value, list) else value])
        return buffer.getvalue()

    def render(self, fmt: str = "json") -> str:
        if fmt not in FORMATS:
            raise InvalidInputError(f"unknown format {fmt!r}")
        return self.to_json() if fmt == "json" else self.to_csv()

    def write(self, out_dir: str | Path, fmt: str = "json", stem: str | None = None) -> Path:
        """Write the rendered report to out_dir/<title>_report.<fmt> and return the path."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        name = (stem or f"{self.title}_report").replace(" ", "_")
        path = out / f"{name}.{fmt}"
        path.write_text(self.render(fmt) + ("" if fmt == "csv" else "\n"))
        logger.info(f"Wrote {path}")
        return path
