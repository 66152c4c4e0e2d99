import csv
import dataclasses
import json
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from sdeoperator.utils.errors import DatasetIOError, FormatError

METADATA_PREFIX = "# "


def format_float(value: float) -> str:
    """Shortest text that parses back to the identical double."""
    return repr(float(value))


class ReportFormatter:
    """Standardized writer/reader for JSON documents and delimited tables."""

    @staticmethod
    def _make_json_serializable(obj):
        """Convert numpy values and dataclasses to JSON-serializable values."""
        if isinstance(obj, dict):
            return {str(key): ReportFormatter._make_json_serializable(value) for key, value in obj.items()}
        elif isinstance(obj, (list, tuple)):
            return [ReportFormatter._make_json_serializable(item) for item in obj]
        elif isinstance(obj, np.ndarray):
            return ReportFormatter._make_json_serializable(obj.tolist())
        elif isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.bool_):
            return bool(obj)
        elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return ReportFormatter._make_json_serializable(dataclasses.asdict(obj))
        elif hasattr(obj, "model_dump"):
            return ReportFormatter._make_json_serializable(obj.model_dump(mode="json"))
        else:
            return obj

    @staticmethod
    def provenance(config_hash: Optional[str] = None, **extra: Any) -> Dict[str, Any]:
        """Metadata every emitted file carries: tool version and config hash."""
        from sdeoperator import __version__
        meta = {"tool": "sdeoperator", "tool_version": __version__, "config_hash": config_hash}
        meta.update(extra)
        return ReportFormatter._make_json_serializable(meta)

    @staticmethod
    def metadata_line(metadata: Dict[str, Any]) -> str:
        payload = json.dumps(ReportFormatter._make_json_serializable(metadata), sort_keys=True)
        return f"{METADATA_PREFIX}{payload}\n"

    @staticmethod
    def parse_metadata_line(line: str, path: str) -> Dict[str, Any]:
        if not line.startswith(METADATA_PREFIX):
            raise FormatError("missing '# {...}' metadata line", path=path, row=1)
        try:
            metadata = json.loads(line[len(METADATA_PREFIX):])
        except json.JSONDecodeError as exc:
            raise FormatError(f"metadata line is not valid JSON ({exc.msg})", path=path, row=1)
        if not isinstance(metadata, dict):
            raise FormatError("metadata line must hold a JSON object", path=path, row=1)
        return metadata

    @staticmethod
    def write_table(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
                    metadata: Optional[Dict[str, Any]] = None) -> str:
        """Write a comma-delimited table preceded by its metadata line."""
        _ensure_parent(path)
        try:
            with open(path, "w", newline="") as handle:
                handle.write(ReportFormatter.metadata_line(metadata or {}))
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([_cell(value) for value in row])
        except OSError as exc:
            raise DatasetIOError(f"Cannot write {path}: {exc.strerror or exc}")
        return path

    @staticmethod
    def read_table(path: str) -> Tuple[Dict[str, Any], List[str], List[List[str]]]:
        """Read a table written by write_table; cells are returned as text."""
        try:
            with open(path, newline="") as handle:
                metadata = ReportFormatter.parse_metadata_line(handle.readline(), path)
                reader = csv.reader(handle)
                try:
                    columns = next(reader)
                except StopIteration:
                    raise FormatError("missing column header", path=path, row=2)
                rows = list(reader)
        except OSError as exc:
            raise DatasetIOError(f"Cannot read {path}: {exc.strerror or exc}")
        for offset, row in enumerate(rows):
            if len(row) != len(columns):
                raise FormatError(
                    f"expected {len(columns)} columns, found {len(row)}", path=path, row=offset + 3)
        return metadata, columns, rows

    @staticmethod
    def write_json(path: str, document: Dict[str, Any]) -> str:
        _ensure_parent(path)
        try:
            with open(path, "w") as handle:
                json.dump(ReportFormatter._make_json_serializable(document), handle,
                          indent=1, sort_keys=True, allow_nan=False)
                handle.write("\n")
        except OSError as exc:
            raise DatasetIOError(f"Cannot write {path}: {exc.strerror or exc}")
        except ValueError as exc:
            raise DatasetIOError(f"Cannot serialize {path}: {exc}")
        return path

    @staticmethod
    def read_json(path: str) -> Dict[str, Any]:
        try:
            with open(path) as handle:
                document = json.load(handle)
        except OSError as exc:
            raise DatasetIOError(f"Cannot read {path}: {exc.strerror or exc}")
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc.msg})", path=path, row=exc.lineno)
        if not isinstance(document, dict):
            raise FormatError("top level must be a JSON object", path=path)
        return document


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"Cannot create directory {parent}: {exc.strerror or exc}")
