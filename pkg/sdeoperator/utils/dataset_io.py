"""
Dataset persistence
===================
Plain-text, diffable storage for PathDataset. See docs/file_formats.md for a
byte-level example.

Layout:
    line 1   ``# {json}`` metadata: format, version, t0, h, M, model, seeds, ...
    line 2   ``path_id,k,t_k,B,X``
    then     one row per (path, time point), paths in order, k ascending

Floats are written in shortest round-trip form, so write followed by read
reproduces every value bit for bit.
"""

import logging
from typing import Any, Dict, List, Optional

import numpy as np

from sdeoperator.utils.errors import FormatError, ValidationError
from sdeoperator.utils.paths import BrownianPath, PathDataset, SolutionPath, TimeGrid
from sdeoperator.utils.report_formatter import ReportFormatter

logger = logging.getLogger(__name__)

DATASET_FORMAT = "sdeoperator-dataset"
DATASET_VERSION = 1
DATASET_COLUMNS = ["path_id", "k", "t_k", "B", "X"]


def write_dataset(dataset: PathDataset, path: str,
                  provenance: Optional[Dict[str, Any]] = None) -> str:
    """Write ``dataset`` to ``path`` and return the path."""
    grid = dataset.grid
    metadata = dict(dataset.metadata)
    metadata.update(provenance or {})
    metadata.update({
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "t0": grid.t0,
        "h": grid.h,
        "M": grid.M,
        "n_paths": len(dataset),
        "seeds": dataset.seeds,
    })
    times = grid.times

    def rows():
        for path_id, (bpath, xpath) in enumerate(zip(dataset.brownian, dataset.solutions)):
            for k in range(grid.M):
                yield (path_id, k, float(times[k]), float(bpath.values[k]), float(xpath.values[k]))

    ReportFormatter.write_table(path, DATASET_COLUMNS, rows(), metadata)
    logger.info("Wrote %d paths (M=%d) to %s", len(dataset), grid.M, path)
    return path


def read_dataset(path: str) -> PathDataset:
    """Read a dataset written by write_dataset, validating every row."""
    metadata, columns, rows = ReportFormatter.read_table(path)
    if metadata.get("format") != DATASET_FORMAT:
        raise FormatError(f"not a {DATASET_FORMAT} file", path=path, row=1)
    if metadata.get("version") != DATASET_VERSION:
        raise FormatError(
            f"unsupported dataset version {metadata.get('version')} "
            f"(expected {DATASET_VERSION})", path=path, row=1)
    if columns != DATASET_COLUMNS:
        raise FormatError(f"expected columns {DATASET_COLUMNS}, found {columns}", path=path, row=2)

    try:
        grid = TimeGrid(float(metadata["t0"]), float(metadata["h"]), int(metadata["M"]))
        n_paths = int(metadata["n_paths"])
        seeds = [int(seed) for seed in metadata["seeds"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"incomplete metadata ({exc})", path=path, row=1)
    if len(seeds) != n_paths:
        raise FormatError(f"{len(seeds)} seeds for {n_paths} paths", path=path, row=1)
    if len(rows) != n_paths * grid.M:
        raise FormatError(
            f"expected {n_paths * grid.M} data rows, found {len(rows)}", path=path, row=len(rows) + 2)

    times = grid.times
    b_values = np.empty((n_paths, grid.M))
    x_values = np.empty((n_paths, grid.M))
    for offset, row in enumerate(rows):
        line = offset + 3
        try:
            path_id, k = int(row[0]), int(row[1])
            t_k, b_k, x_k = float(row[2]), float(row[3]), float(row[4])
        except ValueError as exc:
            raise FormatError(f"unparseable value ({exc})", path=path, row=line)
        if path_id != offset // grid.M or k != offset % grid.M:
            raise FormatError(
                f"rows out of order: got (path_id={path_id}, k={k})", path=path, row=line)
        if t_k != times[k]:
            raise ValidationError(
                f"{path}, row {line}: t_k={t_k} does not match grid time {times[k]}")
        b_values[path_id, k] = b_k
        x_values[path_id, k] = x_k

    brownian: List[BrownianPath] = []
    solutions: List[SolutionPath] = []
    for index in range(n_paths):
        brownian.append(BrownianPath(grid=grid, values=b_values[index], seed=seeds[index]))
        solutions.append(SolutionPath(grid=grid, values=x_values[index], x0=x_values[index, 0]))

    extra = {key: value for key, value in metadata.items()
             if key not in ("format", "version", "t0", "h", "M", "n_paths", "seeds")}
    return PathDataset(grid=grid, brownian=brownian, solutions=solutions, metadata=extra)
