"""
Report writers
CSV tables, JSON summaries and the optional Excel workbook, all written
atomically into the run's output directory
"""
import json
import logging
import math
import os
import tempfile
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from config import Config

logger = logging.getLogger(__name__)


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf' and 'nan'"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    return obj


def _atomic_write(path: str, write) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f'.{os.path.basename(path)}.', suffix='.tmp')
    try:
        os.close(fd)
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def write_text(path: str, text: str) -> str:
    def write(tmp):
        with open(tmp, 'w', encoding='utf-8', newline='\n') as fh:
            fh.write(text)
    return _atomic_write(path, write)


def write_bytes(path: str, payload: bytes) -> str:
    def write(tmp):
        with open(tmp, 'wb') as fh:
            fh.write(payload)
    return _atomic_write(path, write)


def frame_to_csv(frame: pd.DataFrame, index: bool = False) -> str:
    return frame.to_csv(index=index, float_format='%.17g', lineterminator='\n')


def write_csv(path: str, frame: pd.DataFrame, index: bool = False) -> str:
    return write_text(path, frame_to_csv(frame, index))


def write_json(path: str, payload: Dict[str, Any]) -> str:
    document = {'schema_version': Config.SCHEMA_VERSION}
    document.update(payload)
    return write_text(path, json.dumps(to_jsonable(document), sort_keys=True, indent=2) + '\n')


def write_workbook(path: str, frames: Dict[str, pd.DataFrame]) -> str:
    """One sheet per table, the way the review exports were bundled"""
    def write(tmp):
        with pd.ExcelWriter(tmp, engine='openpyxl') as writer:
            for name, frame in frames.items():
                frame.to_excel(writer, sheet_name=name[:31], index=frame.index.name is not None)
    return _atomic_write(path, write)


class RunArtifacts:
    """Collects what one subcommand writes and remembers the tables for the workbook"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        self.paths: List[str] = []
        self.tables: Dict[str, pd.DataFrame] = {}

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def csv(self, name: str, frame: pd.DataFrame, index: bool = False) -> str:
        written = write_csv(self.path(name), frame, index)
        self.tables[os.path.splitext(name)[0]] = frame
        self.paths.append(written)
        logger.debug(f"Wrote {written} ({len(frame)} rows)")
        return written

    def json(self, name: str, payload: Dict[str, Any]) -> str:
        written = write_json(self.path(name), payload)
        self.paths.append(written)
        return written

    def text(self, name: str, text: str) -> str:
        written = write_text(self.path(name), text)
        self.paths.append(written)
        return written

    def binary(self, name: str, payload: bytes) -> str:
        written = write_bytes(self.path(name), payload)
        self.paths.append(written)
        return written

    def workbook(self, name: str):
        if not self.tables:
            logger.warning("No tables were produced; workbook skipped")
            return None
        written = write_workbook(self.path(name), self.tables)
        self.paths.append(written)
        logger.info(f"Workbook with {len(self.tables)} sheets written to {written}")
        return written
