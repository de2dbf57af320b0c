"""
CSV artifacts, run manifests and console tables.

Every artifact is written as <output_dir>/<run_id>_<quantity>.csv with a
header row, comma separator, UTF-8, LF line endings and floats at 17
significant digits, so identical runs produce byte-identical files.
"""

import json
import logging
import os
import platform
from datetime import datetime, timezone
from importlib import metadata
from typing import Any, Dict, Iterable, List, Optional

import pandas as pd
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from config import OutputConfig
from errors import ConfigError

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "rich", "pydantic", "python-dotenv")


def ensure_output_dir(output_dir: str) -> str:
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {output_dir!r}: {e}") from e
    if not os.access(output_dir, os.W_OK):
        raise ConfigError(f"output directory {output_dir!r} is not writable")
    return output_dir


def artifact_path(output_dir: str, run_id: str, quantity: str, extension: str = "csv") -> str:
    return os.path.join(output_dir, f"{run_id}_{quantity}.{extension}")


def write_csv(df: pd.DataFrame, output_dir: str, run_id: str, quantity: str) -> str:
    """Save one table as <run_id>_<quantity>.csv"""
    ensure_output_dir(output_dir)
    filename = artifact_path(output_dir, run_id, quantity)
    try:
        df.to_csv(
            filename,
            index=False,
            float_format=OutputConfig.FLOAT_FORMAT,
            encoding=OutputConfig.CSV_ENCODING,
            lineterminator=OutputConfig.LINE_TERMINATOR,
        )
    except OSError as e:
        raise ConfigError(f"cannot write {filename!r}: {e}") from e
    logger.info("Saved %s to %s", quantity, filename)
    return filename


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def write_manifest(output_dir: str, run_id: str, subcommand: str, config: Dict[str, Any],
                   seed: Optional[int], wall_time: float, artifacts: Iterable[str]) -> str:
    """
    Write <run_id>_run_manifest.json: the validated configuration echo, seed,
    package versions, wall time and the artifact list. Rerunning the
    subcommand with the echoed configuration reproduces the artifacts.
    """
    ensure_output_dir(output_dir)
    manifest = {
        "run_id": run_id,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "versions": package_versions(),
        "wall_time_seconds": wall_time,
        "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "artifacts": [os.path.basename(a) for a in artifacts],
    }
    filename = artifact_path(output_dir, run_id, OutputConfig.MANIFEST_NAME, "json")
    try:
        with open(filename, "w", encoding=OutputConfig.CSV_ENCODING, newline="\n") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, default=str)
            f.write("\n")
    except OSError as e:
        raise ConfigError(f"cannot write {filename!r}: {e}") from e
    return filename


class ResultConsole:
    """Rich console output for run results"""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()
        self.digits = OutputConfig.CONSOLE_DIGITS

    def status(self, message: str):
        self.console.print(message, markup=False)

    def fmt(self, value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.{self.digits}g}"
        return str(value)

    def create_table(self, df: pd.DataFrame, title: str, max_rows: int = 20) -> Table:
        """Render the head of a result table"""
        table = Table(title=title, show_header=True, header_style="bold magenta")
        for i, column in enumerate(df.columns):
            table.add_column(str(column), justify="left" if i == 0 else "right",
                             style="cyan" if i == 0 else "white", no_wrap=True)
        for row in df.head(max_rows).itertuples(index=False):
            table.add_row(*(self.fmt(v) for v in row))
        if len(df) > max_rows:
            table.caption = f"{len(df) - max_rows} more rows in the CSV"
        return table

    def show_table(self, df: pd.DataFrame, title: str, max_rows: int = 20):
        self.console.print(self.create_table(df, title, max_rows))

    def show_artifacts(self, paths: List[str], wall_time: float):
        lines = "\n".join(f"✅ {p}" for p in paths)
        self.console.print(Panel(f"{lines}\n⏱️ {wall_time:.2f} s", title="📁 Artifacts", border_style="green"))

    def show_warnings(self, warnings: List[str]):
        for w in warnings:
            self.console.print(f"⚠️ {w}", markup=False)
