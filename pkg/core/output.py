"""CSV tables and JSON run manifests.

Every CSV written by a command gets a manifest next to it
(`spectrum.csv` -> `spectrum.manifest.json`) holding the command, its
arguments, the fully resolved configuration, the seed and the code version,
which is enough to regenerate the CSV byte for byte.
"""
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

from core import __version__
from core.config import RunConfig
from core.errors import ConfigError

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"
STDOUT = "-"


@dataclass
class CommandOutput:
    """What a command hands back for writing: the main table plus optional extras"""
    table: pd.DataFrame
    extra_tables: dict = field(default_factory=dict)  # suffix -> DataFrame
    result: dict = None  # JSON payload written as <stem>.result.json


def write_csv(table, path):
    """RFC-4180 style: header row, comma separated, LF endings, '.' decimal point"""
    if path is None or str(path) == STDOUT:
        table.to_csv(sys.stdout, index=False, lineterminator="\n")
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        table.to_csv(fh, index=False, lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(table))
    return path


def read_csv(path):
    return pd.read_csv(path)


def sibling(path, suffix):
    """out/spectrum.csv + '.manifest.json' -> out/spectrum.manifest.json"""
    path = Path(path)
    return path.with_name(path.stem + suffix)


def manifest_path(csv_path):
    return sibling(csv_path, MANIFEST_SUFFIX)


def build_manifest(command, args, config, output):
    return {
        "command": command,
        "version": __version__,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
        "args": args,
        "config": config.to_dict(),
        "config_source": config.source,
        "seed": config.seed,
        "n_shots": config.n_shots,
        "output": str(output) if output is not None else STDOUT,
    }


def write_json(data, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_outputs(command, args, config, output, out_path):
    """Write the CSV, its extras and the manifest; returns the manifest path (None on stdout)"""
    csv_path = write_csv(output.table, out_path)
    if csv_path is None:
        logger.info("CSV written to stdout; no manifest")
        return None
    for suffix, table in output.extra_tables.items():
        write_csv(table, sibling(csv_path, suffix))
    if output.result is not None:
        write_json(output.result, sibling(csv_path, ".result.json"))
    manifest = build_manifest(command, args, config, csv_path)
    return write_json(manifest, manifest_path(csv_path))


def load_manifest(path):
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid manifest ({exc})")
    for key in ("command", "args", "config"):
        if key not in manifest:
            raise ConfigError(f"{path}: manifest lacks {key!r}")
    if manifest.get("version") != __version__:
        logger.warning("manifest written by version %s, running %s; output may differ",
                       manifest.get("version"), __version__)
    return manifest


def config_from_manifest(manifest):
    return RunConfig.from_dict(manifest["config"], source="manifest")
