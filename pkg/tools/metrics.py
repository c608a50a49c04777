# tools/metrics.py
from __future__ import annotations

import json
import logging
import math
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd
import torch

from tools.config import Config

logger = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "seed",
    "episode",
    "env_steps",
    "controller",
    "train_return",
    "length",
    "iql_loss",
    "central_loss",
    "bonus_mean",
    "bonus_max",
    "bonus_clamps",
    "epsilon",
    "test_return_mean",
    "test_return_stderr",
]

PACKAGE = "icql-lab"
FALLBACK_VERSION = "0.1.0"


def code_version() -> str:
    try:
        return metadata.version(PACKAGE)
    except metadata.PackageNotFoundError:
        return FALLBACK_VERSION


def seed_csv(output_dir: str | Path, seed: int) -> Path:
    return Path(output_dir) / f"seed_{seed}.csv"


class MetricsWriter:
    """Append-only per-seed CSV writer."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns=METRICS_COLUMNS).to_csv(self.path, index=False)

    def append(self, row: Mapping[str, Any]) -> None:
        unknown = set(row) - set(METRICS_COLUMNS)
        if unknown:
            raise ValueError(f"unknown metrics fields: {sorted(unknown)}")
        values = {k: row.get(k, math.nan) for k in METRICS_COLUMNS}
        frame = pd.DataFrame([values], columns=METRICS_COLUMNS)
        frame.to_csv(self.path, mode="a", header=False, index=False)


def read_metrics(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path)


def write_manifest(output_dir: str | Path, config: Config) -> Path:
    """Resolved config, seeds and code version of a run directory."""
    path = Path(output_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "algorithm": config.algorithm,
        "seeds": list(config.run.seeds),
        "config": config.to_dict(),
        "code_version": code_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "torch": torch.__version__,
        "columns": METRICS_COLUMNS,
    }
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info("Saved '%s'", path)
    return path


def read_manifest(output_dir: str | Path) -> dict[str, Any]:
    return json.loads((Path(output_dir) / "manifest.json").read_text(encoding="utf-8"))
