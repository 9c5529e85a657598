# btrfly/services/reproducibility.py
import json
import logging
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

import torch
from pydantic import BaseModel, Field

from btrfly import __version__
from btrfly.services.checkpoint import file_sha256

logger = logging.getLogger(__name__)

RECORD_NAME = "run_record.json"


class RunRecord(BaseModel):
    """Schema for the record written beside every command's outputs"""
    command: str
    argv: list[str] = Field(default_factory=list)
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    version: str = __version__
    python: str = Field(default_factory=platform.python_version)
    torch: str = torch.__version__
    config: dict[str, Any] = Field(default_factory=dict)
    seeds: dict[str, int] = Field(default_factory=dict)
    checkpoints: dict[str, str] = Field(default_factory=dict, description="path -> SHA-256")


def write_run_record(
    out_dir: Path,
    command: str,
    config: Optional[BaseModel | dict] = None,
    seeds: Optional[dict[str, int]] = None,
    checkpoints: Optional[list[Path]] = None,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(config, BaseModel):
        config = json.loads(config.model_dump_json())
    record = RunRecord(
        command=command,
        argv=sys.argv[1:],
        config=config or {},
        seeds=seeds or {},
        checkpoints={str(p): file_sha256(p) for p in (checkpoints or []) if Path(p).exists()},
    )
    path = out_dir / RECORD_NAME
    path.write_text(record.model_dump_json(indent=2))
    logger.debug("Wrote %s", path)
    return path
