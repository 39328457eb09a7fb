"""Registry of the artifact directories written by recent commands."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

from .strings import APP_NAME

logger = logging.getLogger(__name__)

_MAX_RECENT = 10
_REGISTRY = "recent.json"


def _registry_path() -> Path:
    config_home = os.environ.get("XDG_CONFIG_HOME") or str(Path.home() / ".config")
    return Path(config_home) / APP_NAME / _REGISTRY


def load_recent() -> list[dict]:
    """Registered entries, newest first; an unreadable registry counts as empty."""
    registry = _registry_path()
    try:
        entries = json.loads(registry.read_text())
    except FileNotFoundError:
        return []
    except (OSError, ValueError):
        logger.debug("Ignoring unreadable run registry %s", registry, exc_info=True)
        return []
    if not isinstance(entries, list):
        return []
    return [e for e in entries if isinstance(e, dict) and "path" in e][:_MAX_RECENT]


def add_recent(run_dir: str | Path, command: str, config_hash: str = "") -> None:
    """Record *run_dir* as the newest output of *command* (run, cascade or reference)."""
    resolved = str(Path(run_dir).resolve())
    entry = {"path": resolved, "command": command, "config_hash": config_hash}
    entries = [entry] + [e for e in load_recent() if e["path"] != resolved]
    registry = _registry_path()
    try:
        registry.parent.mkdir(parents=True, exist_ok=True)
        registry.write_text(json.dumps(entries[:_MAX_RECENT], indent=2))
    except OSError:
        logger.warning("Could not update run registry %s", registry, exc_info=True)


def latest_run(command: str | None = None) -> Path | None:
    """Newest registered directory that still exists, optionally of one command."""
    for entry in load_recent():
        if command is None or entry.get("command") == command:
            path = Path(entry["path"])
            if path.is_dir():
                return path
    return None
