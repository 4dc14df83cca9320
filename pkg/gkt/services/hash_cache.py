"""JSON-backed cache of dataset/checkpoint content hashes keyed by path, mtime and size."""
from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Any, Dict, Optional, Union

from gkt.config.constants import HASH_CACHE_ENV_VAR
from gkt.utils.binary_io import git_blob_hash

logger = logging.getLogger(__name__)


def default_cache_file() -> Path:
    env_value = os.environ.get(HASH_CACHE_ENV_VAR)
    return Path(env_value) if env_value else Path.home() / ".gkt-hash-cache.json"


class HashCache:
    """Thread-safe map path -> (mtime, size, hash); stale entries are rehashed."""

    def __init__(self, cache_file: Optional[Union[str, Path]] = None) -> None:
        self.cache_file = Path(cache_file) if cache_file is not None else default_cache_file()
        self._ram: Dict[str, Dict[str, Any]] = {}
        self._lock = threading.Lock()
        self._load_from_disk()

    def _load_from_disk(self) -> None:
        if not self.cache_file.exists():
            return

        try:
            data = json.loads(self.cache_file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            logger.warning("Hash cache %s is corrupted (JSONDecodeError: %s). Ignoring cache.", self.cache_file, exc)
            return
        except OSError as exc:
            logger.warning("Error loading hash cache %s: %s. Ignoring cache.", self.cache_file, exc)
            return

        if isinstance(data, dict):
            self._ram = data

    def _save(self) -> None:
        try:
            self.cache_file.parent.mkdir(parents=True, exist_ok=True)
            self.cache_file.write_text(json.dumps(self._ram, indent=2, sort_keys=True), encoding="utf-8")
        except (OSError, TypeError) as exc:
            logger.warning("Error saving hash cache %s: %s", self.cache_file, exc)

    def lookup(self, path: Union[str, Path]) -> Optional[str]:
        """Cached hash if the file is unchanged since it was hashed, else None."""
        path = Path(path)
        stat = path.stat()
        with self._lock:
            entry = self._ram.get(str(path.resolve()))
        if entry and entry.get("mtime") == stat.st_mtime_ns and entry.get("size") == stat.st_size:
            return entry.get("hash")
        return None

    def file_hash(self, path: Union[str, Path]) -> str:
        path = Path(path)
        cached = self.lookup(path)
        if cached is not None:
            logger.debug("Hash cache hit for %s", path)
            return cached
        stat = path.stat()
        digest = git_blob_hash(path)
        with self._lock:
            self._ram[str(path.resolve())] = {"mtime": stat.st_mtime_ns, "size": stat.st_size, "hash": digest}
            self._save()
        return digest


__all__ = ["HashCache", "default_cache_file"]
