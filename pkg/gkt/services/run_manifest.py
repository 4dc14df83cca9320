"""Per-command run manifests written before any work starts."""
from __future__ import annotations

import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import scipy

from gkt import __version__
from gkt.services.hash_cache import HashCache

logger = logging.getLogger(__name__)


def toolchain_version() -> str:
    return (f"gkt {__version__}; python {platform.python_version()}; "
            f"numpy {np.__version__}; scipy {scipy.__version__}")


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int]
    inputs: Dict[str, str] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    toolchain: str = field(default_factory=toolchain_version)

    @classmethod
    def create(cls, command: str, config: Mapping[str, Any], seed: int,
               inputs: Sequence[Union[str, Path]] = (), artifacts: Sequence[Union[str, Path]] = (),
               cache: Optional[HashCache] = None) -> "RunManifest":
        """Hash every input file (through ``cache``) and record the planned artifacts."""
        cache = cache if cache is not None else HashCache()
        hashes = {str(Path(p)): cache.file_hash(p) for p in inputs}
        return cls(command=command, config=dict(config), seeds={"seed": int(seed)},
                   inputs=hashes, artifacts=[str(Path(a)) for a in artifacts])

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        logger.debug("Run manifest for %s written to %s", self.command, path)
        return path


__all__ = ["RunManifest", "toolchain_version"]
