"""
Audit Module
Run metadata and the language-model request log.

Every command writes a metadata block (config hash, seed, version) so a run
can be repeated exactly. The request log records one JSON line per outbound
completion request without storing the prompt itself.
"""

import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

from hiersg.utils import sha256_hex, write_json

logger = logging.getLogger(__name__)

METADATA_FILE = 'metadata.json'


class RequestStatus(Enum):
    """Outcome of one outbound request."""
    OK = "ok"
    HTTP_ERROR = "http_error"
    TIMEOUT = "timeout"
    CONNECTION_ERROR = "connection_error"
    AUTH_ERROR = "auth_error"
    MALFORMED = "malformed"


@dataclass
class RunMetadata:
    """
    Block embedded in every command's output directory.

    created_at is the only field that differs between two runs with the same
    command, config and inputs; compare runs on config_hash, not on the bytes
    of metadata.json.
    """
    command: str
    version: str
    seed: int
    config_hash: str
    config: Dict[str, Any] = field(default_factory=dict)
    created_at: str = ""
    inputs: Dict[str, str] = field(default_factory=dict)


def build_run_metadata(command: str, config, inputs: Optional[Dict[str, str]] = None) -> RunMetadata:
    """Describe a run of `command` under a RunConfig."""
    from hiersg import __version__
    from hiersg.settings import config_hash, to_dict

    return RunMetadata(
        command=command,
        version=__version__,
        seed=config.seed,
        config_hash=config_hash(config),
        config=to_dict(config),
        created_at=datetime.now().isoformat(),
        inputs=dict(inputs or {}),
    )


def write_run_metadata(out_dir: Union[str, Path], metadata: RunMetadata) -> Path:
    path = write_json(Path(out_dir) / METADATA_FILE, asdict(metadata))
    logger.info("Wrote run metadata to %s (config %s)", path, metadata.config_hash[:12])
    return path


@dataclass
class RequestLogEntry:
    """A single request log line."""
    timestamp: str
    prompt_sha256: str
    status: str
    latency_ms: float
    http_status: Optional[int] = None
    attempt: int = 0


class RequestLog:
    """Append-only JSONL request log, safe to share between threads."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def record(self, prompt: str, status: RequestStatus, latency_ms: float,
               http_status: Optional[int] = None, attempt: int = 0) -> RequestLogEntry:
        entry = RequestLogEntry(
            timestamp=datetime.now().isoformat(),
            prompt_sha256=sha256_hex(prompt),
            status=status.value,
            latency_ms=round(latency_ms, 3),
            http_status=http_status,
            attempt=attempt,
        )
        line = json.dumps(asdict(entry), sort_keys=True)
        with self._lock:
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(line + '\n')
        return entry

    def entries(self) -> list:
        """Read back all logged entries."""
        if not self.path.exists():
            return []
        with open(self.path, 'r', encoding='utf-8') as f:
            return [RequestLogEntry(**json.loads(line)) for line in f if line.strip()]
