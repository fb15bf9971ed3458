"""Engine configuration: thresholds, workspace envelope, backend selection.

The config file is JSON; every report echoes the resolved configuration so a
run is reproducible from its report alone. The remote endpoint and token may
come from the environment (ESPATIAL_ENDPOINT / ESPATIAL_TOKEN).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError
from .geometry import DEFAULT_THRESHOLDS, Thresholds
from .query import DEFAULT_WORKSPACE, WorkspaceEnvelope

ENDPOINT_ENV = "ESPATIAL_ENDPOINT"
TOKEN_ENV = "ESPATIAL_TOKEN"


@dataclass(frozen=True)
class EngineConfig:
    thresholds: Thresholds = DEFAULT_THRESHOLDS
    workspace: WorkspaceEnvelope = DEFAULT_WORKSPACE
    backend: str = "fallback"  # fallback | remote
    remote_endpoint: str | None = None
    max_retries: int = 2
    workers: int = 1
    max_in_flight: int = 4

    def __post_init__(self):
        if self.backend not in ("fallback", "remote"):
            raise ParseError(f"unknown backend {self.backend!r}", field="backend")
        if self.workers < 1:
            raise ParseError("workers must be >= 1", field="workers")

    def resolve_endpoint(self) -> str | None:
        return self.remote_endpoint or os.environ.get(ENDPOINT_ENV)

    def make_client(self):
        """Reasoning client for the configured backend."""
        from .cot import FallbackReasoner, RemoteClient
        from .errors import BackendUnavailable

        if self.backend == "fallback":
            return FallbackReasoner()
        endpoint = self.resolve_endpoint()
        if not endpoint:
            raise BackendUnavailable(
                f"remote backend selected but no endpoint configured ({ENDPOINT_ENV} unset)"
            )
        return RemoteClient(endpoint, max_in_flight=self.max_in_flight)

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.to_dict(),
            "workspace": self.workspace.to_dict(),
            "backend": self.backend,
            "remote_endpoint": self.remote_endpoint,
            "max_retries": self.max_retries,
            "workers": self.workers,
            "max_in_flight": self.max_in_flight,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        return cls(
            thresholds=Thresholds.from_dict(data.get("thresholds", {})),
            workspace=WorkspaceEnvelope.from_dict(data.get("workspace", {})),
            backend=data.get("backend", "fallback"),
            remote_endpoint=data.get("remote_endpoint"),
            max_retries=int(data.get("max_retries", 2)),
            workers=int(data.get("workers", 1)),
            max_in_flight=int(data.get("max_in_flight", 4)),
        )


def load_config(path: str | Path) -> EngineConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed config JSON: {e.msg}", line=e.lineno) from e
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object")
    return EngineConfig.from_dict(data)
