"""Run configuration shared by every CLI subcommand.

The config file uses the same JSON dialect as dataset manifests. Each
backend slot carries exactly one of {"mock": true} or {"endpoint": url};
``--mock-all`` forces every slot to mock. When no config file is given the
path is taken from the ROSIE_FORGE_CONFIG environment variable, falling
back to all-mock defaults.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .client import RetryPolicy

ENV_CONFIG_PATH = "ROSIE_FORGE_CONFIG"

BACKEND_SLOTS = ("detect", "inpaint_base", "inpaint_sr", "complete")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendSlot:
    mock: bool = True
    endpoint: str | None = None

    @classmethod
    def from_json(cls, name: str, obj: dict) -> "BackendSlot":
        mock = bool(obj.get("mock", False))
        endpoint = obj.get("endpoint")
        if mock == (endpoint is not None):
            raise ConfigError(
                f"backend {name!r} needs exactly one of 'mock' or 'endpoint'"
            )
        return cls(mock=mock, endpoint=endpoint)


@dataclass
class RunConfig:
    backends: dict[str, BackendSlot] = field(
        default_factory=lambda: {slot: BackendSlot(mock=True) for slot in BACKEND_SLOTS}
    )
    thresholds_path: Path | None = None
    registry_path: Path | None = None
    exemplars_path: Path | None = None
    parallelism: int = 1
    seed: int = 0
    locality_tolerance: int | None = None  # resolved per backend kind below
    flag_policy: str = "warn"
    batch_queries: bool = True
    max_detections: int = 64
    distractor_box: tuple[int, int] = (24, 24)
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        missing = [slot for slot in BACKEND_SLOTS if slot not in self.backends]
        if missing:
            raise ConfigError(f"missing backend slots: {missing}")

    def resolved_locality_tolerance(self) -> int:
        """Exact locality for mock inpainting; small slack for remote."""
        if self.locality_tolerance is not None:
            return self.locality_tolerance
        inpaint_mocked = (
            self.backends["inpaint_base"].mock and self.backends["inpaint_sr"].mock
        )
        return 0 if inpaint_mocked else 2


def load_run_config(
    path: Path | None = None,
    *,
    mock_all: bool = False,
    seed: int | None = None,
    parallelism: int | None = None,
) -> RunConfig:
    if path is None:
        env = os.environ.get(ENV_CONFIG_PATH)
        path = Path(env) if env else None
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    else:
        raw = {}

    backends_raw = raw.get("backends", {})
    backends = {}
    for slot in BACKEND_SLOTS:
        if mock_all or slot not in backends_raw:
            backends[slot] = BackendSlot(mock=True)
        else:
            backends[slot] = BackendSlot.from_json(slot, backends_raw[slot])

    retry_raw = raw.get("retry", {})
    retry = RetryPolicy(
        attempts=int(retry_raw.get("attempts", 3)),
        backoff=float(retry_raw.get("backoff", 0.2)),
        factor=float(retry_raw.get("factor", 2.0)),
    )

    config = RunConfig(
        backends=backends,
        thresholds_path=_optional_path(raw.get("thresholds_path")),
        registry_path=_optional_path(raw.get("registry_path")),
        exemplars_path=_optional_path(raw.get("exemplars_path")),
        parallelism=int(raw.get("parallelism", 1)),
        seed=int(raw.get("seed", 0)),
        locality_tolerance=raw.get("locality_tolerance"),
        flag_policy=raw.get("flag_policy", "warn"),
        batch_queries=bool(raw.get("batch_queries", True)),
        max_detections=int(raw.get("max_detections", 64)),
        distractor_box=tuple(raw.get("distractor_box", (24, 24))),
        retry=retry,
    )
    if seed is not None:
        config.seed = seed
    if parallelism is not None:
        config.parallelism = parallelism
        if parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
    return config


def _optional_path(value) -> Path | None:
    return Path(value) if value else None
