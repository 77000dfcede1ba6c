"""Run configuration: one JSON file describing backends and stage settings.

CLI flags override config keys.  Seeds derive from a single root seed by
hashing (root, stage name), giving stage-level reproducibility without
correlation between stages.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import ConfigError
from .gateway import HttpBackend, ModelGateway, ScriptedBackend

__all__ = ["RunConfig", "stage_seed", "build_gateway"]

_SECTIONS = ("backends", "generation", "qc", "detection", "resolution", "annotation")


def stage_seed(root_seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{root_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class RunConfig:
    backends: dict[str, dict] = field(default_factory=dict)
    generation: dict[str, Any] = field(default_factory=dict)
    qc: dict[str, Any] = field(default_factory=dict)
    detection: dict[str, Any] = field(default_factory=dict)
    resolution: dict[str, Any] = field(default_factory=dict)
    annotation: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    out_dir: str = "runs/out"
    cache_dir: Optional[str] = None
    max_attempts: int = 3
    workers: int = 1
    config_path: Optional[str] = None

    @classmethod
    def from_file(cls, path: str | Path, overrides: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError("config file does not exist", path=str(path))
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config file is not valid JSON", path=str(path), detail=str(exc))
        return cls.from_mapping(raw, config_path=str(path), overrides=overrides)

    @classmethod
    def from_mapping(
        cls,
        raw: Mapping[str, Any],
        config_path: Optional[str] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("config root must be an object")
        unknown = set(raw) - set(_SECTIONS) - {"seed", "out_dir", "cache_dir", "max_attempts", "workers"}
        if unknown:
            raise ConfigError("unknown config keys", keys=sorted(unknown))
        config = cls(
            backends=dict(raw.get("backends", {})),
            generation=dict(raw.get("generation", {})),
            qc=dict(raw.get("qc", {})),
            detection=dict(raw.get("detection", {})),
            resolution=dict(raw.get("resolution", {})),
            annotation=dict(raw.get("annotation", {})),
            seed=int(raw.get("seed", 0)),
            out_dir=str(raw.get("out_dir", "runs/out")),
            cache_dir=raw.get("cache_dir"),
            max_attempts=int(raw.get("max_attempts", 3)),
            workers=int(raw.get("workers", 1)),
            config_path=config_path,
        )
        for key, value in (overrides or {}).items():
            if value is not None:
                setattr(config, key, value)
        config.validate()
        return config

    def validate(self) -> None:
        for name, spec in self.backends.items():
            if not isinstance(spec, Mapping):
                raise ConfigError("backend spec must be an object", backend=name)
            kind = spec.get("kind")
            if kind not in ("scripted", "http"):
                raise ConfigError("backend kind must be 'scripted' or 'http'",
                                  backend=name, kind=kind)
            if kind == "scripted" and not (spec.get("script") or spec.get("script_path")):
                raise ConfigError("scripted backend needs a script or script_path",
                                  backend=name)
        for section_name in ("generation", "qc", "detection", "resolution"):
            section = getattr(self, section_name)
            for key in ("backend", "nli_backend", "llm_backend", "fc_backend"):
                name = section.get(key)
                if name is not None and name not in self.backends:
                    raise ConfigError("section references an undeclared backend",
                                      section=section_name, key=key, backend=name)

    def digest(self) -> str:
        canonical = json.dumps(
            {
                "backends": self.backends,
                "generation": self.generation,
                "qc": self.qc,
                "detection": self.detection,
                "resolution": self.resolution,
                "annotation": self.annotation,
                "seed": self.seed,
                "max_attempts": self.max_attempts,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def stage_seed(self, stage: str) -> int:
        return stage_seed(self.seed, stage)


def build_gateway(config: RunConfig) -> ModelGateway:
    gateway = ModelGateway(
        cache_dir=config.cache_dir,
        max_attempts=config.max_attempts,
        max_workers=max(config.workers, 1),
    )
    base = Path(config.config_path).parent if config.config_path else Path(".")
    for name, spec in config.backends.items():
        kind = spec["kind"]
        if kind == "scripted":
            if "script" in spec:
                backend = ScriptedBackend(name, spec["script"])
            else:
                script_path = Path(spec["script_path"])
                if not script_path.is_absolute():
                    script_path = base / script_path
                backend = ScriptedBackend.from_file(name, script_path)
        else:
            backend = HttpBackend(
                name,
                base_url=spec.get("base_url"),
                api_key=spec.get("api_key"),
                timeout=float(spec.get("timeout", 60.0)),
            )
        gateway.register(backend)
    return gateway
