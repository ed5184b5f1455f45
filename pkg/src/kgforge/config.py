"""Run configuration: file + flag resolution, fingerprinting, gateway wiring.

A run is fully described by one RunConfig. Values come from an optional
config file (TOML or JSON) with command-line flags taking precedence. The
resolved config is fingerprinted and the fingerprint is embedded in the
run's knowledge-graph artifact, so any artifact can be traced back to the
exact configuration that produced it.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .extraction import DEFAULT_EXEMPLARS, Exemplar
from .gateway import Gateway, LiveGateway, MockGateway, RecordGateway, ReplayGateway

GATEWAY_MODES = ("mock", "live", "record", "replay")
VERIFY_MODES = ("baseline", "hybrid")
ONTOLOGY_AUTO = "auto"


class ConfigError(ValueError):
    """The provided configuration cannot describe a runnable pipeline."""


@dataclass(frozen=True)
class RunConfig:
    document_path: str
    output_dir: str
    ontology: str = ONTOLOGY_AUTO  # "auto" or "manual:<path>"
    gateway: str = "mock"
    cassette: str | None = None
    verify: str = "hybrid"
    fraction: float = 1.0
    chunk_size: int = 5
    overlap: int = 0
    seed: int = 0
    max_workers: int = 4
    exemplars: tuple[Exemplar, ...] = DEFAULT_EXEMPLARS

    def validate(self) -> "RunConfig":
        if not self.document_path:
            raise ConfigError("no document given (positional argument or 'document_path' in the config file)")
        if not Path(self.document_path).is_file():
            raise ConfigError(f"document not found: {self.document_path}")
        if self.gateway not in GATEWAY_MODES:
            raise ConfigError(f"gateway must be one of {GATEWAY_MODES}, got {self.gateway!r}")
        if self.verify not in VERIFY_MODES:
            raise ConfigError(f"verify must be one of {VERIFY_MODES}, got {self.verify!r}")
        if self.gateway in ("record", "replay") and not self.cassette:
            raise ConfigError(f"gateway mode {self.gateway!r} requires --cassette")
        if not 0 < self.fraction <= 1:
            raise ConfigError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.chunk_size < 1:
            raise ConfigError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if not 0 <= self.overlap < self.chunk_size:
            raise ConfigError(f"overlap must satisfy 0 <= overlap < chunk_size, got {self.overlap}")
        if not self.is_auto_ontology and not self.manual_ontology_path:
            raise ConfigError("ontology must be 'auto' or 'manual:<path>'")
        if self.manual_ontology_path and not Path(self.manual_ontology_path).is_file():
            raise ConfigError(f"manual ontology not found: {self.manual_ontology_path}")
        return self

    @property
    def is_auto_ontology(self) -> bool:
        return self.ontology == ONTOLOGY_AUTO

    @property
    def manual_ontology_path(self) -> str | None:
        if self.ontology.startswith("manual:"):
            return self.ontology.split(":", 1)[1]
        return None

    @property
    def label(self) -> str:
        strategy = "auto" if self.is_auto_ontology else "manual"
        return f"{Path(self.document_path).stem}/{strategy}"

    def fingerprint(self) -> str:
        """Hash of the result-affecting fields; storage locations excluded."""
        payload = json.dumps(
            {
                "document_path": self.document_path,
                "ontology": self.ontology,
                "gateway": self.gateway,
                "verify": self.verify,
                "fraction": self.fraction,
                "chunk_size": self.chunk_size,
                "overlap": self.overlap,
                "seed": self.seed,
                "exemplars": [[ex.text, [list(t) for t in ex.triplets]] for ex in self.exemplars],
            },
            sort_keys=True,
            ensure_ascii=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_resolved_dict(self) -> dict:
        payload = asdict(self)
        payload["exemplars"] = [
            {"text": ex.text, "triplets": [{"subject": s, "predicate": p, "object": o} for s, p, o in ex.triplets]}
            for ex in self.exemplars
        ]
        payload["fingerprint"] = self.fingerprint()
        return payload


def _parse_exemplars(raw) -> tuple[Exemplar, ...]:
    if raw is None:
        return DEFAULT_EXEMPLARS
    if not isinstance(raw, list):
        raise ConfigError("exemplars must be a list")
    exemplars = []
    for entry in raw:
        try:
            triplets = tuple(
                (t["subject"], t["predicate"], t["object"]) for t in entry.get("triplets", [])
            )
            exemplars.append(Exemplar(text=entry["text"], triplets=triplets))
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed exemplar entry {entry!r}: {exc}") from exc
    return tuple(exemplars)


def load_config_file(path: str | Path) -> dict:
    """Read a TOML or JSON config file into a flat dict of RunConfig fields."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known - {"matrix"}
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return data


def resolve_config(file_values: dict | None, **flag_values) -> RunConfig:
    """Merge config-file values with CLI flags; flags win when provided."""
    merged: dict = dict(file_values or {})
    merged.pop("matrix", None)
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    merged["exemplars"] = _parse_exemplars(merged.get("exemplars"))
    merged.setdefault("document_path", "")
    merged.setdefault("output_dir", "run")
    try:
        config = RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return config.validate()


def build_gateway(config: RunConfig) -> Gateway:
    if config.gateway == "mock":
        return MockGateway(seed=config.seed)
    if config.gateway == "live":
        return LiveGateway()
    if config.gateway == "record":
        return RecordGateway(LiveGateway(), config.cassette)
    return ReplayGateway(config.cassette)
