"""Config files, CSV artifacts, and run manifests.

Scenario and algorithm files are TOML with a required top-level
``schema = 1``. Every CSV artifact is UTF-8 with a header row and carries
the owning run's manifest id in its last column, so any file can be traced
back to the exact invocation that produced it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .emo import AlgoConfig
from .env import BadConfig, MochargeError, ScenarioConfig
from .momdp import RewardWeights

SCHEMA_VERSION = 1


class ScenarioNotFound(MochargeError):
    """Scenario file path does not exist."""


class ConfigNotFound(MochargeError):
    """Algorithm config file path does not exist."""


def _load_toml(path: Path) -> dict:
    with open(path, "rb") as f:
        try:
            return tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise BadConfig(f"{path}: invalid TOML: {e}") from e


def _check_schema(doc: dict, path: Path) -> None:
    if "schema" not in doc:
        raise BadConfig(f"{path}: missing required key 'schema'")
    if doc["schema"] != SCHEMA_VERSION:
        raise BadConfig(
            f"{path}: unsupported schema {doc['schema']!r}, expected {SCHEMA_VERSION}"
        )


# fields where a scalar means "both bounds equal"
_SCALAR_PAIRS = ("sensor_init_energy", "sensor_rate_range")


def _build_from_table(cls, table: dict, path: Path, label: str):
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise BadConfig(f"{path}: unknown {label} keys: {', '.join(unknown)}")
    converted = {}
    for key, value in table.items():
        if key in _SCALAR_PAIRS and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = (value, value)
        elif isinstance(value, list):
            value = tuple(value)
        converted[key] = value
    try:
        return cls(**converted)
    except (TypeError, ValueError) as e:
        raise BadConfig(f"{path}: bad {label} table: {e}") from e


def load_scenario(path) -> tuple[ScenarioConfig, RewardWeights]:
    """Parse a scenario file into physics and reward configuration."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioNotFound(f"scenario file not found: {path}")
    doc = _load_toml(path)
    _check_schema(doc, path)
    extra = sorted(set(doc) - {"schema", "scenario", "reward"})
    if extra:
        raise BadConfig(f"{path}: unknown top-level keys: {', '.join(extra)}")
    if "scenario" not in doc:
        raise BadConfig(f"{path}: missing [scenario] table")
    if "reward" not in doc:
        raise BadConfig(f"{path}: missing [reward] table")
    scenario = _build_from_table(ScenarioConfig, doc["scenario"], path, "scenario")
    rewards = _build_from_table(RewardWeights, doc["reward"], path, "reward")
    return scenario, rewards


def load_algo_config(path) -> AlgoConfig:
    """Parse an algorithm config file ([algo] table) into AlgoConfig."""
    path = Path(path)
    if not path.is_file():
        raise ConfigNotFound(f"algorithm config file not found: {path}")
    doc = _load_toml(path)
    _check_schema(doc, path)
    extra = sorted(set(doc) - {"schema", "algo"})
    if extra:
        raise BadConfig(f"{path}: unknown top-level keys: {', '.join(extra)}")
    if "algo" not in doc:
        raise BadConfig(f"{path}: missing [algo] table")
    return _build_from_table(AlgoConfig, doc["algo"], path, "algo")


def _cell(value) -> str:
    # repr keeps float cells byte-stable across runs; everything else is str
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)


def write_csv(path, header: list[str], rows, manifest_id: str) -> None:
    """Write rows as RFC 4180 CSV, appending the manifest id to each row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header) + ["manifest_id"])
        for row in rows:
            writer.writerow([_cell(v) for v in row] + [manifest_id])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, [row for row in reader]


def compute_manifest_id(command: str, seed: int, file_paths: list, extras: dict | None = None) -> str:
    """Deterministic run id: hash of command, seed, config bytes, version.

    Timestamps stay out of the hash on purpose so identical invocations
    produce identical ids (and therefore byte-identical CSV artifacts).
    """
    digests = []
    for p in file_paths:
        digests.append(hashlib.sha256(Path(p).read_bytes()).hexdigest())
    payload = {
        "command": command,
        "seed": seed,
        "inputs": digests,
        "version": __version__,
        "extras": extras or {},
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def version_string() -> str:
    # tag-style version, matching what a release tag would describe to
    return f"v{__version__}"


@dataclass(slots=True)
class RunManifest:
    """Provenance record written alongside every command's artifacts."""

    manifest_id: str
    command: str
    argv: list[str]
    seed: int
    scenario_path: str
    out_dir: str
    algo_path: str = ""
    version: str = field(default_factory=version_string)
    started_at: str = ""
    finished_at: str = ""
    status: str = "running"
    artifacts: list[str] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def data(self) -> dict:
        return {
            "manifest_id": self.manifest_id,
            "command": self.command,
            "argv": self.argv,
            "seed": self.seed,
            "scenario_path": self.scenario_path,
            "algo_path": self.algo_path,
            "out_dir": self.out_dir,
            "version": self.version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "status": self.status,
            "artifacts": self.artifacts,
            "extras": self.extras,
        }


def utc_stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def write_manifest(manifest: RunManifest, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest.data(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
