from __future__ import annotations

import json
import logging
import os
import tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveInt, ValidationError

from deepsurrogate.errors import ConfigurationError
from deepsurrogate.models.datagen import ScenarioSpec, scenario
from deepsurrogate.models.inference import InferenceConfig
from deepsurrogate.models.surrogate import ModelConfig
from deepsurrogate.models.training import TrainConfig
from deepsurrogate.utils.io import write_json
from deepsurrogate.utils.metrics import DEFAULT_THRESHOLD

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
THREADS_ENV = "DSUR_THREADS"

Method = Literal["deepsurrogate", "fosr"]


class MetricsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    threshold: float = DEFAULT_THRESHOLD


class BenchConfig(BaseModel):
    """Scenario × method grid for benchmark tables."""

    model_config = ConfigDict(frozen=True)

    scenarios: list[str] = Field(default_factory=lambda: ["s6-desk", "s7-desk"])
    methods: list[Method] = Field(default_factory=lambda: ["deepsurrogate", "fosr"])
    replicates: PositiveInt = 1
    fosr_m_s: PositiveInt = 8
    fosr_lam: NonNegativeFloat = 1e-6


class PathsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    out: Path = Path("runs")
    data: Path | None = None
    model: Path | None = None
    predictions: Path | None = None


class RunConfig(BaseModel):
    """Fully resolved settings of one command invocation."""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=0, ge=0)
    threads: PositiveInt | None = None
    scenario: str | ScenarioSpec = "s7-desk"
    model: Literal["simulation", "real"] | ModelConfig = "simulation"
    train: TrainConfig = TrainConfig()
    inference: InferenceConfig = InferenceConfig()
    metrics: MetricsConfig = MetricsConfig()
    bench: BenchConfig = BenchConfig()
    paths: PathsConfig = PathsConfig()

    def resolved_scenario(self, name: str | None = None) -> ScenarioSpec:
        """The scenario as a spec, seeded with the run seed unless it sets its own."""
        chosen = name if name is not None else self.scenario
        if isinstance(chosen, ScenarioSpec):
            return chosen
        return scenario(chosen, seed=self.seed)

    def resolved_model(self) -> ModelConfig:
        if isinstance(self.model, ModelConfig):
            return self.model
        return ModelConfig.preset(self.model)

    def resolved_train(self) -> TrainConfig:
        return self.train.model_copy(update={"seed": self.seed})

    def worker_count(self) -> int:
        """Bench pool size: ``threads``, else ``DSUR_THREADS``, else 1."""
        if self.threads is not None:
            return self.threads
        raw = os.environ.get(THREADS_ENV)
        if not raw:
            return 1
        try:
            value = int(raw)
        except ValueError as e:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from e
        if value < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be positive, got {value}")
        return value


def _validate(data: dict[str, Any], source: str) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration in {source}:\n{e}") from e


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a ``.json`` or ``.toml`` file into a plain mapping."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    suffix = path.suffix.lower()
    try:
        if suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
        elif suffix == ".toml":
            with path.open("rb") as f:
                data = tomllib.load(f)
        else:
            raise ConfigurationError(f"unsupported config format '{suffix}', use .json or .toml")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigurationError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must hold a table at the top level")
    return data


def set_dotted(data: dict[str, Any], key: str, value: Any) -> None:
    """Set ``data["a"]["b"] = value`` for ``key="a.b"``, creating tables as needed."""
    *parents, leaf = key.split(".")
    node = data
    for part in parents:
        child = node.get(part)
        if not isinstance(child, dict):
            if child is not None:
                raise ConfigurationError(f"cannot override '{key}': '{part}' is not a table")
            child = node[part] = {}
        node = child
    node[leaf] = value


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Load a run file (or defaults) and apply dotted-key overrides.

    ``None`` override values are skipped so unset command-line flags keep
    the file's value.

    Raises:
        ConfigurationError: If the file is missing, unparsable or invalid.
    """
    data = read_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            set_dotted(data, key, value)
    cfg = _validate(data, str(path) if path is not None else "defaults")
    logger.debug("Resolved configuration: %s", cfg.model_dump(mode="json"))
    return cfg


def write_manifest(cfg: RunConfig, out_dir: str | Path, command: str, **extra: Any) -> Path:
    """Echo the resolved config into ``out_dir/manifest.json``."""
    payload = {"command": command, "config": cfg.model_dump(mode="json"), **extra}
    return write_json(Path(out_dir) / MANIFEST_FILE, payload)
