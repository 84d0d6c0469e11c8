"""
Experiment configuration: one TOML file with nested sections, validated by pydantic
Environment overrides (GPMERGE_OUTPUT_DIR, GPMERGE_WORKERS, GPMERGE_LOG_LEVEL)
are read from the process environment or a .env file at the repo root.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Literal

import toml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from common.errors import ConfigurationError

ALGORITHMS = ("consensus", "gp_hmc", "dis", "consensus_dis", "gp_is")
REPO_ROOT = Path(__file__).resolve().parent.parent


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    name: str
    constants: dict[str, float] = Field(default_factory=dict)
    true_theta: list[float] | None = None


class DataSection(_Section):
    n: int = Field(10_000, ge=1)
    source: Literal["simulate", "csv"] = "simulate"
    csv_path: str | None = None
    response_column: str | None = None
    covariate_columns: list[str] = Field(default_factory=list)
    seed: int = 0

    @model_validator(mode="after")
    def _csv_needs_path(self):
        if self.source == "csv" and not self.csv_path:
            raise ValueError("data.csv_path is required when data.source = 'csv'")
        return self


class PartitionSection(_Section):
    c_total: int = Field(10, ge=1)


class HmcSection(_Section):
    n_iter: int = Field(10_000, ge=1)
    adapt_iters: int = Field(1_000, ge=0)
    leapfrog_steps: int = Field(20, ge=1)
    step_size: float = Field(0.1, gt=0)
    target_accept: float = Field(0.65, gt=0, lt=1)
    adapt_mass: bool = True
    step_jitter: float = Field(0.1, ge=0, lt=1)


class GpSection(_Section):
    j_train: int = Field(100, ge=1)
    thin: int | None = Field(None, ge=1)
    restarts: int = Field(5, ge=1)


class RecombineSection(_Section):
    algorithms: list[str] = Field(default_factory=lambda: ["consensus", "gp_hmc", "dis", "gp_is"])
    n_samples: int = Field(5_000, ge=1)
    m_realisations: int = Field(500, ge=1)
    dof: float = Field(5.0, gt=2)
    gp_is_proposal: Literal["consensus", "gp_hmc"] = "consensus"
    realisation_method: Literal["spectral", "cholesky"] = "spectral"
    max_rank: int | None = Field(None, ge=1)

    @field_validator("algorithms")
    @classmethod
    def _known_algorithms(cls, algorithms):
        if not algorithms:
            raise ValueError("recombine.algorithms must not be empty")
        unknown = sorted(set(algorithms) - set(ALGORITHMS))
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}; choose from {list(ALGORITHMS)}")
        return list(dict.fromkeys(algorithms))


class ReferenceSection(_Section):
    kind: Literal["hmc", "analytic"] = "hmc"
    n_iter: int = Field(50_000, ge=1)
    adapt_iters: int = Field(2_000, ge=0)
    seed: int = 12_345


class RunSection(_Section):
    repetitions: int = Field(10, ge=1)
    seed: int = 0
    workers: int | None = Field(None, ge=1)
    output_dir: str = "results"
    knn: bool = True
    log_level: str = "INFO"


class ExperimentConfig(_Section):
    model: ModelSection
    data: DataSection = Field(default_factory=DataSection)
    partition: PartitionSection = Field(default_factory=PartitionSection)
    hmc: HmcSection = Field(default_factory=HmcSection)
    gp: GpSection = Field(default_factory=GpSection)
    recombine: RecombineSection = Field(default_factory=RecombineSection)
    reference: ReferenceSection = Field(default_factory=ReferenceSection)
    run: RunSection = Field(default_factory=RunSection)

    @model_validator(mode="after")
    def _consistent(self):
        if self.data.source == "simulate" and self.partition.c_total > self.data.n:
            raise ValueError(f"partition.c_total={self.partition.c_total} exceeds data.n={self.data.n}")
        if self.reference.kind == "analytic" and self.model.name != "rare_bernoulli":
            raise ValueError("reference.kind = 'analytic' is only available for rare_bernoulli")
        return self

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump, leaving out settings that cannot change results"""
        dumped = self.model_dump(mode="json", exclude={"run": {"output_dir", "workers", "log_level"}})
        canonical = json.dumps(dumped, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _env_overrides(env_file: Path | None) -> dict:
    load_dotenv(env_file or REPO_ROOT / ".env")
    overrides = {}
    if os.getenv("GPMERGE_OUTPUT_DIR"):
        overrides["output_dir"] = os.getenv("GPMERGE_OUTPUT_DIR")
    if os.getenv("GPMERGE_WORKERS"):
        overrides["workers"] = int(os.getenv("GPMERGE_WORKERS"))
    if os.getenv("GPMERGE_LOG_LEVEL"):
        overrides["log_level"] = os.getenv("GPMERGE_LOG_LEVEL")
    return overrides


def parse_config(raw: dict, run_overrides: dict | None = None, env_file: Path | None = None) -> ExperimentConfig:
    """
    Validate a config mapping, applying environment then explicit overrides

    Raises:
        ConfigurationError: validation failed (message lists every problem)
    """
    raw = json.loads(json.dumps(raw))
    run = raw.setdefault("run", {})
    try:
        run.update(_env_overrides(env_file))
    except ValueError as exc:
        raise ConfigurationError(f"Bad environment override: {exc}") from None
    run.update({k: v for k, v in (run_overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid configuration:\n{exc}") from None


def load_config(path: Path | str, run_overrides: dict | None = None, env_file: Path | None = None) -> ExperimentConfig:
    """Read a TOML experiment file"""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        raw = toml.load(path)
    except toml.TomlDecodeError as exc:
        raise ConfigurationError(f"Cannot parse {path}: {exc}") from None
    return parse_config(raw, run_overrides, env_file)
