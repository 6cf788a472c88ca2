"""
Experiment configuration.

An experiment is described by a YAML document with one mapping per section
(system, driving, grid, law, short_returns, audit) plus top-level output
settings. Missing keys fall back to the defaults of each section.
"""
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar

import numpy as np
import yaml

from quench.core.audit import PM_ALPHA_LIMIT, AuditBudgets
from quench.core.driving import DrivingConfig, DrivingConfigError
from quench.core.law import LawConfig, LawConfigError
from quench.core.maps import MapDomainError, MapSystem
from quench.core.short_returns import ShortReturnConfig, ShortReturnConfigError

logger = logging.getLogger(__name__)

FAMILIES = ("expanding", "pm")
CENTER_POLICIES = ("quenched", "fixed")
RUNTIME_KEYS = ("output_dir", "threads")

S = TypeVar("S")


class ConfigValidationError(ValueError):
    """Raised when a configuration violates one of its invariants; names the key."""
    pass


def _tuples(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    return value


def _lists(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _lists(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_lists(v) for v in value]
    return value


@dataclass(frozen=True)
class SystemSpec:
    """Map family: ``expanding`` uses integer slopes, ``pm`` uses one exponent per symbol."""

    family: str = "expanding"
    slopes: Tuple[int, ...] = (2, 3)
    alphas: Tuple[float, ...] = (0.1, 0.3)
    paper_coefficient: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigValidationError(f"system.family must be one of {FAMILIES}, got {self.family!r}")
        if self.family == "expanding":
            if not self.slopes or any(int(k) != k or k < 2 for k in self.slopes):
                raise ConfigValidationError(f"system.slopes must be integers >= 2, got {self.slopes}")
        else:
            alphas = tuple(self.alphas)
            if not alphas or any(not 0 < a < 1 for a in alphas):
                raise ConfigValidationError(f"system.alphas must lie in (0, 1), got {alphas}")
            if any(b <= a for a, b in zip(alphas, alphas[1:])):
                raise ConfigValidationError(f"system.alphas must be strictly increasing (alpha_0 < alpha_1), got {alphas}")
            if max(alphas) >= PM_ALPHA_LIMIT:
                logger.warning(f"system.alphas: alpha_1 = {max(alphas)} >= 1/3 is outside the covered parameter range")

    @property
    def parameters(self) -> Tuple:
        return tuple(self.slopes) if self.family == "expanding" else tuple(self.alphas)

    def build(self) -> MapSystem:
        if self.family == "expanding":
            return MapSystem.expanding([int(k) for k in self.slopes])
        return MapSystem.pomeau_manneville(self.alphas, self.paper_coefficient)

    def info(self) -> Dict[str, Any]:
        return {"family": self.family, "parameters": self.parameters, "paper_coefficient": self.paper_coefficient}


@dataclass(frozen=True)
class DrivingSpec:
    weights: Tuple[float, ...] = (0.5, 0.5)
    seed: int = 0

    def build(self) -> DrivingConfig:
        return DrivingConfig(self.weights, self.seed)


@dataclass(frozen=True)
class GridSpec:
    """Density grid: bin count, pullback depth, fibers to export and ensemble size."""

    bins: int = 2 ** 12
    n_pull: int = 100
    fibers: Tuple[int, ...] = (0, 1, 2)
    n_omega: int = 8

    def __post_init__(self):
        if self.bins < 2:
            raise ConfigValidationError(f"grid.bins must be >= 2, got {self.bins}")
        if self.n_pull < 1 or self.n_omega < 1:
            raise ConfigValidationError("grid.n_pull and grid.n_omega must be positive")


@dataclass(frozen=True)
class LawSpec:
    """Hitting/return law budget and center selection."""

    rhos: Tuple[float, ...] = (2.0 ** -10,)
    t_min: float = 0.1
    t_max: float = 5.0
    t_count: int = 50
    n_samples: int = 5000
    max_iter_factor: float = 4.0
    n_centers: int = 3
    center_policy: str = "quenched"
    centers: Tuple[float, ...] = ()
    margin: float = 0.0
    roundoff_refresh: float = 2.0 ** -48
    block_size: int = 1024

    def __post_init__(self):
        if not self.rhos or any(not 0 < r < 0.5 for r in self.rhos):
            raise ConfigValidationError(f"law.rhos must lie in (0, 1/2), got {self.rhos}")
        if not 0 < self.t_min < self.t_max or self.t_count < 1:
            raise ConfigValidationError("law.t_min, law.t_max and law.t_count must give a positive increasing grid")
        if self.n_samples < 1 or self.n_centers < 1 or self.block_size < 1:
            raise ConfigValidationError("law.n_samples, law.n_centers and law.block_size must be positive")
        if self.center_policy not in CENTER_POLICIES:
            raise ConfigValidationError(f"law.center_policy must be one of {CENTER_POLICIES}, got {self.center_policy!r}")
        if self.center_policy == "fixed" and not self.centers:
            raise ConfigValidationError("law.centers must be given when law.center_policy is 'fixed'")
        if any(not 0 <= c <= 1 for c in self.centers):
            raise ConfigValidationError(f"law.centers must lie in [0, 1], got {self.centers}")
        if not 0 <= self.margin < 1:
            raise ConfigValidationError(f"law.margin must lie in [0, 1), got {self.margin}")

    @property
    def t_grid(self) -> Tuple[float, ...]:
        return tuple(float(t) for t in np.linspace(self.t_min, self.t_max, self.t_count))

    def law_config(self, seed: int, threads: int) -> LawConfig:
        return LawConfig(
            t_grid=self.t_grid,
            n_samples=self.n_samples,
            max_iter_factor=self.max_iter_factor,
            seed=seed,
            roundoff_refresh=self.roundoff_refresh,
            threads=threads,
            block_size=self.block_size,
        )


@dataclass(frozen=True)
class ShortReturnSpec:
    a: Optional[float] = None
    b: float = 0.25
    rhos: Tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    n_centers: int = 2000
    n_max: int = 8

    def __post_init__(self):
        if self.n_max < 1:
            raise ConfigValidationError(f"short_returns.n_max must be >= 1, got {self.n_max}")

    def build(self, seed: int) -> ShortReturnConfig:
        return ShortReturnConfig(self.a, self.b, self.rhos, self.n_centers, seed)


SECTIONS: Dict[str, Type] = {
    "system": SystemSpec,
    "driving": DrivingSpec,
    "grid": GridSpec,
    "law": LawSpec,
    "short_returns": ShortReturnSpec,
    "audit": AuditBudgets,
}


def _section(name: str, cls: Type[S], data: Optional[Dict[str, Any]]) -> S:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigValidationError(f"Section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigValidationError(f"Unknown key {name}.{unknown[0]}")
    try:
        return cls(**{k: _tuples(v) for k, v in data.items()})
    except ConfigValidationError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigValidationError(f"{name}: {e}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete, validated experiment description."""

    system: SystemSpec = field(default_factory=SystemSpec)
    driving: DrivingSpec = field(default_factory=DrivingSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    law: LawSpec = field(default_factory=LawSpec)
    short_returns: ShortReturnSpec = field(default_factory=ShortReturnSpec)
    audit: AuditBudgets = field(default_factory=AuditBudgets)
    output_dir: str = "runs"
    threads: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigValidationError(f"threads must be >= 1, got {self.threads}")
        if len(self.driving.weights) != self.system.build().alphabet_size:
            raise ConfigValidationError(
                f"driving.weights has {len(self.driving.weights)} entries but the system has "
                f"{self.system.build().alphabet_size} maps"
            )
        try:
            self.driving.build()
            short_returns = self.short_returns.build(self.seed)
            system = self.system.build()
            for rho in short_returns.rhos:
                short_returns.horizon(system, rho)
            self.law.law_config(self.seed, self.threads)
        except (DrivingConfigError, ShortReturnConfigError, LawConfigError, MapDomainError) as e:
            raise ConfigValidationError(str(e))

    @property
    def seed(self) -> int:
        return self.driving.seed

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ExperimentConfig":
        """
        Build a configuration from parsed YAML, defaults filling missing keys.

        Raises:
            ConfigValidationError: On unknown keys or violated invariants
        """
        data = dict(data or {})
        top = {"output_dir", "threads"}
        unknown = sorted(set(data) - set(SECTIONS) - top)
        if unknown:
            raise ConfigValidationError(f"Unknown section '{unknown[0]}'")
        sections = {name: _section(name, cls_, data.get(name)) for name, cls_ in SECTIONS.items()}
        return cls(
            **sections,
            output_dir=str(data.get("output_dir", "runs")),
            threads=int(data.get("threads", 1)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return _lists(asdict(self))

    def snapshot(self) -> Dict[str, Any]:
        """
        The settings that determine results: ``to_dict`` without the output
        directory and the worker counts.
        """
        data = self.to_dict()
        for key in RUNTIME_KEYS:
            data.pop(key)
        data["audit"].pop("threads")
        return data

    def dumps_snapshot(self) -> str:
        return yaml.safe_dump(self.snapshot(), default_flow_style=False, sort_keys=False)

    @classmethod
    def load(cls, config_path: Path) -> "ExperimentConfig":
        """
        Load a configuration file.

        Raises:
            FileNotFoundError: If the file doesn't exist
            ConfigValidationError: If the file is not valid YAML or violates an invariant
        """
        config_path = Path(config_path)
        if not config_path.exists():
            raise FileNotFoundError(f"Config file not found: {config_path}")
        try:
            with open(config_path, "r") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigValidationError(f"Error parsing config file: {e}")
        return cls.from_dict(data)

    def save(self, config_path: Path) -> None:
        """
        Save the configuration as YAML.

        Raises:
            IOError: If unable to write the file
        """
        try:
            with open(config_path, "w") as f:
                yaml.safe_dump(self.to_dict(), f, default_flow_style=False, sort_keys=False)
        except OSError as e:
            raise IOError(f"Error saving config file: {e}")

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=False, sort_keys=False)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[Path] = None,
                       threads: Optional[int] = None, paper_coefficient: Optional[bool] = None) -> "ExperimentConfig":
        """Apply command-line overrides."""
        config = self
        if seed is not None:
            config = replace(config, driving=replace(config.driving, seed=int(seed)))
        if out is not None:
            config = replace(config, output_dir=str(out))
        if threads is not None:
            config = replace(config, threads=int(threads), audit=replace(config.audit, threads=int(threads)))
        if paper_coefficient:
            config = replace(config, system=replace(config.system, paper_coefficient=True))
        return config
