"""
Run Configuration

Effective settings of one CLI run, merged from Settings defaults, ``TRAJFACTORS_*``
environment variables, an optional flat ``key=value`` config file and command line
flags (later sources win).
"""

import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
from dotenv import dotenv_values

from .settings import Settings
from ..core.exceptions import ConfigError
from ..core.model import ModelConfig

logger = logging.getLogger(__name__)

COMPONENT_ALIASES = {
    "sequence": "sequence",
    "seq": "sequence",
    "object": "object",
    "obj": "object",
    "time": "time",
}
AGGREGATIONS = ("max", "sum")
MODEL_ENCODINGS = ("text", "binary")
SWEEP_PARAMS = ("k", "order", "bin-hours")


def parse_components(value: Any) -> Tuple[str, ...]:
    """Parse ``seq[,obj][,time]`` into canonical component names"""
    items = value.split(",") if isinstance(value, str) else list(value)
    components = []
    for item in items:
        name = COMPONENT_ALIASES.get(str(item).strip().lower())
        if name is None:
            raise ConfigError(f"unknown component {item!r} (expected sequence, object or time)")
        if name not in components:
            components.append(name)
    if "sequence" not in components:
        raise ConfigError("the sequence component is always required")
    return tuple(c for c in Settings.DEFAULT_COMPONENTS if c in components)


def parse_int_list(value: Any) -> Tuple[int, ...]:
    """Parse ``1,5`` (or an iterable of ints) into a tuple of ints"""
    items = value.split(",") if isinstance(value, str) else list(value)
    try:
        return tuple(int(str(item).strip()) for item in items if str(item).strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {value!r}") from None


def _optional(parser: Callable[[Any], Any]) -> Callable[[Any], Any]:
    def _parse(value: Any) -> Any:
        if value is None or (isinstance(value, str) and not value.strip()):
            return None
        return parser(value)

    return _parse


def _text(value: Any) -> str:
    return str(value)


@dataclass
class RunConfig:
    """Every effective setting of a run; echoed verbatim into the run manifest"""

    subcommand: str = ""

    # Paths
    input: Optional[str] = None
    corpus: Optional[str] = None
    model: Optional[str] = None
    out: Optional[str] = None
    trace: Optional[str] = None
    inspect_out: Optional[str] = None
    seed: Optional[int] = None

    # Ingestion
    gap_seconds: float = Settings.DEFAULT_GAP_SECONDS
    min_len: int = Settings.DEFAULT_MIN_LEN
    order: int = Settings.DEFAULT_ORDER
    bin_hours: int = Settings.DEFAULT_BIN_HOURS
    tz_offset: float = Settings.DEFAULT_TZ_OFFSET
    delimiter: str = Settings.DEFAULT_DELIMITER

    # Model and sampler
    k: int = Settings.DEFAULT_K
    alpha: Optional[float] = None
    beta: float = Settings.DEFAULT_PRIOR
    eta: float = Settings.DEFAULT_PRIOR
    gamma: float = Settings.DEFAULT_PRIOR
    components: Tuple[str, ...] = Settings.DEFAULT_COMPONENTS
    iterations: int = Settings.DEFAULT_ITERATIONS
    average_last: int = Settings.DEFAULT_AVERAGE_LAST
    fold_in_iterations: int = Settings.DEFAULT_FOLD_IN_ITERATIONS
    model_encoding: str = Settings.DEFAULT_MODEL_ENCODING

    # Evaluation
    folds: int = Settings.DEFAULT_FOLDS
    topn: Tuple[int, ...] = Settings.DEFAULT_TOPN
    q: int = Settings.DEFAULT_Q
    pmi_epsilon: float = Settings.DEFAULT_PMI_EPSILON
    aggregation: str = Settings.DEFAULT_AGGREGATION
    factor: Optional[int] = None

    # Simulation
    sim_sequences: int = Settings.DEFAULT_SIM_SEQUENCES
    sim_objects: int = Settings.DEFAULT_SIM_OBJECTS
    sim_bins: int = Settings.DEFAULT_SIM_BINS
    sim_trajectories: int = Settings.DEFAULT_SIM_TRAJECTORIES
    sim_units: int = Settings.DEFAULT_SIM_UNITS

    # Prediction query
    locations: Optional[str] = None
    timestamps: Optional[str] = None
    obj: Optional[str] = None

    # Sweeps
    param: Optional[str] = None
    values: Optional[str] = None
    jobs: int = Settings.DEFAULT_JOBS

    @classmethod
    def from_sources(
        cls,
        subcommand: str,
        flags: Optional[Mapping[str, Any]] = None,
        config_path: Optional[str] = None,
        env: Optional[Mapping[str, str]] = None,
    ) -> "RunConfig":
        """
        Merge defaults < environment < config file < flags

        Args:
            subcommand: CLI subcommand the settings are for
            flags: Parsed flag values; ``None`` means "not given"
            config_path: Optional flat ``key=value`` file (a manifest works too)
            env: Variables to read ``TRAJFACTORS_<SETTING>`` from (default: ``os.environ``)

        Returns:
            Validated RunConfig with a seed filled in
        """
        values: Dict[str, Any] = {}

        for key, value in (os.environ if env is None else env).items():
            if not key.startswith(Settings.ENV_PREFIX) or not value.strip():
                continue
            name = key[len(Settings.ENV_PREFIX):].lower()
            # LOG_LEVEL and other non-run variables share the prefix
            if name == "subcommand" or name not in _PARSERS:
                continue
            values[name] = _coerce(name, value)

        if config_path:
            path = Path(config_path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {config_path}")
            for key, value in dotenv_values(path).items():
                name = key.strip().lower().replace("-", "_")
                if name == "subcommand" or name not in _PARSERS:
                    logger.debug("ignoring config key %s", key)
                    continue
                if value is None:
                    continue
                values[name] = _coerce(name, value)

        for key, value in (flags or {}).items():
            name = key.replace("-", "_")
            if value is None or name not in _PARSERS:
                continue
            values[name] = _coerce(name, value)

        config = cls(subcommand=subcommand, **values)
        if config.seed is None:
            config.seed = generate_seed()
            logger.info("no seed given, using generated seed %d", config.seed)
        config.validate()
        return config

    def validate(self) -> None:
        """Raise ConfigError on any out-of-range setting"""
        checks = [
            (self.k >= 1, f"k must be >= 1, got {self.k}"),
            (self.order >= 1, f"order must be >= 1, got {self.order}"),
            (self.bin_hours >= 1 and 24 % self.bin_hours == 0, f"bin-hours must divide 24, got {self.bin_hours}"),
            (self.gap_seconds > 0, f"gap-seconds must be positive, got {self.gap_seconds}"),
            (self.min_len >= 1, f"min-len must be >= 1, got {self.min_len}"),
            (bool(self.delimiter), "delimiter must not be empty"),
            (self.alpha is None or self.alpha > 0, f"alpha must be positive, got {self.alpha}"),
            (min(self.beta, self.eta, self.gamma) > 0, "beta, eta and gamma must be positive"),
            (self.iterations >= 0, f"iterations must be >= 0, got {self.iterations}"),
            (self.average_last >= 1, f"average-last must be >= 1, got {self.average_last}"),
            (self.fold_in_iterations >= 1, f"fold-in-iterations must be >= 1, got {self.fold_in_iterations}"),
            (self.folds >= 2, f"folds must be >= 2, got {self.folds}"),
            (bool(self.topn) and min(self.topn) >= 1, f"topn values must be >= 1, got {self.topn}"),
            (self.q >= 1, f"q must be >= 1, got {self.q}"),
            (self.pmi_epsilon >= 0, f"pmi-epsilon must be >= 0, got {self.pmi_epsilon}"),
            (self.aggregation in AGGREGATIONS, f"aggregation must be one of {AGGREGATIONS}"),
            (self.model_encoding in MODEL_ENCODINGS, f"model-encoding must be one of {MODEL_ENCODINGS}"),
            (self.jobs >= 1, f"jobs must be >= 1, got {self.jobs}"),
            (self.param is None or self.param in SWEEP_PARAMS, f"param must be one of {SWEEP_PARAMS}"),
            (self.seed is None or self.seed >= 0, f"seed must be >= 0, got {self.seed}"),
            (
                min(self.sim_sequences, self.sim_objects, self.sim_bins, self.sim_trajectories, self.sim_units) >= 1,
                "simulation sizes must be >= 1",
            ),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        parse_components(self.components)

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.alpha is not None else Settings.default_alpha(self.k)

    def to_model_config(self) -> ModelConfig:
        """Build the ModelConfig these settings describe"""
        return ModelConfig(
            K=self.k,
            r=self.order,
            alpha=self.alpha,
            beta=self.beta,
            eta=self.eta,
            gamma=self.gamma,
            components=frozenset(self.components),
        )

    def with_values(self, **changes: Any) -> "RunConfig":
        """Copy with some settings replaced (re-validated)"""
        config = replace(self, **changes)
        config.validate()
        return config

    def to_items(self) -> List[Tuple[str, str]]:
        """Serialize every setting as (key, text) pairs, in field order"""
        items = []
        for f in fields(self):
            items.append((f.name, _format_value(getattr(self, f.name))))
        items.append(("alpha_effective", repr(float(self.effective_alpha))))
        return items


def generate_seed() -> int:
    """Fresh 32-bit seed drawn from OS entropy"""
    return int(np.random.SeedSequence().generate_state(1)[0])


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(item) for item in value)
    return str(value)


_PARSERS: Dict[str, Callable[[Any], Any]] = {
    "input": _optional(_text),
    "corpus": _optional(_text),
    "model": _optional(_text),
    "out": _optional(_text),
    "trace": _optional(_text),
    "inspect_out": _optional(_text),
    "seed": _optional(int),
    "gap_seconds": float,
    "min_len": int,
    "order": int,
    "bin_hours": int,
    "tz_offset": float,
    "delimiter": _text,
    "k": int,
    "alpha": _optional(float),
    "beta": float,
    "eta": float,
    "gamma": float,
    "components": parse_components,
    "iterations": int,
    "average_last": int,
    "fold_in_iterations": int,
    "model_encoding": _text,
    "folds": int,
    "topn": parse_int_list,
    "q": int,
    "pmi_epsilon": float,
    "aggregation": _text,
    "factor": _optional(int),
    "sim_sequences": int,
    "sim_objects": int,
    "sim_bins": int,
    "sim_trajectories": int,
    "sim_units": int,
    "locations": _optional(_text),
    "timestamps": _optional(_text),
    "obj": _optional(_text),
    "param": _optional(_text),
    "values": _optional(_text),
    "jobs": int,
}


def _coerce(name: str, value: Any) -> Any:
    try:
        return _PARSERS[name](value)
    except ConfigError:
        raise
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name}: {value!r}") from None
