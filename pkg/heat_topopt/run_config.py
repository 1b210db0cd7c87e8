"""
Run configuration: JSON documents validated into pydantic models.

Defaults reproduce the reference heat-sink problem: N = 64, uniform source
f = 1e-2, ersatz conductivity 1e-3, volume fraction 0.4, penalization 4 and
a sink of length 0.2 centred on the left side.
"""

from typing import Any, Dict, List, Literal, Optional
import copy
import json
import logging

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError
from .grid import BoundarySpec, ModelGrid, SinkSegment
from .optimizer import OptimizerConfig

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SinkConfig(_Section):
    side: Literal["bottom", "right", "top", "left"] = "left"
    center: float = Field(0.5, ge=0.0, le=1.0)
    length: float = Field(0.2, gt=0.0, le=1.0)


class ProblemConfig(_Section):
    N: int = Field(64, ge=2)
    f: float = Field(1e-2, ge=0.0)
    gamma: float = Field(1e-3, gt=0.0, lt=1.0)
    V: float = Field(0.4, gt=0.0, le=1.0)
    p: float = Field(4.0, ge=1.0)
    sinks: List[SinkConfig] = Field(default_factory=lambda: [SinkConfig()], min_length=1)

    @model_validator(mode="after")
    def _volume_reachable(self):
        if self.V < self.gamma:
            raise ValueError(f"V={self.V} lies below gamma={self.gamma}; no admissible design")
        return self


class DiscretizationConfig(_Section):
    order: Literal[1, 2] = 1
    r: int = Field(1, ge=1)
    linear_solver: Literal["auto", "cg", "direct"] = "auto"


class OptimizerSection(_Section):
    C: float = Field(1.0, ge=0.0)
    move_limit: float = Field(0.2, gt=0.0, le=1.0)
    change_tol: float = Field(0.01, gt=0.0)
    max_iters: int = Field(400, ge=0)
    # In units of the ground-cell width H.
    filter_radius: float = Field(0.0, ge=0.0)


class OutputConfig(_Section):
    directory: Optional[str] = None
    snapshot_every: int = Field(0, ge=0)
    image_scale: int = Field(1, ge=1)
    write_heatmap: bool = True


class RunConfig(_Section):
    """Everything needed to reproduce one optimization run."""
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    discretization: DiscretizationConfig = Field(default_factory=DiscretizationConfig)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    outputs: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _gradients_available(self):
        if self.discretization.order == 2 and self.optimizer.C > 0:
            raise ValueError("order 2 runs support C = 0 only (estimator gradients are Q1)")
        return self

    def boundary_spec(self) -> BoundarySpec:
        return BoundarySpec(tuple(SinkSegment(s.side, s.center, s.length) for s in self.problem.sinks))

    def model_grid(self) -> ModelGrid:
        return ModelGrid(self.problem.N, self.discretization.r)

    def optimizer_config(self) -> OptimizerConfig:
        problem, opt = self.problem, self.optimizer
        return OptimizerConfig(
            C=opt.C,
            p=problem.p,
            V=problem.V,
            gamma=problem.gamma,
            max_iters=opt.max_iters,
            move_limit=opt.move_limit,
            change_tol=opt.change_tol,
            filter_radius=opt.filter_radius / problem.N,
            order=self.discretization.order,
            linear_solver=self.discretization.linear_solver,
        )

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """A validated copy with nested overrides merged in."""
        return _validate(_merge(self.model_dump(mode="json"), overrides))

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2)


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _validate(data: Any) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        errors = []
        for err in exc.errors():
            path = ".".join(str(part) for part in err["loc"]) or "<root>"
            errors.append(f"{path}: {err['msg']}")
        raise ConfigError("Invalid run configuration: " + "; ".join(errors), errors) from None


# Named starting points; the comparison variants share the model grid of the base run.
PRESETS: Dict[str, Dict[str, Any]] = {
    "default": {},
    "checkerboard": {"optimizer": {"C": 0.0}},
    "corrected": {"optimizer": {"C": 1.2}},
    "p3-n64": {"problem": {"p": 3.0, "N": 64}, "optimizer": {"C": 1.1}},
    "p3-n128": {"problem": {"p": 3.0, "N": 128}, "optimizer": {"C": 0.8}},
    "refined": {"optimizer": {"C": 0.0}, "discretization": {"r": 2}},
    "biquadratic": {"optimizer": {"C": 0.0}, "discretization": {"order": 2}},
    "filter-small": {"optimizer": {"C": 0.0, "filter_radius": 1.6}},
    "filter-large": {"optimizer": {"C": 0.0, "filter_radius": 4.0}},
}

COMPARISON_VARIANTS = ["checkerboard", "refined", "biquadratic", "filter-small", "filter-large", "corrected"]


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}' (available: {', '.join(PRESETS)})", [f"preset: {name}"])
    return _validate(PRESETS[name])


def parse_config(text: str, preset_name: Optional[str] = None) -> RunConfig:
    """
    Parse a JSON run configuration.

    Args:
        text: JSON document; empty or whitespace-only means all defaults
        preset_name: Optional preset the document is merged onto

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: malformed JSON, unknown keys, type or range violations
    """
    data: Dict[str, Any] = {}
    if text and text.strip():
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Configuration is not valid JSON: {exc}", [f"<root>: {exc.msg}"]) from None
        if not isinstance(data, dict):
            raise ConfigError("Configuration must be a JSON object", ["<root>: expected an object"])
    if preset_name is not None:
        preset(preset_name)
        data = _merge(PRESETS[preset_name], data)
    return _validate(data)


def load_config(path: Optional[str] = None, preset_name: Optional[str] = None) -> RunConfig:
    """Read a configuration file (or only the preset when path is None)."""
    text = ""
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"Cannot read configuration {path}: {exc}", [f"<file>: {path}"]) from exc
    cfg = parse_config(text, preset_name)
    logger.debug(f"Loaded configuration from {path or 'defaults'} (preset {preset_name})")
    return cfg
