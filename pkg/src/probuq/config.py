"""Declarative run configuration (YAML) for the command-line interface.

Every section rejects unknown keys. Relative file paths are resolved
against the directory that holds the configuration file.
"""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import distributions as dist_mod
from .acquisition import AcquisitionKind
from .errors import ConfigError
from .harness import BUILTINS, ModelSpec
from .trainers import AdamConfig, MhTrainerConfig

WORKFLOWS = (
    "bayesian_optimization",
    "inverse_uq",
    "subset_simulation",
    "importance_sampling",
    "forward_uq",
    "train_surrogate",
    "predict",
    "pca",
)

# Sections each workflow cannot run without.
REQUIRED_SECTIONS = {
    "bayesian_optimization": ("model", "distributions"),
    "inverse_uq": ("model", "distributions", "calibration"),
    "subset_simulation": ("model", "distributions"),
    "importance_sampling": ("model", "distributions"),
    "forward_uq": ("model", "distributions"),
    "train_surrogate": ("model", "distributions"),
    "predict": ("predict",),
    "pca": ("pca",),
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Strict):
    kind: Literal["builtin", "external"] = "builtin"
    name: Optional[str] = None
    params: dict = Field(default_factory=dict)
    command: Optional[str] = None
    output_file: Optional[str] = None
    timeout: Optional[float] = Field(default=None, gt=0)
    env_passthrough: Optional[list[str]] = None
    failure_policy: Literal["nan", "raise"] = "nan"

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "builtin" and self.name not in BUILTINS:
            raise ValueError(f"unknown builtin model {self.name!r}; valid: {', '.join(sorted(BUILTINS))}")
        try:
            self.build()
        except ConfigError as exc:
            raise ValueError(str(exc)) from None
        return self

    def build(self) -> ModelSpec:
        if self.kind == "builtin":
            return ModelSpec.builtin(self.name, **self.params)
        return ModelSpec.external(self.command, self.output_file, self.timeout, self.env_passthrough)


class DistributionSection(_Strict):
    name: Optional[str] = None
    kind: Literal["uniform", "normal", "lognormal", "truncatednormal"]
    lower: Optional[float] = None
    upper: Optional[float] = None
    mean: Optional[float] = None
    std: Optional[float] = None
    mu: Optional[float] = None
    sigma: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "uniform" and (self.lower is None or self.upper is None):
            raise ValueError("uniform needs lower and upper")
        try:
            self.build()
        except (ValueError, TypeError) as exc:
            raise ValueError(str(exc)) from None
        return self

    def build(self) -> dist_mod.Distribution:
        d = {k: v for k, v in self.model_dump().items() if v is not None and k != "name"}
        if self.kind == "truncatednormal":
            d.setdefault("lower", -math.inf)
            d.setdefault("upper", math.inf)
        return dist_mod.from_dict(d)


class TrainerSection(_Strict):
    kind: Literal["adam", "mh"] = "adam"
    learning_rate: float = Field(0.05, gt=0)
    iterations: int = Field(300, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = Field(0.0, ge=0)
    decoupled: bool = False
    batch_size: Union[int, Literal["full"]] = "full"
    schedule: Literal["constant", "cosine"] = "constant"
    samples: int = Field(2000, ge=1)
    proposal_scale: float = Field(0.1, ge=0)

    def build(self, seed: int):
        if self.kind == "mh":
            return MhTrainerConfig(self.samples, self.proposal_scale, (), seed)
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.epsilon, self.weight_decay,
                          self.iterations, self.batch_size, self.schedule, self.decoupled, seed)


class AcquisitionSection(_Strict):
    kind: str = "ExpectedImprovement"
    lam: Optional[float] = None  # workflow default when omitted: 0 for optimization, 1 for calibration

    @field_validator("kind")
    @classmethod
    def _kind(cls, v):
        valid = [k.value for k in AcquisitionKind]
        if v not in valid:
            raise ValueError(f"unknown acquisition {v!r}; valid: {', '.join(valid)}")
        return v


class LearnerSection(_Strict):
    batch_size: int = Field(2, ge=1)
    iterations: int = Field(15, ge=0)
    pool_size: int = Field(500, ge=1)
    warmup: int = Field(5, ge=2)
    convergence_tol: Optional[float] = Field(default=None, gt=0)
    convergence_window: int = Field(5, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.batch_size > self.pool_size:
            raise ValueError("batch_size must not exceed pool_size")
        return self


class McmcSection(_Strict):
    kind: Literal["de", "stretch", "mh"] = "de"
    chains: int = Field(50, ge=1)
    steps: int = Field(500, ge=1)
    burn_in: int = Field(100, ge=0)
    stretch_a: float = Field(2.0, ge=1)
    gamma: Optional[float] = None
    jitter_b: float = Field(1e-6, ge=0)
    proposal_scale: float = Field(0.1, ge=0)
    trace: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.burn_in >= self.steps:
            raise ValueError("burn_in must be smaller than steps")
        if self.kind == "de" and self.chains < 3:
            raise ValueError("differential evolution needs at least 3 chains")
        if self.kind == "stretch" and self.chains < 2:
            raise ValueError("the stretch move needs at least 2 chains")
        return self

    def sampler_kwargs(self) -> dict:
        if self.kind == "stretch":
            return {"stretch_a": self.stretch_a}
        if self.kind == "de":
            return {"gamma": self.gamma, "jitter_b": self.jitter_b}
        return {"proposal_scales": self.proposal_scale}


class SubsetSection(_Strict):
    n_per_subset: int = Field(2000, ge=2)
    p0: float = Field(0.1, gt=0)
    threshold: float = 0.0
    max_subsets: int = Field(20, ge=1)
    chains: Optional[int] = Field(default=None, ge=1)
    sense: Literal["greater", "less"] = "greater"
    proposal_std: float = Field(1.0, gt=0)
    active_learning: bool = False
    u_threshold: float = Field(2.0, ge=0)
    n_warmup: int = Field(10, ge=2)


class ImportanceSection(_Strict):
    n_adapt: int = Field(1000, ge=2)
    n_estimate: int = Field(10000, ge=2)
    threshold: float = 0.0
    sense: Literal["greater", "less"] = "greater"
    proposal_scale: float = Field(1.0, gt=0)


class ForwardSection(_Strict):
    method: Literal["mc", "lhs"] = "mc"
    samples: int = Field(1000, ge=1)
    quantiles: list[float] = Field(default_factory=lambda: [0.05, 0.5, 0.95])

    @field_validator("quantiles")
    @classmethod
    def _q(cls, v):
        if any(not 0 <= q <= 1 for q in v):
            raise ValueError("quantiles must lie in [0, 1]")
        return v


class LikelihoodSection(_Strict):
    family: Literal["gaussian", "truncated"] = "gaussian"
    lower: float = -math.inf
    upper: float = math.inf


class PredictiveSection(_Strict):
    configuration: list[float]
    draws: int = Field(200, ge=1)


class CalibrationSection(_Strict):
    data: Optional[str] = None
    observation_column: Optional[str] = None
    configurations: Optional[list[list[float]]] = None
    observations: Optional[list[float]] = None
    likelihood: LikelihoodSection = Field(default_factory=LikelihoodSection)
    sigma_prior: Optional[DistributionSection] = None
    fixed_sigma: Optional[float] = Field(default=None, gt=0)
    method: Literal["direct", "surrogate"] = "direct"
    predictive: Optional[PredictiveSection] = None

    @model_validator(mode="after")
    def _check(self):
        inline = self.observations is not None
        if self.data is None and not inline:
            raise ValueError("give either 'data' (CSV path) or inline 'observations'")
        if self.data is not None and inline:
            raise ValueError("'data' and inline 'observations' are mutually exclusive")
        if inline and self.configurations is not None and len(self.configurations) != len(self.observations):
            raise ValueError("one configuration row per observation is required")
        if (self.sigma_prior is None) == (self.fixed_sigma is None):
            raise ValueError("give exactly one of 'sigma_prior' or 'fixed_sigma'")
        return self


class SurrogateSection(_Strict):
    kind: Literal["gp", "mogp", "dgp"] = "gp"
    design: Literal["mc", "lhs"] = "lhs"
    training_samples: int = Field(30, ge=2)
    test_samples: int = Field(0, ge=0)
    Q: int = Field(1, ge=1)
    R: int = Field(1, ge=1)
    dgp_samples: int = Field(2000, ge=2)
    dgp_burn_in: Optional[int] = Field(default=None, ge=0)
    dgp_thinning: int = Field(10, ge=1)
    hidden_nodes: Optional[int] = Field(default=None, ge=1)


class PredictSection(_Strict):
    surrogate: str
    inputs: str


class PcaSection(_Strict):
    snapshots: Optional[str] = None
    tau: float = Field(1e-6, gt=0, lt=1)
    centering: bool = True
    training_samples: int = Field(120, ge=2)
    test_samples: int = Field(0, ge=0)
    fit_mogp: bool = False
    design: Literal["mc", "lhs"] = "lhs"


class RunConfig(_Strict):
    workflow: Literal[WORKFLOWS]  # type: ignore[valid-type]
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
    max_concurrency: int = Field(1, ge=1)
    model: Optional[ModelSection] = None
    distributions: list[DistributionSection] = Field(default_factory=list)
    trainer: TrainerSection = Field(default_factory=TrainerSection)
    acquisition: AcquisitionSection = Field(default_factory=AcquisitionSection)
    learner: LearnerSection = Field(default_factory=LearnerSection)
    mcmc: McmcSection = Field(default_factory=McmcSection)
    subset: SubsetSection = Field(default_factory=SubsetSection)
    importance: ImportanceSection = Field(default_factory=ImportanceSection)
    forward: ForwardSection = Field(default_factory=ForwardSection)
    calibration: Optional[CalibrationSection] = None
    surrogate: SurrogateSection = Field(default_factory=SurrogateSection)
    predict: Optional[PredictSection] = None
    pca: Optional[PcaSection] = None

    @model_validator(mode="after")
    def _required(self):
        for name in REQUIRED_SECTIONS[self.workflow]:
            value = getattr(self, name)
            if value is None or (name == "distributions" and not value):
                raise ValueError(f"{name}: section is required for workflow '{self.workflow}'")
        if self.workflow == "pca" and self.pca.snapshots is None and self.model is None:
            raise ValueError("pca needs either 'pca.snapshots' or a 'model' with 'distributions'")
        if self.workflow == "pca" and self.pca.fit_mogp and self.pca.snapshots is not None:
            raise ValueError("pca.fit_mogp needs model-generated snapshots; drop 'pca.snapshots'")
        if self.workflow == "pca" and self.pca.snapshots is None and not self.distributions:
            raise ValueError("section 'distributions' is required to sample pca training inputs")
        return self

    def priors(self):
        return [d.build() for d in self.distributions]

    def effective(self) -> dict:
        """Resolved configuration echoed into reports (output location excluded)."""
        d = self.model_dump(mode="json")
        d.pop("output_dir", None)
        return d


# ---------------------------------------------------------------- loading


def _parse_value(text: str):
    return yaml.safe_load(text) if text.strip() else ""


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` assignments (values parsed as YAML scalars)."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        node = out
        for p in parts[:-1]:
            if isinstance(node, list):
                node = node[int(p)]
                continue
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, (dict, list)):
                raise ConfigError(f"override {item!r}: '{p}' is not a section")
            node = nxt
        if isinstance(node, list):
            node[int(parts[-1])] = _parse_value(value)
        else:
            node[parts[-1]] = _parse_value(value)
    return out


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        lines.append(f"{loc}: {msg}" if loc else msg)
    return "\n".join(lines)


def _resolve_paths(cfg: RunConfig, base: Path) -> RunConfig:
    def fix(p):
        if p is None:
            return None
        q = Path(p).expanduser()
        return str(q if q.is_absolute() else (base / q).resolve())

    if cfg.calibration is not None and cfg.calibration.data is not None:
        cfg.calibration.data = fix(cfg.calibration.data)
    if cfg.predict is not None:
        cfg.predict.surrogate = fix(cfg.predict.surrogate)
        cfg.predict.inputs = fix(cfg.predict.inputs)
    if cfg.pca is not None and cfg.pca.snapshots is not None:
        cfg.pca.snapshots = fix(cfg.pca.snapshots)
    return cfg


def build_config(raw, base_dir=".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration document must be a mapping")
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None
    return _resolve_paths(cfg, Path(base_dir))


def load_config(path, overrides=()) -> RunConfig:
    """Read, override and validate a YAML configuration; raises :class:`ConfigError`."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from None
    if raw is None:
        raise ConfigError(f"{path}: empty configuration")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: configuration document must be a mapping")
    return build_config(apply_overrides(raw, overrides), path.parent)
