"""Scenario configuration models.

Every experiment is described by a :class:`ScenarioConfig`, normally loaded
from a YAML file with :func:`load_config`. Validation is exhaustive: each
out-of-range field is reported with its dotted path.
"""

from __future__ import annotations

import enum
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

SCHEMA_VERSION = 1

ALPHA_PARAMS = ("signal_dbm", "bandwidth_mbps", "latency_ms", "online")


class ConfigError(Exception):
    """Raised for unreadable, unparsable or semantically invalid configs."""

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = problems or []


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class Family(str, enum.Enum):
    GAUSSIAN = "Gaussian"
    LOGNORMAL = "LogNormal"
    RAYLEIGH = "Rayleigh"
    NONPARAMETRIC = "Nonparametric"


class RainCell(_Model):
    center_x: float
    center_y: float
    radius_m: float = Field(gt=0)
    rate_db_per_km: float = Field(ge=0)

    def covers(self, x: float, y: float) -> bool:
        return (x - self.center_x) ** 2 + (y - self.center_y) ** 2 <= self.radius_m**2


class EnvironmentModel(_Model):
    rain_cells: list[RainCell] = Field(default_factory=list)
    rain_decay_gamma: float = Field(default=0.0, ge=0, description="1/km")
    rain_scale_c: float = Field(default=1.0, ge=0)
    rain_height_km: float = Field(default=4.0, gt=0)
    shadow_sigma: float = Field(default=0.0, ge=0, description="std-dev of ln(shadow factor)")
    multipath_sigma: float = Field(default=0.0, ge=0, description="Rayleigh scale")
    awgn_sigma: float = Field(default=0.0, ge=0, description="linear power std-dev, mW")

    def rain_rate_at(self, x: float, y: float) -> float:
        """Attenuation per km at a horizontal position (step profile, cells add)."""
        return sum(c.rate_db_per_km for c in self.rain_cells if c.covers(x, y))


class LinkSpec(_Model):
    tx_power_dbm: float = 30.0
    tx_gain_db: float = 35.0
    rx_gain_db: float = 33.0
    wavelength_m: float = Field(default=0.025, gt=0)
    altitude_m: float = Field(default=550_000.0, gt=0)
    sensitivity_dbm: float = -90.0
    noise_floor_dbm: float = -100.0
    channel_mhz: float = Field(default=50.0, gt=0)
    base_latency_ms: float = Field(default=20.0, ge=0)
    no_service_dbm: float = -110.0
    failure_scale_db: float = Field(default=2.0, gt=0)


class ClusterSpec(_Model):
    center_x: float
    center_y: float
    radius_m: float = Field(gt=0)
    count: int = Field(ge=1)
    satellite: int = Field(default=0, ge=0)


class GeometrySpec(_Model):
    radius_m: float = Field(default=5_000.0, gt=0)
    spacing_m: float = Field(default=50_000.0, gt=0)
    clusters: list[ClusterSpec] = Field(default_factory=list)
    field_sigma: float = Field(default=1.0, ge=0, description="std-dev of honest pairwise signal differences, dB")
    temporal_sigma: float = Field(default=0.25, ge=0, description="std-dev of consecutive-epoch differences, dB")
    epoch_seconds: float = Field(default=60.0, gt=0)

    @model_validator(mode="after")
    def _temporal_fits(self):
        if self.temporal_sigma > self.field_sigma:
            raise ValueError("temporal_sigma must not exceed field_sigma")
        return self


class PriorSet(_Model):
    n_clusters: int = Field(default=2, ge=1)
    component_families: list[Family] = Field(default_factory=lambda: [Family.GAUSSIAN, Family.GAUSSIAN], min_length=1)
    init_theta: Optional[dict] = None

    def families(self) -> list[Family]:
        fams = list(self.component_families)
        while len(fams) < self.n_clusters:
            fams.append(fams[-1])
        return fams[: self.n_clusters]


def _default_theta_r() -> dict[str, float]:
    return {"signal_dbm": 4.0, "bandwidth_mbps": 70.0, "latency_ms": 1.0}


class PodConfig(_Model):
    gamma_s: float = Field(default=1.0, ge=0)
    gamma_t: float = Field(default=0.5, ge=0)
    sigma_alpha: float = Field(default=1_000.0, gt=0, description="spatial kernel length scale, m")
    sigma_t: float = Field(default=120.0, gt=0, description="temporal kernel scale, s")
    theta_r: dict[str, float] = Field(default_factory=_default_theta_r)
    theta_eps: float = Field(default=1e-6, gt=0)
    max_iters: int = Field(default=32, ge=1)
    kernel: Literal["exact", "poly"] = "exact"
    kernel_terms: int = Field(default=20, ge=1)
    neighborhood_radius: float = Field(default=3_000.0, gt=0)
    params: list[str] = Field(default_factory=lambda: ["signal_dbm", "bandwidth_mbps", "latency_ms"], min_length=1)
    priors: PriorSet = Field(default_factory=PriorSet)
    objective_fraction: float = Field(default=0.25, ge=0, le=1)

    @field_validator("theta_r")
    @classmethod
    def _positive_radii(cls, v: dict[str, float]):
        for k, r in v.items():
            if not r > 0:
                raise ValueError(f"theta_r[{k}] must be > 0")
        return v

    @model_validator(mode="after")
    def _params_known(self):
        for p in self.params:
            if p not in ALPHA_PARAMS:
                raise ValueError(f"unknown alpha parameter {p!r}")
            if p not in self.theta_r:
                raise ValueError(f"theta_r missing entry for {p!r}")
        return self

    def radius(self, param: str) -> float:
        return self.theta_r[param]


class EpochConfig(_Model):
    n_epoch_blocks: int = Field(default=2, ge=1)
    queue_size: int = Field(default=4, ge=1)
    gas_limit: int = Field(default=100, ge=1)
    skip_timer_limit: int = Field(default=10, ge=1)
    epoch_window: int = Field(default=20, ge=1)
    windows_per_epoch: int = Field(default=1, ge=1)
    vdf_difficulty: int = Field(default=64, ge=1)
    proposal_deadline: int = Field(default=5, ge=1)
    proof_deadline_blocks: int = Field(default=10, ge=1)
    commit_delay: int = Field(default=2, ge=1)


class FlowSpec(_Model):
    packets_per_window: int = Field(default=16, ge=1)
    packet_bytes: int = Field(default=128, ge=1)
    confidence: float = Field(default=0.999, gt=0, lt=1)


class RewardSpec(_Model):
    r_pod: float = Field(default=1.0, ge=0)
    r_pof: float = Field(default=1.0, ge=0)
    p_fraud: float = Field(default=2.0, ge=0)
    corroboration_tolerance_db: float = Field(default=6.0, gt=0)
    w_stake: float = Field(default=1.0, ge=0)
    w_pod: float = Field(default=1.0, ge=0)
    w_pof: float = Field(default=1.0, ge=0)
    slash_fraction: float = Field(default=0.1, ge=0, le=1)


class ConsensusFault(_Model):
    kind: Literal["crash", "tamper_weight", "tamper_proof", "invalid_tx", "late_proof"]
    node: Optional[str] = None
    epochs: list[int] = Field(default_factory=list)


class ConsensusSpec(_Model):
    stake: float = Field(default=100.0, ge=0)
    stakes: Optional[list[float]] = None
    max_vote_delay: int = Field(default=3, ge=0)
    random_crashes: bool = False
    faults: list[ConsensusFault] = Field(default_factory=list)
    txs_per_epoch: int = Field(default=6, ge=0)
    invalid_tx_fraction: float = Field(default=0.0, ge=0, le=1)
    mesh_quorum: int = Field(default=2, ge=1)

    @field_validator("stakes")
    @classmethod
    def _non_negative(cls, v):
        if v is not None and any(s < 0 for s in v):
            raise ValueError("stakes must be non-negative")
        return v


class FraudKind(str, enum.Enum):
    RFRAUD = "RFraud"
    TFRAUD = "TFraud"
    CORPORATE = "CorporateFraud"
    OBJECTIVE = "ObjectiveFailure"


class FraudInjection(_Model):
    kind: FraudKind
    fraction: Optional[float] = Field(default=None, ge=0, le=1)
    targets: list[str] = Field(default_factory=list)
    transmitter: Optional[int] = Field(default=None, ge=0)
    magnitude: float = Field(default=5.0, ge=0, description="alpha offset in units of field_sigma")
    rain: Optional[RainCell] = None
    epochs_active: Optional[list[int]] = None

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind == FraudKind.OBJECTIVE and self.rain is None:
            raise ValueError("ObjectiveFailure requires a rain cell")
        if self.kind in (FraudKind.TFRAUD, FraudKind.CORPORATE) and self.transmitter is None:
            raise ValueError(f"{self.kind.value} requires a transmitter index")
        return self

    def active(self, epoch: int) -> bool:
        return self.epochs_active is None or epoch in self.epochs_active


class ScenarioConfig(_Model):
    v: int = SCHEMA_VERSION
    name: str = "scenario"
    seed: int = Field(default=0, ge=0, lt=2**64)
    n_satellites: int = Field(default=1, ge=1)
    n_receivers: int = Field(default=100, ge=1)
    n_validators: int = Field(default=4, ge=1)
    epochs: int = Field(default=10, ge=1)
    link: LinkSpec = Field(default_factory=LinkSpec)
    geometry: GeometrySpec = Field(default_factory=GeometrySpec)
    env: EnvironmentModel = Field(default_factory=EnvironmentModel)
    epoch_config: EpochConfig = Field(default_factory=EpochConfig)
    pod_config: PodConfig = Field(default_factory=PodConfig)
    flow: FlowSpec = Field(default_factory=FlowSpec)
    rewards: RewardSpec = Field(default_factory=RewardSpec)
    consensus: ConsensusSpec = Field(default_factory=ConsensusSpec)
    fraud_spec: list[FraudInjection] = Field(default_factory=list)

    @model_validator(mode="after")
    def _cross_checks(self):
        total = sum(f.fraction or 0.0 for f in self.fraud_spec)
        if total > 1.0 + 1e-12:
            raise ValueError(f"fraud_spec fractions sum to {total:g} > 1")
        for f in self.fraud_spec:
            if f.transmitter is not None and f.transmitter >= self.n_satellites:
                raise ValueError(f"fraud_spec transmitter {f.transmitter} >= n_satellites")
        for c in self.geometry.clusters:
            if c.satellite >= self.n_satellites:
                raise ValueError(f"cluster satellite {c.satellite} >= n_satellites")
        if self.consensus.stakes is not None and len(self.consensus.stakes) != self.n_validators:
            raise ValueError("consensus.stakes length must equal n_validators")
        return self

    def dump(self) -> dict:
        return self.model_dump(mode="json")


def _format_errors(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        # cross-field validators report at the model root; name the field they guard
        msg = e["msg"]
        if path == "<root>" and "fraud_spec" in msg:
            path = "fraud_spec"
        out.append(f"{path}: {msg}")
    return out


def parse_config(data: dict | None) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data or {})
    except ValidationError as err:
        problems = _format_errors(err)
        raise ConfigError("invalid scenario config:\n  " + "\n  ".join(problems), problems) from None


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"parse error in {path}{where}: {getattr(err, 'problem', err)}") from err
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data)


def dump_config(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config.dump(), sort_keys=True)


def config_schema() -> dict:
    return ScenarioConfig.model_json_schema()

