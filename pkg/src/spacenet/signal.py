"""Received-signal model for satellite to ground links.

Power budget in dB: transmit power plus antenna gains, free-space path loss,
rain attenuation along the slant path, log-normal shadowing, Rayleigh
multipath and additive white Gaussian noise in linear power.

``generate_field`` turns a scenario into per-receiver state samples whose
honest part obeys the spatial and temporal continuity assumptions the
estimators rely on: two honest receivers differ by N(0, field_sigma^2) and
one receiver's consecutive epochs differ by N(0, temporal_sigma^2).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .seeds import rng_for

if TYPE_CHECKING:
    from .config import EnvironmentModel, LinkSpec, RainCell, ScenarioConfig

SPEED_OF_LIGHT = 299_792_458.0
MIN_POWER_MW = 1e-30


class DomainError(ValueError):
    """Input outside the physical domain of a model."""


class Label(str, enum.Enum):
    HONEST = "Honest"
    RFRAUD = "RFraud"
    TFRAUD = "TFraud"
    CORPORATE = "Corporate"
    OBJECTIVE = "Objective"


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise DomainError(f"non-finite position {self}")

    def distance_to(self, other: "Position") -> float:
        return math.sqrt((self.x - other.x) ** 2 + (self.y - other.y) ** 2 + (self.z - other.z) ** 2)


@dataclass(frozen=True)
class LinkBudget:
    tx_power_dbm: float
    tx_gain_db: float
    rx_gain_db: float
    wavelength_m: float
    distance_m: float

    def __post_init__(self):
        if not self.wavelength_m > 0:
            raise DomainError("wavelength_m must be > 0")
        if not self.distance_m > 0:
            raise DomainError("distance_m must be > 0")
        if not (math.isfinite(self.tx_gain_db) and math.isfinite(self.rx_gain_db)):
            raise DomainError("gains must be finite")


@dataclass
class StateSample:
    receiver_id: str
    transmitter_id: str
    position: Position
    time: float
    alpha: dict[str, float]
    honesty_label: Label = Label.HONEST
    # simulator-only ground truth; estimators never read these
    truth: dict[str, float] = field(default_factory=dict, repr=False)
    actual_signal_dbm: float | None = field(default=None, repr=False)

    def public(self) -> dict:
        return {
            "receiver": self.receiver_id,
            "transmitter": self.transmitter_id,
            "pos": [self.position.x, self.position.y, self.position.z],
            "time": self.time,
            "alpha": dict(self.alpha),
        }

    @classmethod
    def from_public(cls, rec: dict) -> "StateSample":
        return cls(
            receiver_id=rec["receiver"],
            transmitter_id=rec["transmitter"],
            position=Position(*rec["pos"]),
            time=rec["time"],
            alpha=dict(rec["alpha"]),
        )


def free_space_loss_db(distance_m: float, wavelength_m: float) -> float:
    """Free-space path loss as a (negative) gain in dB."""
    if not distance_m > 0 or not wavelength_m > 0:
        raise DomainError("distance and wavelength must be positive")
    return -20.0 * math.log10(4.0 * math.pi * distance_m / wavelength_m)


def rain_attenuation_db(path: Iterable[tuple[Position, float]], env: "EnvironmentModel") -> float:
    """Rain loss along a path given as (segment midpoint, length in km) pairs.

    The rain profile is constant on each segment, so the exponential decay
    is integrated exactly per segment; splitting a segment into pieces does
    not change the result.
    """
    gamma = env.rain_decay_gamma
    total = 0.0
    travelled = 0.0
    for pos, length in path:
        if length < 0:
            raise DomainError(f"negative segment length {length}")
        rate = env.rain_rate_at(pos.x, pos.y)
        if rate and length:
            if gamma == 0.0:
                total += rate * length
            else:
                total += rate * (math.exp(-gamma * travelled) - math.exp(-gamma * (travelled + length))) / gamma
        travelled += length
    return env.rain_scale_c * total


def sample_shadow_fading(rng: np.random.Generator, shadow_sigma: float) -> float:
    if shadow_sigma == 0:
        return 1.0
    return float(np.exp(rng.normal(0.0, shadow_sigma)))


def sample_multipath_fading(rng: np.random.Generator, multipath_sigma: float) -> float:
    # sigma == 0 disables fading (factor 1), not the degenerate Rayleigh value 0
    if multipath_sigma == 0:
        return 1.0
    return float(rng.rayleigh(multipath_sigma))


def received_power_dbm(
    link: LinkBudget,
    env: "EnvironmentModel",
    rng: np.random.Generator,
    rain_path: Sequence[tuple[Position, float]] = (),
) -> float:
    power = link.tx_power_dbm + link.tx_gain_db + link.rx_gain_db
    power += free_space_loss_db(link.distance_m, link.wavelength_m)
    power -= rain_attenuation_db(rain_path, env)
    shadow = sample_shadow_fading(rng, env.shadow_sigma)
    multipath = sample_multipath_fading(rng, env.multipath_sigma)
    power += 10.0 * math.log10(shadow) + 20.0 * math.log10(max(multipath, 1e-300))
    if env.awgn_sigma > 0:
        mw = 10.0 ** (power / 10.0) + rng.normal(0.0, env.awgn_sigma)
        power = 10.0 * math.log10(max(mw, MIN_POWER_MW))
    return power


def slant_rain_path(
    receiver: Position, satellite: Position, rain_height_km: float, step_km: float = 0.5
) -> list[tuple[Position, float]]:
    """Segments of the receiver-to-satellite ray that lie below the rain height."""
    dz = satellite.z - receiver.z
    if dz <= 0:
        return []
    total_km = receiver.distance_to(satellite) / 1000.0
    frac_below = min(1.0, rain_height_km * 1000.0 / dz)
    length_km = total_km * frac_below
    n = max(1, math.ceil(length_km / step_km))
    seg = length_km / n
    out = []
    for i in range(n):
        f = frac_below * (i + 0.5) / n
        mid = Position(
            receiver.x + f * (satellite.x - receiver.x),
            receiver.y + f * (satellite.y - receiver.y),
            receiver.z + f * dz,
        )
        out.append((mid, seg))
    return out


# --- scenario field generation -------------------------------------------


@dataclass
class Layout:
    """Static placement of satellites and receivers plus fraud roles."""

    satellites: dict[str, Position]
    receivers: dict[str, Position]
    serving: dict[str, str]
    # receiver -> index into scenario.fraud_spec for RFraud / Corporate roles
    roles: dict[str, int]
    static_offset: dict[str, float]

    def receivers_of(self, sat: str) -> list[str]:
        return [r for r, s in self.serving.items() if s == sat]


def satellite_id(i: int) -> str:
    return f"S{i}"


def receiver_id(i: int) -> str:
    return f"R{i:05d}"


def _disk_points(rng: np.random.Generator, n: int, cx: float, cy: float, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    return np.column_stack([cx + r * np.cos(th), cy + r * np.sin(th)])


def build_layout(scene: "ScenarioConfig") -> Layout:
    from .config import FraudKind

    geo = scene.geometry
    sats = {satellite_id(k): Position(k * geo.spacing_m, 0.0, scene.link.altitude_m) for k in range(scene.n_satellites)}
    receivers: dict[str, Position] = {}
    serving: dict[str, str] = {}
    per_sat = [scene.n_receivers // scene.n_satellites] * scene.n_satellites
    for k in range(scene.n_receivers % scene.n_satellites):
        per_sat[k] += 1
    idx = 0
    for k in range(scene.n_satellites):
        pts = _disk_points(rng_for(scene.seed, "geometry", k), per_sat[k], k * geo.spacing_m, 0.0, geo.radius_m)
        for x, y in pts:
            rid = receiver_id(idx)
            receivers[rid] = Position(float(x), float(y), 0.0)
            serving[rid] = satellite_id(k)
            idx += 1
    for c_i, c in enumerate(geo.clusters):
        pts = _disk_points(rng_for(scene.seed, "geometry", "cluster", c_i), c.count, c.center_x, c.center_y, c.radius_m)
        for x, y in pts:
            rid = receiver_id(idx)
            receivers[rid] = Position(float(x), float(y), 0.0)
            serving[rid] = satellite_id(c.satellite)
            idx += 1

    roles: dict[str, int] = {}
    for f_i, f in enumerate(scene.fraud_spec):
        if f.kind not in (FraudKind.RFRAUD, FraudKind.CORPORATE):
            continue
        if f.targets:
            chosen = [t for t in f.targets if t in receivers]
        else:
            scope = sorted(receivers) if f.transmitter is None else sorted(r for r in receivers if serving[r] == satellite_id(f.transmitter))
            pool = [r for r in scope if r not in roles]
            k = min(int(round((f.fraction or 0.0) * len(scope))), len(pool))
            rng = rng_for(scene.seed, "fraud", f_i)
            chosen = [pool[i] for i in sorted(rng.choice(len(pool), size=k, replace=False))] if k else []
        for r in chosen:
            roles.setdefault(r, f_i)

    sd = math.sqrt(max(geo.field_sigma**2 - geo.temporal_sigma**2, 0.0) / 2.0)
    offs = rng_for(scene.seed, "field", "static").normal(0.0, 1.0, len(receivers)) * sd
    static = {rid: float(o) for rid, o in zip(sorted(receivers), offs)}
    return Layout(sats, receivers, serving, roles, static)


def derived_alpha(signal_dbm: float, slant_m: float, link: "LinkSpec") -> dict[str, float]:
    snr_db = signal_dbm - link.noise_floor_dbm
    return {
        "signal_dbm": signal_dbm,
        "bandwidth_mbps": link.channel_mhz * math.log2(1.0 + 10.0 ** (snr_db / 10.0)),
        "latency_ms": 2.0 * slant_m / SPEED_OF_LIGHT * 1e3 + link.base_latency_ms,
        "online": 1.0 if signal_dbm >= link.sensitivity_dbm else 0.0,
    }


def nominal_signal_dbm(link: "LinkSpec", distance_m: float) -> float:
    return link.tx_power_dbm + link.tx_gain_db + link.rx_gain_db + free_space_loss_db(distance_m, link.wavelength_m)


def transmitter_claim(scene: "ScenarioConfig", layout: Layout, sat: str) -> dict[str, float]:
    """The service level a transmitter advertises: its noise-free footprint-centre link."""
    pos = layout.satellites[sat]
    ground = Position(pos.x, pos.y, 0.0)
    d = ground.distance_to(pos)
    return derived_alpha(nominal_signal_dbm(scene.link, d), d, scene.link)


def active_rain_cells(scene: "ScenarioConfig", epoch: int) -> list["RainCell"]:
    from .config import FraudKind

    return [f.rain for f in scene.fraud_spec if f.kind == FraudKind.OBJECTIVE and f.active(epoch) and f.rain is not None]


def generate_field(scene: "ScenarioConfig", time: float, layout: Layout | None = None) -> list[StateSample]:
    """Per-receiver state samples at ``time`` (seconds on the scenario clock)."""
    from .config import FraudKind

    if layout is None:
        layout = build_layout(scene)
    if not layout.receivers:
        return []
    geo, link = scene.geometry, scene.link
    epoch = int(math.floor(time / geo.epoch_seconds))
    rids = sorted(layout.receivers)
    rng = rng_for(scene.seed, "field", "epoch", epoch)
    temporal = rng.normal(0.0, 1.0, len(rids)) * (geo.temporal_sigma / math.sqrt(2.0))
    fade_rng = rng_for(scene.seed, "field", "fading", epoch)

    rain = active_rain_cells(scene, epoch)
    env = scene.env.model_copy(update={"rain_cells": list(scene.env.rain_cells) + rain}) if rain else scene.env
    has_rain = bool(env.rain_cells)

    not_delivering = {
        satellite_id(f.transmitter)
        for f in scene.fraud_spec
        if f.kind in (FraudKind.TFRAUD, FraudKind.CORPORATE) and f.active(epoch) and f.transmitter is not None
    }

    out = []
    for i, rid in enumerate(rids):
        pos = layout.receivers[rid]
        sat = layout.serving[rid]
        spos = layout.satellites[sat]
        d = pos.distance_to(spos)
        budget = LinkBudget(link.tx_power_dbm, link.tx_gain_db, link.rx_gain_db, link.wavelength_m, d)
        path = slant_rain_path(pos, spos, env.rain_height_km) if has_rain else ()
        noise = layout.static_offset[rid] + float(temporal[i])
        served = received_power_dbm(budget, env, fade_rng, path) + noise
        service_level = nominal_signal_dbm(link, d)

        label = Label.HONEST
        role = layout.roles.get(rid)
        fraud = scene.fraud_spec[role] if role is not None else None
        fraud_on = fraud is not None and fraud.active(epoch)

        if sat in not_delivering:
            actual = link.no_service_dbm + noise
            truth_signal = link.no_service_dbm
            label = Label.TFRAUD
        else:
            actual = served
            truth_signal = service_level
            if has_rain and rain and any(c.covers(pos.x, pos.y) for c in rain):
                label = Label.OBJECTIVE
                truth_signal = service_level - rain_attenuation_db(path, env)

        reported = actual
        if fraud_on and fraud.kind == FraudKind.RFRAUD:
            reported = actual - fraud.magnitude * geo.field_sigma
            label = Label.RFRAUD
        elif fraud_on and fraud.kind == FraudKind.CORPORATE and sat in not_delivering:
            # colluder vouches for the service its transmitter claims
            reported = service_level + noise
            label = Label.CORPORATE

        out.append(
            StateSample(
                receiver_id=rid,
                transmitter_id=sat,
                position=pos,
                time=float(time),
                alpha=derived_alpha(reported, d, link),
                honesty_label=label,
                truth=derived_alpha(truth_signal, d, link),
                actual_signal_dbm=actual,
            )
        )
    return out
