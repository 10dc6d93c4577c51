"""Per-epoch distribution estimate for one transmitter.

Each pass of the loop classifies receivers from the current mixture
posteriors, recomputes the spatial and temporal losses over the valid set,
then refits the mixture. The loop stops when both the mean loss and the
mean log-likelihood move less than ``theta_eps`` between passes, or after
``max_iters`` passes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..config import PodConfig
from ..signal import StateSample
from .em import Mixture, valid_component
from .kernels import gaussian_kernel_exact, pairwise_distances, poly_kernel_clamped
from .robust import soft_trim

ANOMALY_THRESHOLD = 0.5


class Classification(str, enum.Enum):
    VALID = "Valid"
    ANOMALOUS = "Anomalous"


class Cause(str, enum.Enum):
    NONE = "None"
    FRAUD = "Fraud"
    OBJECTIVE = "Objective"


class PodError(ValueError):
    pass


@dataclass
class ReceiverResult:
    alpha_hat: dict[str, float]
    loss: float
    spatial_loss: float | None
    temporal_loss: float
    classification: Classification
    cause: Cause
    responsibility: float
    isolated: bool = False
    cold_start: bool = False

    def to_json(self) -> dict:
        return {
            "alpha_hat": {k: float(v) for k, v in sorted(self.alpha_hat.items())},
            "loss": float(self.loss),
            "spatial_loss": None if self.spatial_loss is None else float(self.spatial_loss),
            "temporal_loss": float(self.temporal_loss),
            "classification": self.classification.value,
            "cause": self.cause.value,
            "responsibility": float(self.responsibility),
            "isolated": self.isolated,
            "cold_start": self.cold_start,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ReceiverResult":
        return cls(
            alpha_hat=dict(d["alpha_hat"]),
            loss=d["loss"],
            spatial_loss=d["spatial_loss"],
            temporal_loss=d["temporal_loss"],
            classification=Classification(d["classification"]),
            cause=Cause(d["cause"]),
            responsibility=d["responsibility"],
            isolated=d["isolated"],
            cold_start=d["cold_start"],
        )


@dataclass
class PodReport:
    transmitter_id: str
    epoch_index: int
    per_receiver: dict[str, ReceiverResult]
    theta_hat: dict[str, list[dict]]
    consensus_alpha: dict[str, float]
    total_loss: float
    iterations_used: int
    converged: bool
    log_likelihood: float = 0.0

    def anomalous(self) -> list[str]:
        return [r for r, v in self.per_receiver.items() if v.classification == Classification.ANOMALOUS]

    def to_json(self) -> dict:
        return {
            "transmitter": self.transmitter_id,
            "epoch": self.epoch_index,
            "per_receiver": {r: self.per_receiver[r].to_json() for r in sorted(self.per_receiver)},
            "theta_hat": self.theta_hat,
            "consensus_alpha": {k: float(v) for k, v in sorted(self.consensus_alpha.items())},
            "total_loss": float(self.total_loss),
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "log_likelihood": float(self.log_likelihood),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PodReport":
        return cls(
            transmitter_id=d["transmitter"],
            epoch_index=d["epoch"],
            per_receiver={r: ReceiverResult.from_json(v) for r, v in d["per_receiver"].items()},
            theta_hat=d["theta_hat"],
            consensus_alpha=d["consensus_alpha"],
            total_loss=d["total_loss"],
            iterations_used=d["iterations_used"],
            converged=d["converged"],
            log_likelihood=d.get("log_likelihood", 0.0),
        )


@dataclass
class PodState:
    """What one epoch hands to the next: fitted mixtures and last submissions."""

    theta: dict[str, list[dict]] = field(default_factory=dict)
    last: dict[str, dict] = field(default_factory=dict)
    mean_ll: float | None = None
    mean_loss: float | None = None

    def to_json(self) -> dict:
        return {"theta": self.theta, "last": self.last, "mean_ll": self.mean_ll, "mean_loss": self.mean_loss}

    @classmethod
    def from_json(cls, d: dict | None) -> "PodState":
        if not d:
            return cls()
        return cls(d.get("theta", {}), d.get("last", {}), d.get("mean_ll"), d.get("mean_loss"))


def next_state(report: PodReport, samples: Sequence[StateSample]) -> PodState:
    n = max(len(samples), 1)
    return PodState(
        theta=report.theta_hat,
        last={s.receiver_id: {"time": s.time, "alpha": dict(s.alpha)} for s in samples},
        mean_ll=report.log_likelihood / n,
        mean_loss=report.total_loss / n,
    )


# --- spatial machinery ----------------------------------------------------


class SpatialIndex:
    """Kernel-times-density neighbour weights for a fixed set of positions.

    ``weights[p, q] = kernel(|p - q|) * psi[q]`` for q != p within the
    neighbourhood radius, else 0.
    """

    def __init__(self, positions: np.ndarray, config: PodConfig):
        dist = pairwise_distances(positions)
        if config.kernel == "poly":
            kern = poly_kernel_clamped(dist, config.sigma_alpha, config.kernel_terms)
        else:
            kern = gaussian_kernel_exact(dist, config.sigma_alpha)
        inv = 1.0 / kern.sum(axis=1)
        self.psi = inv * (len(inv) / inv.sum())
        w = kern * self.psi[None, :]
        w[dist > config.neighborhood_radius] = 0.0
        np.fill_diagonal(w, 0.0)
        self.weights = w
        self.row_sum = w.sum(axis=1)
        self.isolated = ~(self.row_sum > 0)

    def neighbor_mean(self, values: np.ndarray, allowed: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Weighted neighbour mean per row; second array flags rows with any allowed neighbour."""
        mask = np.ones(len(values)) if allowed is None else allowed.astype(float)
        # matrix-vector products only; slicing the weight matrix would copy N^2 entries
        den = self.weights @ mask
        num = self.weights @ np.where(mask > 0, values, 0.0)
        has = den > 0
        mu = np.where(has, num / np.where(has, den, 1.0), np.nan)
        return mu, has

    def neighbor_fraction(self, flags: np.ndarray) -> np.ndarray:
        den = self.row_sum
        num = self.weights @ flags.astype(float)
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


@dataclass
class SpatialResult:
    loss: dict[str, float]
    mean: dict[str, dict[str, float]]
    deviation: dict[str, dict[str, float]]
    isolated: set[str]


def _positions(samples: Sequence[StateSample]) -> np.ndarray:
    return np.array([[s.position.x, s.position.y, s.position.z] for s in samples], dtype=float)


def spatial_loss(samples: Sequence[StateSample], config: PodConfig, valid: Sequence[bool] | None = None) -> SpatialResult:
    """Per-sample spatial loss against the kernel-weighted mean of its neighbours.

    Isolated samples (no neighbour inside ``neighborhood_radius``) are
    reported in ``isolated`` and carry no loss entry. Deviations are kept
    unclipped so callers can see what the trimming discarded.
    """
    if len(samples) < 2:
        raise PodError("spatial loss needs at least two samples")
    index = SpatialIndex(_positions(samples), config)
    allowed = None if valid is None else np.asarray(valid, dtype=bool)
    ids = [s.receiver_id for s in samples]
    loss = np.zeros(len(samples))
    means: dict[str, dict[str, float]] = {r: {} for r in ids}
    devs: dict[str, dict[str, float]] = {r: {} for r in ids}
    isolated = np.zeros(len(samples), dtype=bool)
    for p in config.params:
        vals = np.array([s.alpha[p] for s in samples], dtype=float)
        mu, has = index.neighbor_mean(vals, allowed)
        isolated |= ~has
        dev = np.where(has, vals - np.where(has, mu, 0.0), 0.0)
        loss += config.gamma_s * np.abs(soft_trim(dev, config.radius(p)))
        for i, r in enumerate(ids):
            if has[i]:
                means[r][p] = float(mu[i])
                devs[r][p] = float(dev[i])
    return SpatialResult(
        loss={r: float(loss[i]) for i, r in enumerate(ids) if not isolated[i]},
        mean=means,
        deviation=devs,
        isolated={r for i, r in enumerate(ids) if isolated[i]},
    )


def temporal_loss(current: StateSample, previous: StateSample | None, config: PodConfig) -> float:
    """Soft-trimmed change since the receiver's previous submission (0 on cold start)."""
    if previous is None:
        return 0.0
    if previous.receiver_id != current.receiver_id:
        raise PodError("temporal loss compares one receiver's own samples")
    if not previous.time < current.time:
        raise PodError("previous sample must be strictly earlier")
    total = 0.0
    for p in config.params:
        total += abs(soft_trim(current.alpha[p] - previous.alpha[p], config.radius(p)))
    return config.gamma_t * total


# --- the epoch loop ---------------------------------------------------------


def _temporal_vector(samples: Sequence[StateSample], state: PodState, config: PodConfig) -> tuple[np.ndarray, np.ndarray]:
    out = np.zeros(len(samples))
    cold = np.ones(len(samples), dtype=bool)
    horizon = 3.0 * config.sigma_t
    for i, s in enumerate(samples):
        prev = state.last.get(s.receiver_id)
        if prev is None:
            continue
        dt = s.time - prev["time"]
        if not 0 < dt <= horizon:
            continue
        cold[i] = False
        out[i] = config.gamma_t * sum(
            abs(soft_trim(s.alpha[p] - prev["alpha"][p], config.radius(p))) for p in config.params
        )
    return out, cold


def pod_epoch(samples: Sequence[StateSample], prev_state: PodState | None, config: PodConfig, epoch_index: int = 0) -> PodReport:
    if not samples:
        return PodReport("", epoch_index, {}, {}, {}, 0.0, 0, True)
    tx = {s.transmitter_id for s in samples}
    if len(tx) != 1:
        raise PodError(f"samples span several transmitters: {sorted(tx)}")
    samples = sorted(samples, key=lambda s: s.receiver_id)
    state = prev_state or PodState()
    n = len(samples)
    params = list(config.params)
    ids = [s.receiver_id for s in samples]
    values = {p: np.array([s.alpha[p] for s in samples], dtype=float) for p in params}
    centers = {p: float(np.median(values[p])) for p in params}
    feats = {p: values[p] - centers[p] for p in params}

    index = SpatialIndex(_positions(samples), config) if n >= 2 else None
    t_loss, cold = _temporal_vector(samples, state, config)

    mixtures = {}
    for p in params:
        init = state.theta.get(p)
        mixtures[p] = Mixture(feats[p], config.priors, init, trim_radius=config.radius(p))

    def spatial(valid: np.ndarray) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
        s_loss = np.zeros(n)
        iso = np.ones(n, dtype=bool) if index is None else index.isolated.copy()
        mus = {}
        if index is None:
            return s_loss, iso, {p: np.full(n, np.nan) for p in params}
        for p in params:
            mu, has = index.neighbor_mean(values[p], valid)
            iso |= ~has
            dev = np.where(has, values[p] - np.where(has, mu, 0.0), 0.0)
            s_loss += config.gamma_s * np.abs(soft_trim(dev, config.radius(p)))
            mus[p] = mu
        return s_loss, iso, mus

    prev_ll, prev_loss = state.mean_ll, state.mean_loss
    anomaly = np.zeros(n)
    converged = False
    iterations = 0
    ll_total = 0.0
    for iterations in range(1, config.max_iters + 1):
        anomaly = np.zeros(n)
        ll_total = 0.0
        resps = {}
        for p in params:
            resp, ll = mixtures[p].e_step()
            resps[p] = resp
            mixtures[p].ll_trace.append(ll)
            vi = valid_component(mixtures[p].components)
            anomaly = np.maximum(anomaly, 1.0 - resp[:, vi])
            ll_total += ll
        valid = anomaly <= ANOMALY_THRESHOLD
        s_loss, iso, _ = spatial(valid)
        per = np.where(iso, 0.0, s_loss) + t_loss
        mean_loss = float(per[valid].sum()) / n
        mean_ll = ll_total / n
        if prev_ll is not None and abs(mean_ll - prev_ll) < config.theta_eps and abs(mean_loss - prev_loss) < config.theta_eps:
            converged = True
            break
        prev_ll, prev_loss = mean_ll, mean_loss
        for p in params:
            mixtures[p].m_step(resps[p])

    valid = anomaly <= ANOMALY_THRESHOLD
    s_loss, iso, mus_valid = spatial(valid)
    per = np.where(iso, 0.0, s_loss) + t_loss
    total_loss = float(per[valid].sum())

    anomalous = ~valid
    if index is not None:
        frac = index.neighbor_fraction(anomalous)
        mus_all = {p: index.neighbor_mean(values[p])[0] for p in params}
    else:
        frac = np.zeros(n)
        mus_all = {p: np.full(n, np.nan) for p in params}

    weights = index.psi if index is not None else np.ones(n)
    consensus = {}
    for p in params:
        w = weights[valid] if valid.any() else weights
        v = values[p][valid] if valid.any() else values[p]
        consensus[p] = float(np.dot(w, v) / w.sum())

    per_receiver = {}
    for i, rid in enumerate(ids):
        isolated = bool(index is None or index.isolated[i])
        if valid[i]:
            cls, cause = Classification.VALID, Cause.NONE
            src = mus_valid
        elif not isolated and frac[i] >= config.objective_fraction:
            cls, cause = Classification.ANOMALOUS, Cause.OBJECTIVE
            src = mus_all
        else:
            cls, cause = Classification.ANOMALOUS, Cause.FRAUD
            src = mus_valid
        alpha_hat = {}
        for p in params:
            m = src[p][i]
            if math.isnan(m):
                m = values[p][i] if cause != Cause.FRAUD else consensus[p]
            alpha_hat[p] = float(m)
        per_receiver[rid] = ReceiverResult(
            alpha_hat=alpha_hat,
            loss=float(per[i]),
            spatial_loss=None if iso[i] else float(s_loss[i]),
            temporal_loss=float(t_loss[i]),
            classification=cls,
            cause=cause,
            responsibility=float(min(max(anomaly[i], 0.0), 1.0)),
            isolated=bool(iso[i]),
            cold_start=bool(cold[i]),
        )

    theta_hat = {p: [c.to_json() for c in mixtures[p].components] for p in params}
    return PodReport(
        transmitter_id=samples[0].transmitter_id,
        epoch_index=epoch_index,
        per_receiver=per_receiver,
        theta_hat=theta_hat,
        consensus_alpha=consensus,
        total_loss=total_loss,
        iterations_used=iterations,
        converged=converged,
        log_likelihood=ll_total,
    )
