"""Mixture-model EM over per-receiver deviations.

One component (the largest-weight Gaussian) describes valid submissions;
the others absorb anomalies. LogNormal and Rayleigh components model an
attenuation depth, i.e. they only have support on negative deviations.
Nonparametric components are fixed-bin histograms.

Cold start seeds the anomalous components with the samples the soft trim
discards (|x - median| > trim radius); warm start reuses the previous
epoch's components and re-seeds any slot that was dropped.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ..config import Family, PriorSet

HIST_BINS = 32
MIN_MASS = 1e-9
LOG_2PI = math.log(2 * math.pi)


class DegenerateComponentWarning(UserWarning):
    """A mixture component lost all responsibility mass and was dropped."""


@dataclass
class Component:
    family: Family
    weight: float
    params: dict = field(default_factory=dict)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        if self.family == Family.GAUSSIAN:
            return -0.5 * (LOG_2PI + math.log(p["var"]) + (x - p["mu"]) ** 2 / p["var"])
        if self.family == Family.NONPARAMETRIC:
            edges = np.asarray(p["edges"])
            dens = np.asarray(p["density"])
            idx = np.searchsorted(edges, x, side="right") - 1
            idx = np.where(x == edges[-1], len(dens) - 1, idx)
            inside = (idx >= 0) & (idx < len(dens))
            out = np.full(x.shape, -np.inf)
            d = dens[np.clip(idx, 0, len(dens) - 1)]
            ok = inside & (d > 0)
            out[ok] = np.log(d[ok])
            return out
        depth = -x
        out = np.full(x.shape, -np.inf)
        pos = depth > 0
        a = depth[pos]
        if self.family == Family.LOGNORMAL:
            la = np.log(a)
            out[pos] = -la - 0.5 * (LOG_2PI + math.log(p["var"]) + (la - p["mu"]) ** 2 / p["var"])
        else:  # Rayleigh
            s2 = p["sigma2"]
            out[pos] = np.log(a) - math.log(s2) - a * a / (2 * s2)
        return out

    def to_json(self) -> dict:
        return {"family": self.family.value, "weight": float(self.weight), "params": _plain(self.params)}

    @classmethod
    def from_json(cls, d: dict) -> "Component":
        return cls(Family(d["family"]), float(d["weight"]), dict(d["params"]))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _fit(family: Family, x: np.ndarray, w: np.ndarray, var_floor: float, edges: np.ndarray | None) -> dict:
    total = w.sum()
    if family == Family.GAUSSIAN:
        mu = float(np.dot(w, x) / total)
        var = float(np.dot(w, (x - mu) ** 2) / total)
        return {"mu": mu, "var": max(var, var_floor)}
    if family == Family.NONPARAMETRIC:
        width = np.diff(edges)
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(width) - 1)
        mass = np.bincount(idx, weights=w, minlength=len(width))
        return {"edges": edges.tolist(), "density": (mass / (total * width)).tolist()}
    depth = -x
    pos = depth > 0
    wp = np.where(pos, w, 0.0)
    tp = wp.sum()
    a = np.where(pos, depth, 1.0)
    if family == Family.LOGNORMAL:
        la = np.log(a)
        mu = float(np.dot(wp, la) / tp)
        var = float(np.dot(wp, (la - mu) ** 2) / tp)
        return {"mu": mu, "var": max(var, 1e-12)}
    return {"sigma2": max(float(np.dot(wp, a * a) / (2 * tp)), 1e-300)}


def _support_mass(family: Family, x: np.ndarray, w: np.ndarray) -> float:
    if family in (Family.LOGNORMAL, Family.RAYLEIGH):
        return float(w[x < 0].sum())
    return float(w.sum())


@dataclass
class EmResult:
    responsibilities: np.ndarray
    components: list[Component]
    valid_index: int
    log_likelihood: list[float]
    iterations: int
    converged: bool
    dropped: list[int] = field(default_factory=list)
    ids: list[str] | None = None

    def anomaly(self) -> np.ndarray:
        return 1.0 - self.responsibilities[:, self.valid_index]

    @property
    def theta_hat(self) -> list[dict]:
        return [c.to_json() for c in self.components]


def valid_component(components: Sequence[Component]) -> int:
    gauss = [i for i, c in enumerate(components) if c.family == Family.GAUSSIAN]
    pool = gauss or list(range(len(components)))
    return max(pool, key=lambda i: (components[i].weight, -i))


class Mixture:
    """Stateful EM so callers can interleave single iterations with other work."""

    def __init__(
        self,
        x: np.ndarray,
        priors: PriorSet,
        init_theta: Sequence[Component | dict] | None = None,
        trim_radius: float | None = None,
    ):
        self.x = np.asarray(x, dtype=float)
        n = len(self.x)
        self.families = priors.families()[: max(1, min(priors.n_clusters, n))]
        med = float(np.median(self.x)) if n else 0.0
        scale = 1.4826 * float(np.median(np.abs(self.x - med))) if n else 0.0
        spread = float(np.var(self.x)) if n else 0.0
        self.var_floor = max(1e-12, 1e-8 * spread, (1e-3 * scale) ** 2)
        if trim_radius is None:
            trim_radius = 3.0 * scale if scale > 0 else 1e-12
        self.trim_radius = trim_radius
        lo, hi = (float(self.x.min()), float(self.x.max())) if n else (0.0, 1.0)
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        self.edges = np.linspace(lo, hi, HIST_BINS + 1)
        self.dropped: list[int] = []
        self.ll_trace: list[float] = []

        if init_theta:
            comps = [c if isinstance(c, Component) else Component.from_json(c) for c in init_theta]
            self.components = [Component(c.family, c.weight, dict(c.params)) for c in comps]
            self._reseed_missing()
        else:
            self.components = []
            self._cold_start(med)

    def _seed_groups(self, center: float, k: int) -> list[np.ndarray]:
        seeds = np.flatnonzero(np.abs(self.x - center) > self.trim_radius)
        if k <= 0 or len(seeds) == 0:
            return [np.array([], dtype=int) for _ in range(k)]
        order = seeds[np.argsort(self.x[seeds], kind="stable")]
        return np.array_split(order, k)

    def _cold_start(self, center: float) -> None:
        n = len(self.x)
        k = len(self.families)
        resp = np.zeros((n, k))
        resp[:, 0] = 1.0
        for j, grp in enumerate(self._seed_groups(center, k - 1), start=1):
            resp[grp, 0] = 0.0
            resp[grp, j] = 1.0
        self.components = [Component(f, 0.0, {}) for f in self.families]
        self.m_step(resp)

    def _reseed_missing(self) -> None:
        missing = len(self.families) - len(self.components)
        if missing <= 0:
            return
        vi = valid_component(self.components)
        center = self.components[vi].params.get("mu", float(np.median(self.x)))
        used = {c.family for c in self.components}
        fams = [f for f in self.families[1:] if f not in used] or self.families[1:]
        added = 0
        for j, grp in enumerate(self._seed_groups(center, missing)):
            if len(grp) == 0:
                continue
            fam = fams[j % len(fams)]
            w = np.zeros(len(self.x))
            w[grp] = 1.0
            if _support_mass(fam, self.x, w) <= MIN_MASS:
                continue
            params = _fit(fam, self.x, w, self.var_floor, self.edges)
            self.components.append(Component(fam, len(grp) / len(self.x), params))
            added += 1
        if added:
            total = sum(c.weight for c in self.components)
            for c in self.components:
                c.weight /= total

    def m_step(self, resp: np.ndarray) -> None:
        n = len(self.x)
        keep = []
        for j, comp in enumerate(self.components):
            w = resp[:, j]
            if _support_mass(comp.family, self.x, w) <= MIN_MASS:
                if comp.weight > 0 or comp.params:
                    self.dropped.append(j)
                    warnings.warn(
                        f"mixture component {j} ({comp.family.value}) has no responsibility mass; dropped",
                        DegenerateComponentWarning,
                        stacklevel=3,
                    )
                continue
            comp.params = _fit(comp.family, self.x, w, self.var_floor, self.edges)
            comp.weight = float(w.sum() / n)
            keep.append(comp)
        self.components = keep

    def e_step(self) -> tuple[np.ndarray, float]:
        log_w = np.array([math.log(c.weight) for c in self.components])
        logp = np.column_stack([c.logpdf(self.x) for c in self.components]) + log_w
        norm = logsumexp(logp, axis=1)
        lost = ~np.isfinite(norm)
        resp = np.exp(logp - np.where(lost, 0.0, norm)[:, None])
        if lost.any():
            resp[lost] = 0.0
            resp[lost, valid_component(self.components)] = 1.0
        ll = float(norm[~lost].sum())
        return resp, ll

    def step(self) -> tuple[np.ndarray, float]:
        """One E step followed by one M step; returns pre-M responsibilities and log-likelihood."""
        resp, ll = self.e_step()
        self.ll_trace.append(ll)
        self.m_step(resp)
        return resp, ll

    def result(self, iterations: int, converged: bool, ids=None) -> EmResult:
        resp, _ = self.e_step()
        return EmResult(resp, self.components, valid_component(self.components), list(self.ll_trace), iterations, converged, list(self.dropped), ids)


def em_fit(
    deviations,
    priors: PriorSet,
    init_theta: Sequence[Component | dict] | None = None,
    *,
    trim_radius: float | None = None,
    theta_eps: float = 1e-6,
    max_iters: int = 32,
) -> EmResult:
    """Fit the mixture to ``deviations`` (floats or (receiver_id, deviation) pairs).

    Stops when the mean per-sample log-likelihood changes by less than
    ``theta_eps`` or after ``max_iters`` iterations.
    """
    ids = None
    devs = list(deviations)
    if devs and isinstance(devs[0], tuple):
        ids = [d[0] for d in devs]
        devs = [d[1] for d in devs]
    x = np.asarray(devs, dtype=float)
    if len(x) < priors.n_clusters:
        raise ValueError(f"need at least {priors.n_clusters} deviations, got {len(x)}")
    mix = Mixture(x, priors, init_theta, trim_radius)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        mix.step()
        tr = mix.ll_trace
        if len(tr) >= 2 and abs(tr[-1] - tr[-2]) < theta_eps * len(x):
            converged = True
            break
    return mix.result(it, converged, ids)
