"""Synthetic stand-ins for the private longitudinal and diagnostic cohorts."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .graph_core import ConnectivityMatrix, Population, Trajectory


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for the synthetic cohort.

    Base and class direction are morphological-style networks (absolute
    differences of latent per-ROI measures), the way cortical networks are
    built. Class c has mean ``clip(base + c * class_separation * direction)``; members
    add symmetric Gaussian noise. Trajectories start from a noisy copy of the
    base and add the same fixed, topology-dependent drift matrix, plus fresh
    noise, at every step.
    """

    num_subjects: int = 40
    r: int = 8
    class_separation: float = 0.1
    noise_std: float = 0.05
    drift_magnitude: float = 0.1
    timepoints: int = 3
    seed: int = 0
    base_low: float = 0.2
    base_high: float = 0.6

    def __post_init__(self):
        if self.num_subjects < 1 or self.r < 2:
            raise InvalidSpec("need at least one subject and two ROIs")
        if self.class_separation < 0 or self.noise_std < 0 or self.drift_magnitude < 0:
            raise InvalidSpec("separation, noise and drift must be nonnegative")
        if self.timepoints < 2:
            raise InvalidSpec("timepoints must be >= 2")
        if not 0 <= self.base_low <= self.base_high <= 1:
            raise InvalidSpec("base range must lie inside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _sym_uniform(rng, r, lo, hi):
    a = rng.uniform(lo, hi, size=(r, r))
    a = np.triu(a, 1)
    return a + a.T


def _sym_noise(rng, r, std):
    n = np.triu(rng.normal(0.0, std, size=(r, r)), 1) if std > 0 else np.zeros((r, r))
    return n + n.T


def _clean(a):
    a = np.clip(a, 0.0, 1.0)
    np.fill_diagonal(a, 0.0)
    return ConnectivityMatrix(a)


def _morphological(rng, r, lo, hi, dims=3):
    """Absolute differences of latent per-ROI measures, rescaled to [lo, hi]."""
    v = rng.uniform(0.0, 1.0, size=(r, dims))
    d = np.abs(v[:, None, :] - v[None, :, :]).mean(-1)
    off = ~np.eye(r, dtype=bool)
    span = d[off].max() - d[off].min()
    d = lo + (hi - lo) * (d - d[off].min()) / (span if span > 0 else 1.0)
    np.fill_diagonal(d, 0.0)
    return d


def _structure(spec: SynthSpec):
    rng = np.random.default_rng([spec.seed, 1])
    base = _morphological(rng, spec.r, spec.base_low, spec.base_high)
    direction = _morphological(rng, spec.r, 0.0, 1.0)
    return base, direction, _structural_drift(base, spec.drift_magnitude)


def _structural_drift(base, magnitude):
    """Fixed drift tied to the base topology: strong edges and hub nodes weaken.

    ``D_ij = -magnitude * (z_ij + (u_i + u_j) / 2) / 2`` with z the standardised
    base edge weights and u the standardised node strengths.
    """
    r = base.shape[0]
    off = ~np.eye(r, dtype=bool)
    z = (base - base[off].mean()) / (base[off].std() or 1.0)
    strength = base.sum(1)
    u = (strength - strength.mean()) / (strength.std() or 1.0)
    d = -magnitude * 0.5 * (z + 0.5 * (u[:, None] + u[None, :]))
    np.fill_diagonal(d, 0.0)
    return d


def class_means(spec: SynthSpec) -> list[np.ndarray]:
    base, direction, _ = _structure(spec)
    out = []
    for c in (0, 1):
        m = np.clip(base + c * spec.class_separation * direction, 0.0, 1.0)
        np.fill_diagonal(m, 0.0)
        out.append(m)
    return out


def drift_matrix(spec: SynthSpec) -> np.ndarray:
    return _structure(spec)[2]


def synth_population(spec: SynthSpec) -> Population:
    """Balanced two-class population; labels alternate 0, 1, 0, 1, ..."""
    means = class_means(spec)
    rng = np.random.default_rng([spec.seed, 2])
    members, labels = [], []
    for i in range(spec.num_subjects):
        c = i % 2
        members.append(_clean(means[c] + _sym_noise(rng, spec.r, spec.noise_std)))
        labels.append(c)
    return Population(members, labels)


def synth_trajectories(spec: SynthSpec) -> list[Trajectory]:
    base, _, drift = _structure(spec)
    rng = np.random.default_rng([spec.seed, 3])
    out = []
    for s in range(spec.num_subjects):
        state = np.asarray(_clean(base + _sym_noise(rng, spec.r, spec.noise_std)).weights)
        states = [ConnectivityMatrix(state)]
        for _ in range(spec.timepoints - 1):
            state = np.asarray(_clean(state + drift + _sym_noise(rng, spec.r, spec.noise_std)).weights)
            states.append(ConnectivityMatrix(state))
        out.append(Trajectory(states, subject_id=f"sub-{s:03d}"))
    return out
