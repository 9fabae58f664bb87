"""Synthetic trace panels with a known subject/replicate structure.

Latent log-intensities: every feature has a shared baseline; informative
features add a subject-specific offset (between-subject spread), and every
replicate adds Gaussian noise (within-subject spread).  Areas are the
exponentiated intensities, with absent compounds set to exactly 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .traces import TraceMatrix

# 534 subjects, 1690 traces, 2075 same-source pairs
REFERENCE_REPLICATE_PROFILE = {1: 44, 2: 77, 3: 160, 4: 253}


@dataclass(frozen=True)
class PanelConfig:
    n_subjects: int = 100
    replicate_profile: dict[int, int] | None = None
    n_features: int = 50
    n_informative: int = 10
    between_subject_sd: float = 1.0
    within_subject_sd: float = 0.3
    sparsity: float = 0.0
    gender_fraction: float = 0.5
    seed: int = 0
    strength_spread: float = 0.0
    baseline_log_mean: float = 8.0
    baseline_log_sd: float = 1.5

    def __post_init__(self):
        profile = self.replicate_profile
        if profile is None:
            profile = {4: self.n_subjects}
        profile = {int(r): int(c) for r, c in profile.items() if int(c) > 0}
        object.__setattr__(self, "replicate_profile", profile)
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be positive")
        if sum(profile.values()) != self.n_subjects:
            raise ConfigError(f"replicate profile covers {sum(profile.values())} subjects, "
                              f"expected {self.n_subjects}")
        if any(r < 1 for r in profile):
            raise ConfigError("replicate counts must be >= 1")
        if not 0 <= self.n_informative <= self.n_features or self.n_features < 1:
            raise ConfigError("need 0 <= n_informative <= n_features and n_features >= 1")
        if self.between_subject_sd <= 0 or self.within_subject_sd < 0:
            raise ConfigError("between_subject_sd must be > 0 and within_subject_sd >= 0")
        if not 0.0 <= self.sparsity < 1.0 or not 0.0 <= self.gender_fraction <= 1.0:
            raise ConfigError("sparsity must lie in [0, 1) and gender_fraction in [0, 1]")

    @property
    def n_traces(self) -> int:
        return sum(r * c for r, c in self.replicate_profile.items())

    @property
    def n_same_source_pairs(self) -> int:
        return sum(c * r * (r - 1) // 2 for r, c in self.replicate_profile.items())

    def to_json(self) -> str:
        d = asdict(self)
        d["replicate_profile"] = {str(r): c for r, c in sorted(self.replicate_profile.items())}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PanelConfig":
        d = json.loads(text)
        if d.get("replicate_profile") is not None:
            d["replicate_profile"] = {int(r): int(c) for r, c in d["replicate_profile"].items()}
        return cls(**d)


def informative_features(cfg: PanelConfig) -> np.ndarray:
    """Sorted indices of the informative features of a panel."""
    rng = np.random.default_rng([cfg.seed, 1])
    return np.sort(rng.choice(cfg.n_features, size=cfg.n_informative, replace=False))


def feature_strengths(cfg: PanelConfig) -> np.ndarray:
    """Multiplier of the between-subject sd per informative feature."""
    if cfg.n_informative == 0:
        return np.zeros(0)
    rng = np.random.default_rng([cfg.seed, 2])
    s = np.exp(cfg.strength_spread * np.linspace(-1.0, 1.0, cfg.n_informative))
    return rng.permutation(s)


def generate_panel(cfg: PanelConfig) -> TraceMatrix:
    rng = np.random.default_rng([cfg.seed, 0])
    n = cfg.n_features
    informative = informative_features(cfg)
    strengths = feature_strengths(cfg)
    baseline = rng.normal(cfg.baseline_log_mean, cfg.baseline_log_sd, size=n)

    counts = np.concatenate([np.full(c, r) for r, c in sorted(cfg.replicate_profile.items())])
    counts = rng.permutation(counts)
    n_male = int(round(cfg.gender_fraction * cfg.n_subjects))
    genders = np.array(["M"] * n_male + ["F"] * (cfg.n_subjects - n_male))[
        rng.permutation(cfg.n_subjects)]
    ages = rng.integers(7, 95, size=cfg.n_subjects)

    noise_idx = np.setdiff1d(np.arange(n), informative)
    rows, sids, rids, gs, ags = [], [], [], [], []
    width = len(str(cfg.n_subjects))
    for s in range(cfg.n_subjects):
        center = baseline.copy()
        center[informative] += cfg.between_subject_sd * strengths * rng.standard_normal(
            informative.size)
        present = np.ones(n, dtype=bool)
        present[informative] = rng.random(informative.size) >= cfg.sparsity
        for r in range(counts[s]):
            log_area = center + cfg.within_subject_sd * rng.standard_normal(n)
            area = np.maximum(np.exp(log_area), 0.0)
            mask = present.copy()
            mask[noise_idx] = rng.random(noise_idx.size) >= cfg.sparsity
            area[~mask] = 0.0
            rows.append(area)
            sids.append(f"S{s + 1:0{width}d}")
            rids.append(f"r{r + 1}")
            gs.append(str(genders[s]))
            ags.append(int(ages[s]))
    X = np.vstack(rows)
    names = tuple(f"f_{k + 1}" for k in range(n))
    return TraceMatrix(X, tuple(sids), tuple(rids), tuple(gs), tuple(ags), names, "raw",
                       (f"config: {cfg.to_json()}",))
