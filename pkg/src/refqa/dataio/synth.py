"""Seeded synthetic datasets whose quality is only visible by comparison.

Samples are grouped into clusters that share a prompt template and a pair of
feature centroids. A sample's opinion score falls with its distance from its
cluster's centroids, which are never stored. Because the centroids differ
per cluster, a single feature vector says little about quality; its
difference to same-prompt neighbours says a lot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numkit import Rng
from .dataset import Dataset, Sample
from .embed import deterministic_embed

ADJECTIVES = (
    "golden", "misty", "neon", "ancient", "quiet", "stormy", "crystal", "rusty",
    "velvet", "frozen", "sunlit", "hollow", "emerald", "crimson", "silver", "dusty",
    "gentle", "wild", "paper", "marble", "glowing", "shadowy", "tiny", "giant",
)
SUBJECTS = (
    "fox", "robot", "dancer", "whale", "astronaut", "dragon", "cyclist", "owl",
    "sailboat", "knight", "tiger", "violinist", "jellyfish", "train", "samurai", "balloon",
    "horse", "chef", "butterfly", "lighthouse", "monk", "wolf", "drone", "turtle",
)
ACTIONS = (
    "running", "floating", "spinning", "climbing", "drifting", "leaping", "painting", "singing",
    "sleeping", "racing", "swimming", "glowing", "waving", "falling", "marching", "hovering",
    "diving", "juggling", "reading", "melting", "rolling", "wandering", "burning", "blooming",
)
PLACES = (
    "forest", "desert", "city", "ocean", "canyon", "library", "volcano", "meadow",
    "harbor", "glacier", "market", "cathedral", "jungle", "rooftop", "cave", "island",
    "subway", "garden", "prairie", "lagoon", "temple", "factory", "swamp", "orbit",
)
STYLES = (
    "cinematic", "watercolor", "anime", "documentary", "claymation", "noir", "pixelart", "surreal",
    "vintage", "isometric", "sketch", "hyperreal", "pastel", "gothic", "minimalist", "baroque",
    "cyberpunk", "impressionist", "timelapse", "handheld", "aerial", "macro", "dreamy", "retro",
)
_SLOTS = (ADJECTIVES, SUBJECTS, ACTIONS, PLACES, STYLES)


@dataclass(frozen=True)
class SynthSpec:
    n_samples: int = 1000
    n_clusters: int = 20
    dims: tuple = (256, 64, 64)
    cluster_spread: float = 0.1
    quality_noise: float = 1.0
    mos_range: tuple = (0.0, 100.0)
    seed: int = 0
    # per-sample distortion severity multiplies the isotropic noise scale
    severity_range: tuple = (0.25, 1.75)
    centroid_scale: float = 1.0

    def __post_init__(self):
        if self.n_clusters < 2:
            raise ValueError(f"n_clusters must be >= 2, got {self.n_clusters}")
        if self.n_samples < self.n_clusters:
            raise ValueError(f"n_samples ({self.n_samples}) must be >= n_clusters ({self.n_clusters})")
        if not self.mos_range[0] < self.mos_range[1]:
            raise ValueError(f"mos_range low must be < high, got {self.mos_range}")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive extents, got {self.dims}")
        if self.cluster_spread < 0 or self.quality_noise < 0:
            raise ValueError("cluster_spread and quality_noise must be non-negative")
        lo, hi = self.severity_range
        if not 0 <= lo <= hi:
            raise ValueError(f"severity_range must satisfy 0 <= low <= high, got {self.severity_range}")


@dataclass(frozen=True, eq=False)
class SynthTruth:
    templates: tuple
    cluster_of: dict
    visual_centroids: np.ndarray
    align_centroids: np.ndarray
    deviation_scale: float
    deviation: dict = field(default_factory=dict)


def deviation_to_mos(deviation, deviation_scale: float, mos_range) -> np.ndarray:
    """Affine map of ``-deviation``: 0 maps to the top of the range, ``deviation_scale`` to the bottom."""
    low, high = mos_range
    if deviation_scale <= 0:
        return np.full_like(np.asarray(deviation, dtype=float), high)
    return high - (high - low) * np.asarray(deviation, dtype=float) / deviation_scale


def _templates(rng: Rng, n: int) -> list:
    seen, out = set(), []
    while len(out) < n:
        words = tuple(slot[int(rng.integers(len(slot)))] for slot in _SLOTS)
        if words not in seen:
            seen.add(words)
            out.append(" ".join(words))
    return out


def generate_synthetic(spec: SynthSpec) -> Dataset:
    d_p, d_v, d_s = spec.dims
    root = Rng(spec.seed)
    templates = _templates(root.child(1), spec.n_clusters)
    proto = root.child(2)
    mu_v = proto.normal(0.0, spec.centroid_scale, size=(spec.n_clusters, d_v))
    mu_s = proto.normal(0.0, spec.centroid_scale, size=(spec.n_clusters, d_s))

    members = root.child(3)
    cluster = np.concatenate([
        np.arange(spec.n_clusters),
        members.integers(0, spec.n_clusters, size=spec.n_samples - spec.n_clusters),
    ])
    noise = root.child(4)
    severity = noise.uniform(*spec.severity_range, size=spec.n_samples)
    delta_v = noise.normal(0.0, 1.0, size=(spec.n_samples, d_v)) * (spec.cluster_spread * severity)[:, None]
    delta_s = noise.normal(0.0, 1.0, size=(spec.n_samples, d_s)) * (spec.cluster_spread * severity)[:, None]
    deviation = np.linalg.norm(delta_v, axis=1) + np.linalg.norm(delta_s, axis=1)
    dev_scale = float(deviation.max())
    mos = deviation_to_mos(deviation, dev_scale, spec.mos_range)
    mos = mos + root.child(5).normal(0.0, 1.0, size=spec.n_samples) * spec.quality_noise

    samples, cluster_of, dev = [], {}, {}
    for i in range(spec.n_samples):
        c = int(cluster[i])
        sid = f"c{c:02d}_{i:05d}"
        prompt = f"{templates[c]} take{i}"
        samples.append(Sample(
            id=sid,
            prompt=prompt,
            prompt_emb=deterministic_embed(prompt, d_p),
            visual_feat=mu_v[c] + delta_v[i],
            align_feat=mu_s[c] + delta_s[i],
            mos=float(mos[i]),
        ))
        cluster_of[sid] = c
        dev[sid] = float(deviation[i])
    truth = SynthTruth(
        templates=tuple(templates),
        cluster_of=cluster_of,
        visual_centroids=mu_v,
        align_centroids=mu_s,
        deviation_scale=dev_scale,
        deviation=dev,
    )
    return Dataset(dims=(d_p, d_v, d_s), samples=samples, truth=truth)
