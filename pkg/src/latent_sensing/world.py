"""Points-of-interest, synthetic detector features and the shared belief map.

Three object classes with the ambiguity structure below. The x-modality
(camera) only sees colour, the w-modality (LiDAR) only sees shape:

    class 1  green round   x: unique   w: same as 2
    class 2  red   round   x: same as 3  w: same as 1
    class 3  red   edgy    x: same as 2  w: unique

Each PoI carries a latent posterior in the map. An observation replaces it
with the uni-modal encoding, or, when the other modality has already looked
at the PoI, with a joint encoding where the missing modality's features are
generated by decoding the former posterior mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .jmvae import JmvaeModel, check_modality, decode, encode_joint, encode_uni, other_modality
from .nnkit import DiagGaussian, RngStream

CLASSES = (1, 2, 3)
COLOR = {1: "green", 2: "red", 3: "red"}
SHAPE = {1: "round", 2: "round", 3: "edgy"}

PROTOTYPES = {
    "x": {
        "green": np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.float64),
        "red": np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=np.float64),
    },
    "w": {
        "round": np.array([1, 1, 0, 0, 1, 1, 0, 0], dtype=np.float64),
        "edgy": np.array([0, 0, 1, 1, 0, 0, 1, 1], dtype=np.float64),
    },
}


@dataclass
class WorldConfig:
    n_poi: int = 3
    d_feat: int = 8
    noise_std: float = 0.05
    delta_threshold: float = 0.01
    p_other: float = 0.5
    max_steps: int | None = None  # defaults to 2 * n_poi

    def __post_init__(self):
        if self.n_poi < 1:
            raise ValueError("n_poi must be >= 1")
        if self.d_feat != 8:
            raise ValueError("the synthetic feature prototypes are 8-dimensional")
        if not 0.0 <= self.p_other <= 1.0:
            raise ValueError("p_other must lie in [0, 1]")
        if self.delta_threshold < 0 or self.noise_std < 0:
            raise ValueError("delta_threshold and noise_std must be non-negative")
        if self.max_steps is None:
            self.max_steps = 2 * self.n_poi
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


def prototype(poi_class: int, modality: str) -> np.ndarray:
    if poi_class not in CLASSES:
        raise ValueError(f"unknown PoI class {poi_class}")
    key = COLOR[poi_class] if check_modality(modality) == "x" else SHAPE[poi_class]
    return PROTOTYPES[modality][key]


def gen_features(poi_class: int, modality: str, noise_std: float, rng: RngStream,
                 size: int | None = None) -> np.ndarray:
    """Prototype plus Gaussian noise, clipped to [0, 1]. ``size`` draws a batch."""
    proto = prototype(poi_class, modality)
    shape = proto.shape if size is None else (size,) + proto.shape
    noise = rng.normal(shape) * noise_std
    return np.clip(proto + noise, 0.0, 1.0)


def gen_dataset(n: int, noise_std: float, rng: RngStream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``n`` labelled (x, w) pairs with uniformly drawn classes."""
    labels = rng.integers(1, 4, size=n)
    protos_x = np.stack([prototype(int(c), "x") for c in labels]) if n else np.zeros((0, 8))
    protos_w = np.stack([prototype(int(c), "w") for c in labels]) if n else np.zeros((0, 8))
    xs = np.clip(protos_x + noise_std * rng.normal(protos_x.shape), 0.0, 1.0)
    ws = np.clip(protos_w + noise_std * rng.normal(protos_w.shape), 0.0, 1.0)
    return labels, xs, ws


@dataclass(frozen=True)
class Environment:
    poi_classes: tuple[int, ...]

    def __post_init__(self):
        if len(self.poi_classes) < 1:
            raise ValueError("an environment needs at least one PoI")
        if any(c not in CLASSES for c in self.poi_classes):
            raise ValueError(f"invalid PoI classes {self.poi_classes}")

    @property
    def n_poi(self) -> int:
        return len(self.poi_classes)


def sample_environment(n_poi: int, rng: RngStream) -> Environment:
    if n_poi < 1:
        raise ValueError("n_poi must be >= 1")
    return Environment(tuple(int(c) for c in rng.integers(1, 4, size=n_poi)))


@dataclass(frozen=True)
class Belief:
    posterior: DiagGaussian
    observed_x: bool = False
    observed_w: bool = False

    @classmethod
    def prior(cls, d_z: int) -> "Belief":
        return cls(DiagGaussian.standard(d_z))

    def observed(self, modality: str) -> bool:
        return self.observed_x if check_modality(modality) == "x" else self.observed_w


@dataclass(frozen=True)
class WorldMap:
    beliefs: tuple[Belief, ...]

    @classmethod
    def fresh(cls, n_poi: int, d_z: int) -> "WorldMap":
        return cls(tuple(Belief.prior(d_z) for _ in range(n_poi)))

    def __len__(self) -> int:
        return len(self.beliefs)

    def with_belief(self, n: int, belief: Belief) -> "WorldMap":
        beliefs = list(self.beliefs)
        beliefs[n] = belief
        return WorldMap(tuple(beliefs))

    def total_information(self) -> float:
        return sum(information(b) for b in self.beliefs)


def information(b: Belief | DiagGaussian) -> float:
    """Inverse Euclidean norm of the posterior's standard deviations."""
    g = b.posterior if isinstance(b, Belief) else b
    return float(1.0 / np.linalg.norm(g.sigma))


def information_batch(sigma: np.ndarray) -> np.ndarray:
    return 1.0 / np.linalg.norm(sigma, axis=-1)


def fuse_posterior(model: JmvaeModel, former: DiagGaussian, feat, modality: str) -> DiagGaussian:
    """Joint encoding of ``feat`` with the other modality regenerated from ``former.mu``.

    Batch-agnostic: ``former.mu`` and ``feat`` may carry a leading batch axis.
    """
    missing = decode(model, other_modality(modality), former.mu)
    if modality == "x":
        return encode_joint(model, feat, missing)
    return encode_joint(model, missing, feat)


def fuse(model: JmvaeModel, former: Belief, feat, modality: str) -> DiagGaussian:
    check_modality(modality)
    if not former.observed(other_modality(modality)) or former.observed(modality):
        raise ValueError("fusion needs a belief observed by exactly the other modality")
    return fuse_posterior(model, former.posterior, feat, modality)


def updated_posterior(model: JmvaeModel, former: Belief, feat, modality: str) -> DiagGaussian:
    """Posterior after an observation of ``modality``, given the flags of ``former``.

    Once the other modality has contributed, every further observation is
    fused; otherwise the uni-modal encoding overwrites the belief.
    """
    if former.observed(other_modality(modality)):
        return fuse_posterior(model, former.posterior, feat, modality)
    return encode_uni(model, modality, feat)


def observe(env: Environment, wmap: WorldMap, n: int, modality: str, model: JmvaeModel,
            rng: RngStream, noise_std: float = 0.05) -> tuple[float, WorldMap]:
    """Observe PoI ``n`` with ``modality``; returns the information gain and the new map."""
    check_modality(modality)
    if not 0 <= n < len(wmap):
        raise IndexError(f"PoI index {n} out of range for {len(wmap)} PoIs")
    feat = gen_features(env.poi_classes[n], modality, noise_std, rng)
    return observe_feature(wmap, n, feat, modality, model)


def observe_feature(wmap: WorldMap, n: int, feat, modality: str,
                    model: JmvaeModel) -> tuple[float, WorldMap]:
    """Like ``observe`` but with an already generated feature vector."""
    old = wmap.beliefs[n]
    post = updated_posterior(model, old, feat, modality)
    flag = "observed_x" if modality == "x" else "observed_w"
    new = replace(old, posterior=post, **{flag: True})
    return information(new) - information(old), wmap.with_belief(n, new)


def state_vector(wmap: WorldMap) -> np.ndarray:
    """Per PoI, interleaved (mu_1, sigma_1, mu_2, sigma_2, ...), PoIs in index order."""
    blocks = [np.stack([b.posterior.mu, b.posterior.sigma], axis=-1).ravel() for b in wmap.beliefs]
    return np.concatenate(blocks)


def state_space_size(n_poi: int, n_mod: int, n_enc: int, limit: int = 2**63 - 1) -> int:
    """Count of discrete map states: n_poi! * n_enc ** (n_poi * n_mod)."""
    if min(n_poi, n_mod, n_enc) < 1:
        raise ValueError("all arguments must be >= 1")
    if math.lgamma(n_poi + 1) + n_poi * n_mod * math.log(n_enc) > math.log(limit) + 1e-9:
        raise OverflowError(f"state-space size exceeds {limit}")
    value = math.factorial(n_poi) * n_enc ** (n_poi * n_mod)
    if value > limit:
        raise OverflowError(f"state-space size exceeds {limit}")
    return value
