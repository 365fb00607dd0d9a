"""Seeded paired image/text vectors with latent classes and caption noise.

Each class has one unit-length prototype per modality. A sample's image vector is its
class prototype plus isotropic noise. Its text vector is the text
prototype of the same class plus noise that shares an instance-level
component with the image noise (a fixed orthonormal projection), so a
caption identifies its own image and not just the class. With probability
``swap_prob`` the caption is instead drawn from a different class with
independent noise: it carries no information about the image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import InvalidSpec

_PROTOTYPE_STREAM = 0
_SPLIT_STREAMS = {"train": 1, "eval": 2}


@dataclass(frozen=True)
class DatasetSpec:
    K: int = 10
    n: int = 2000
    image_dim: int = 64
    text_dim: int = 48
    within_class_sigma: float = 0.1
    swap_prob: float = 0.0
    seed: int = 0
    # fraction of the caption noise direction tied to the image noise
    text_instance_corr: float = 1.0

    def validate(self):
        if self.K < 2:
            raise InvalidSpec("K must be >= 2")
        if self.n < self.K:
            raise InvalidSpec("n must be >= K")
        if min(self.image_dim, self.text_dim) < 1:
            raise InvalidSpec("input dims must be >= 1")
        if self.text_dim > self.image_dim:
            raise InvalidSpec("text_dim must not exceed image_dim")
        if self.within_class_sigma < 0:
            raise InvalidSpec("within_class_sigma must be >= 0")
        if not 0 <= self.swap_prob < 1:
            raise InvalidSpec("swap_prob must lie in [0, 1)")
        if not 0 <= self.text_instance_corr <= 1:
            raise InvalidSpec("text_instance_corr must lie in [0, 1]")


@dataclass(frozen=True)
class SyntheticPair:
    index: int
    image_raw: np.ndarray
    text_raw: np.ndarray
    class_id: int
    caption_noisy: bool
    noisy_source_class: int | None


@dataclass(frozen=True)
class ViewConfig:
    noise_sigma: float = 0.1
    coordinate_drop_prob: float = 0.1

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be >= 0")
        if not 0 <= self.coordinate_drop_prob <= 0.5:
            raise InvalidSpec("coordinate_drop_prob must lie in [0, 0.5]")


@dataclass(frozen=True)
class Prototypes:
    image: np.ndarray  # K x image_dim
    text: np.ndarray  # K x text_dim
    coupling: np.ndarray  # text_dim x image_dim, orthonormal rows


def make_prototypes(spec: DatasetSpec) -> Prototypes:
    rng = np.random.default_rng([spec.seed, _PROTOTYPE_STREAM])
    image = rng.standard_normal((spec.K, spec.image_dim))
    text = rng.standard_normal((spec.K, spec.text_dim))
    image /= np.linalg.norm(image, axis=1, keepdims=True)
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    q, _ = np.linalg.qr(rng.standard_normal((spec.image_dim, spec.text_dim)))
    return Prototypes(image, text, q.T)


@dataclass(frozen=True)
class Dataset:
    """Column-oriented storage; indexing yields :class:`SyntheticPair`."""

    spec: DatasetSpec
    prototypes: Prototypes
    images: np.ndarray
    texts: np.ndarray
    class_ids: np.ndarray
    caption_noisy: np.ndarray
    noisy_source: np.ndarray  # -1 where the caption is clean

    def __len__(self):
        return len(self.class_ids)

    def __getitem__(self, i: int) -> SyntheticPair:
        src = int(self.noisy_source[i])
        return SyntheticPair(
            index=int(i),
            image_raw=self.images[i],
            text_raw=self.texts[i],
            class_id=int(self.class_ids[i]),
            caption_noisy=bool(self.caption_noisy[i]),
            noisy_source_class=None if src < 0 else src,
        )

    def __iter__(self) -> Iterator[SyntheticPair]:
        return (self[i] for i in range(len(self)))

    def export_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for pair in self:
                fh.write(
                    json.dumps(
                        {
                            "index": pair.index,
                            "class_id": pair.class_id,
                            "caption_noisy": pair.caption_noisy,
                            "noisy_source_class": pair.noisy_source_class,
                            "image": pair.image_raw.tolist(),
                            "text": pair.text_raw.tolist(),
                        }
                    )
                    + "\n"
                )


def generate_dataset(spec: DatasetSpec, split: str = "train") -> Dataset:
    """Samples for one split. Prototypes depend only on ``spec.seed``, so
    train and eval splits of the same seed share classes."""
    spec.validate()
    if split not in _SPLIT_STREAMS:
        raise InvalidSpec(f"unknown split {split!r}")
    protos = make_prototypes(spec)
    rng = np.random.default_rng([spec.seed, _SPLIT_STREAMS[split]])
    n, sigma, corr = spec.n, spec.within_class_sigma, spec.text_instance_corr

    class_ids = rng.integers(0, spec.K, size=n)
    image_noise = sigma * rng.standard_normal((n, spec.image_dim))
    own_text_noise = sigma * rng.standard_normal((n, spec.text_dim))
    noisy = rng.random(n) < spec.swap_prob
    # uniform over the other K-1 classes
    offset = rng.integers(1, spec.K, size=n)
    swapped = (class_ids + offset) % spec.K

    images = protos.image[class_ids] + image_noise
    shared = image_noise @ protos.coupling.T
    text_noise = corr * shared + np.sqrt(1.0 - corr**2) * own_text_noise
    text_noise = np.where(noisy[:, None], own_text_noise, text_noise)
    text_class = np.where(noisy, swapped, class_ids)
    texts = protos.text[text_class] + text_noise
    return Dataset(
        spec=spec,
        prototypes=protos,
        images=images,
        texts=texts,
        class_ids=class_ids,
        caption_noisy=noisy,
        noisy_source=np.where(noisy, swapped, -1),
    )


def _augment(x: np.ndarray, cfg: ViewConfig, rng: np.random.Generator) -> np.ndarray:
    out = x + cfg.noise_sigma * rng.standard_normal(x.shape)
    keep = rng.random(x.shape) >= cfg.coordinate_drop_prob
    return out * keep


def augment_views(pair: SyntheticPair, cfg: ViewConfig, seed) -> tuple[np.ndarray, np.ndarray]:
    """Two independently perturbed copies of the image vector; the caption
    is never augmented."""
    rng = np.random.default_rng([int(seed), pair.index])
    return _augment(pair.image_raw, cfg, rng), _augment(pair.image_raw, cfg, rng)


def augment_batch(images: np.ndarray, cfg: ViewConfig, rng: np.random.Generator):
    """Batched counterpart of :func:`augment_views` driven by one generator."""
    return _augment(images, cfg, rng), _augment(images, cfg, rng)


def sample_batches(n: int, batch_size: int, epoch_seed) -> Iterator[np.ndarray]:
    """Shuffled index batches; the trailing partial batch is dropped."""
    if not 1 <= batch_size <= n:
        raise InvalidSpec(f"batch_size must lie in [1, {n}]")
    order = np.random.default_rng(epoch_seed).permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start : start + batch_size]
