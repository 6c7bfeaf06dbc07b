"""Training-time augmentation: joint horizontal flips and RGB channel swaps.

The depth target is only ever touched by the geometric transform; the
photometric channel permutation applies to the image alone. Every draw
comes from the caller-supplied generator so data workers stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RgbImage, TargetMap, horizontal_flip

__all__ = ["AugmentPolicy", "NON_IDENTITY_PERMUTATIONS", "apply_policy"]

# the 5 non-identity permutations of (R, G, B), drawn uniformly
NON_IDENTITY_PERMUTATIONS: tuple[tuple[int, int, int], ...] = (
    (0, 2, 1),
    (1, 0, 2),
    (1, 2, 0),
    (2, 0, 1),
    (2, 1, 0),
)


@dataclass(frozen=True)
class AugmentPolicy:
    flip_probability: float = 0.5
    channel_permutation_probability: float = 0.25
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("flip_probability", "channel_permutation_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


def apply_policy(
    img: RgbImage,
    tgt: TargetMap,
    policy: AugmentPolicy,
    rng: np.random.Generator,
) -> tuple[RgbImage, TargetMap]:
    """Apply one draw of the policy to an aligned image/target pair.

    With probability flip_probability both are mirrored together;
    independently, with probability channel_permutation_probability the
    image channels are shuffled by a uniformly drawn non-identity
    permutation. Deterministic given the generator state.
    """
    do_flip = rng.random() < policy.flip_probability
    do_perm = rng.random() < policy.channel_permutation_probability
    if do_flip:
        img = horizontal_flip(img)
        tgt = horizontal_flip(tgt)
    if do_perm:
        perm = NON_IDENTITY_PERMUTATIONS[int(rng.integers(len(NON_IDENTITY_PERMUTATIONS)))]
        img = RgbImage(img.values[:, :, perm].copy())
    return img, tgt
