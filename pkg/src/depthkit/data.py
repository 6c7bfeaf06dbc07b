"""Dataset ingestion, preprocessing, and the procedural toy dataset.

On-disk layout of a dataset root:

    <root>/rgb/<id>.png      8-bit RGB
    <root>/depth/<id>.png    16-bit grayscale, raw * depth_scale = meters
    <root>/profile.cfg       plain key=value dataset profile
    <root>/train.txt         newline-delimited training ids
    <root>/test.txt          newline-delimited test ids

Raw depth value 0 marks a missing pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import core
from .augment import AugmentPolicy, apply_policy
from .core import CropRect, DepthMap, RgbImage, TargetMap

__all__ = [
    "DatasetProfile",
    "Sample",
    "DepthDataset",
    "load_profile",
    "save_profile",
    "nyu_profile",
    "kitti_profile",
    "load_rgb_png",
    "save_rgb_png",
    "load_depth_png",
    "save_depth_png",
    "read_manifest",
    "write_manifest",
    "load_sample",
    "inpaint_depth",
    "prepare_training_pair",
    "make_toy_dataset",
    "batch_indices",
]

# Eigen et al. center crop for 480x640 indoor evaluation (rows 45:471, cols 41:601)
NYU_EVAL_CROP = CropRect(top=45, left=41, height=426, width=560)


@dataclass(frozen=True)
class DatasetProfile:
    """Static facts about a dataset needed by loading, training and eval."""

    name: str
    rgb_dir: str = "rgb"
    depth_dir: str = "depth"
    depth_scale: float = 0.001
    d_min: float = 0.4
    d_max: float = 10.0
    m: float = 10.0
    train_resize: tuple[int, int] | None = None
    eval_crop: CropRect | None = None
    sparse: bool = False

    def __post_init__(self):
        if self.depth_scale <= 0.0:
            raise ValueError("depth_scale must be positive")
        if not 0.0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if self.m != self.d_max:
            raise ValueError("m must equal the profile's maximum depth d_max")


def nyu_profile() -> DatasetProfile:
    """Indoor 480x640 profile: millimeter PNGs, 0.4-10 m, Eigen eval crop."""
    return DatasetProfile(
        name="nyu", depth_scale=0.001, d_min=0.4, d_max=10.0, m=10.0,
        eval_crop=NYU_EVAL_CROP,
    )


def kitti_profile() -> DatasetProfile:
    """Outdoor profile: 1/256 m PNGs, 1-80 m, sparse depth, resize to 384x1280."""
    return DatasetProfile(
        name="kitti", depth_scale=1.0 / 256.0, d_min=1.0, d_max=80.0, m=80.0,
        train_resize=(384, 1280), sparse=True,
    )


@dataclass(frozen=True)
class Sample:
    image: RgbImage
    depth: DepthMap
    id: str


# ---------------------------------------------------------------------------
# PNG io

def load_rgb_png(path) -> RgbImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return RgbImage(arr / 255.0)


def save_rgb_png(path, img: RgbImage) -> None:
    arr = np.clip(np.rint(img.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_depth_png(path, depth_scale: float) -> DepthMap:
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.int64)
    if arr.ndim != 2:
        raise ValueError(f"{path}: depth PNG must be single channel")
    valid = arr > 0
    return DepthMap(arr * depth_scale, valid)


def save_depth_png(path, d: DepthMap, depth_scale: float) -> None:
    """Write depth as 16-bit PNG, raw = meters / depth_scale; invalid -> 0."""
    raw = np.rint(d.values / depth_scale)
    raw = np.where(d.valid_mask, raw, 0)
    if raw.max() > 65535:
        raise ValueError("depth exceeds 16-bit range at this scale")
    Image.fromarray(raw.astype(np.uint16)).save(path)


# ---------------------------------------------------------------------------
# profile / manifest files

_PROFILE_FIELDS = {
    "name", "rgb_dir", "depth_dir", "depth_scale", "d_min", "d_max", "m",
    "train_resize", "eval_crop", "sparse",
}


def save_profile(path, profile: DatasetProfile) -> None:
    lines = [
        f"name={profile.name}",
        f"rgb_dir={profile.rgb_dir}",
        f"depth_dir={profile.depth_dir}",
        f"depth_scale={profile.depth_scale!r}",
        f"d_min={profile.d_min!r}",
        f"d_max={profile.d_max!r}",
        f"m={profile.m!r}",
    ]
    if profile.train_resize is not None:
        lines.append(f"train_resize={profile.train_resize[0]}x{profile.train_resize[1]}")
    if profile.eval_crop is not None:
        c = profile.eval_crop
        lines.append(f"eval_crop={c.top},{c.left},{c.height},{c.width}")
    lines.append(f"sparse={'true' if profile.sparse else 'false'}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_profile(path) -> DatasetProfile:
    kwargs: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PROFILE_FIELDS:
            raise ValueError(f"{path}:{lineno}: unknown profile key {key!r}")
        kwargs[key] = value
    for numeric in ("depth_scale", "d_min", "d_max", "m"):
        if numeric in kwargs:
            kwargs[numeric] = float(kwargs[numeric])
    if "sparse" in kwargs:
        kwargs["sparse"] = kwargs["sparse"].lower() in ("1", "true", "yes")
    if kwargs.get("train_resize"):
        h, w = kwargs["train_resize"].lower().split("x")
        kwargs["train_resize"] = (int(h), int(w))
    elif "train_resize" in kwargs:
        kwargs["train_resize"] = None
    if kwargs.get("eval_crop"):
        t, l, h, w = (int(v) for v in kwargs["eval_crop"].split(","))
        kwargs["eval_crop"] = CropRect(t, l, h, w)
    elif "eval_crop" in kwargs:
        kwargs["eval_crop"] = None
    return DatasetProfile(**kwargs)


def read_manifest(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def write_manifest(path, ids) -> None:
    Path(path).write_text("\n".join(ids) + "\n")


# ---------------------------------------------------------------------------
# loading and preprocessing

def load_sample(root, profile: DatasetProfile, sample_id: str) -> Sample:
    """Read one image/depth pair; raw depth 0 becomes an invalid pixel."""
    root = Path(root)
    rgb_path = root / profile.rgb_dir / f"{sample_id}.png"
    depth_path = root / profile.depth_dir / f"{sample_id}.png"
    for p in (rgb_path, depth_path):
        if not p.exists():
            raise FileNotFoundError(p)
    image = load_rgb_png(rgb_path)
    depth = load_depth_png(depth_path, profile.depth_scale)
    if (image.height, image.width) != (depth.height, depth.width):
        raise ValueError(
            f"{sample_id}: image {image.height}x{image.width} does not match "
            f"depth {depth.height}x{depth.width}"
        )
    return Sample(image=image, depth=depth, id=sample_id)


def _shift_sums(values: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum of valid 4-neighbor values and their count, per pixel."""
    v = np.where(valid, values, 0.0)
    total = np.zeros_like(values)
    count = np.zeros(values.shape)
    for shift, axis in ((1, 0), (-1, 0), (1, 1), (-1, 1)):
        total += np.roll(v, shift, axis=axis) * _roll_mask(valid, shift, axis)
        count += _roll_mask(valid, shift, axis)
    return total, count


def _roll_mask(valid: np.ndarray, shift: int, axis: int) -> np.ndarray:
    rolled = np.roll(valid, shift, axis=axis).astype(np.float64)
    # np.roll wraps around; zero out the wrapped edge
    if axis == 0:
        if shift == 1:
            rolled[0, :] = 0.0
        else:
            rolled[-1, :] = 0.0
    else:
        if shift == 1:
            rolled[:, 0] = 0.0
        else:
            rolled[:, -1] = 0.0
    return rolled


def inpaint_depth(d: DepthMap) -> DepthMap:
    """Diffusion fill: grow valid data inward until every pixel is covered.

    Each pass fills every invalid pixel adjacent to valid data with the
    mean of its valid 4-neighbors; originally valid pixels never change.
    """
    if not d.valid_mask.any():
        raise ValueError("cannot inpaint an all-invalid depth map")
    if d.valid_mask.all():
        return DepthMap(d.values.copy(), d.valid_mask.copy())
    values = d.values.copy()
    valid = d.valid_mask.copy()
    while not valid.all():
        total, count = _shift_sums(values, valid)
        frontier = ~valid & (count > 0)
        values[frontier] = total[frontier] / count[frontier]
        valid |= frontier
    return DepthMap(values, valid)


def prepare_training_pair(
    sample: Sample,
    profile: DatasetProfile,
    policy: AugmentPolicy | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[RgbImage, TargetMap]:
    """Build one (image, reciprocal target) training pair.

    Dense profiles inpaint missing depth; sparse profiles propagate the
    mask instead (nearest-neighbor resize keeps sparsity honest). Depth is
    clipped to [d_min, d_max], downsampled to half the (optionally resized)
    input resolution, and transformed to target space before the joint
    augmentation draw.
    """
    image = sample.image
    depth = sample.depth
    if profile.train_resize is not None:
        rh, rw = profile.train_resize
        image = core.resize_bilinear(image, rh, rw)
    if profile.sparse:
        depth = core.clip_depth(depth, profile.d_min, profile.d_max)
        depth = core.resize_nearest(depth, image.height // 2, image.width // 2)
    else:
        depth = inpaint_depth(depth)
        depth = core.clip_depth(depth, profile.d_min, profile.d_max)
        depth = core.resize_bilinear(depth, image.height // 2, image.width // 2)
    target = core.reciprocal_transform(depth, profile.m)
    if policy is not None:
        if rng is None:
            rng = np.random.default_rng(policy.rng_seed)
        image, target = apply_policy(image, target, policy, rng)
    return image, target


# ---------------------------------------------------------------------------
# procedural toy dataset

def make_toy_dataset(
    n: int,
    size: tuple[int, int],
    seed: int,
    out_dir,
    d_min: float = 0.4,
    d_max: float = 10.0,
    rects: tuple[int, int] = (3, 8),
) -> Path:
    """Generate n flat-background-plus-rectangles scenes with exact depth.

    Every region gets a random albedo color and a constant depth; rectangle
    depths are always nearer than the background. Depths are quantized to
    millimeters before writing so files round-trip bit-exactly, and a fixed
    seed reproduces byte-identical output.
    """
    h, w = size
    if h % 32 or w % 32:
        raise ValueError("toy dataset size must be divisible by 32")
    if n < 1:
        raise ValueError("need at least one sample")
    out_dir = Path(out_dir)
    (out_dir / "rgb").mkdir(parents=True, exist_ok=True)
    (out_dir / "depth").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for index in range(n):
        sample_id = f"{index:04d}"
        ids.append(sample_id)
        bg_depth = rng.uniform(0.7 * d_max, d_max)
        depth = np.full((h, w), bg_depth)
        color = np.empty((h, w, 3))
        color[:] = rng.integers(30, 226, size=3) / 255.0
        n_rects = int(rng.integers(rects[0], rects[1] + 1))
        for _ in range(n_rects):
            # even-aligned geometry and adjacent-depth ratios < 2 keep the
            # scene exactly representable through the half-resolution
            # target / 2x-upsample round trip
            rh = 2 * int(rng.integers(h // 16, h // 4 + 1))
            rw = 2 * int(rng.integers(w // 16, w // 4 + 1))
            top = 2 * int(rng.integers(0, (h - rh) // 2 + 1))
            left = 2 * int(rng.integers(0, (w - rw) // 2 + 1))
            rect_depth = rng.uniform(max(d_min, 0.52 * d_max), 0.65 * d_max)
            depth[top : top + rh, left : left + rw] = rect_depth
            color[top : top + rh, left : left + rw] = rng.integers(30, 226, size=3) / 255.0
        depth = np.round(depth * 1000.0) / 1000.0  # quantize to mm
        save_rgb_png(out_dir / "rgb" / f"{sample_id}.png", RgbImage(color))
        save_depth_png(out_dir / "depth" / f"{sample_id}.png", DepthMap(depth), 0.001)
    profile = DatasetProfile(
        name="toy", depth_scale=0.001, d_min=d_min, d_max=d_max, m=d_max
    )
    save_profile(out_dir / "profile.cfg", profile)
    write_manifest(out_dir / "train.txt", ids)
    write_manifest(out_dir / "test.txt", ids)
    return out_dir


# ---------------------------------------------------------------------------
# dataset handle and deterministic batching

class DepthDataset:
    """A dataset root directory plus its profile and manifests."""

    def __init__(self, root):
        self.root = Path(root)
        self.profile = load_profile(self.root / "profile.cfg")
        self.train_ids = read_manifest(self.root / "train.txt")
        test_path = self.root / "test.txt"
        self.test_ids = read_manifest(test_path) if test_path.exists() else list(self.train_ids)

    def load(self, sample_id: str) -> Sample:
        return load_sample(self.root, self.profile, sample_id)

    def __len__(self) -> int:
        return len(self.train_ids)


def batch_indices(seed: int, n_samples: int, batch_size: int, iteration: int) -> list[int]:
    """Indices for one training batch under epoch-wise uniform shuffling.

    Pure function of (seed, iteration): sample s of the global stream maps
    to position s % n of the permutation for epoch s // n, so training can
    resume mid-stream bit-compatibly.
    """
    if n_samples < 1 or batch_size < 1:
        raise ValueError("need positive sample count and batch size")
    out = []
    perm_cache: dict[int, np.ndarray] = {}
    start = iteration * batch_size
    for s in range(start, start + batch_size):
        epoch = s // n_samples
        if epoch not in perm_cache:
            perm_cache[epoch] = np.random.default_rng((seed, 1, epoch)).permutation(n_samples)
        out.append(int(perm_cache[epoch][s % n_samples]))
    return out
